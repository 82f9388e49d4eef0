import re

from collections.abc import Mapping, Sequence

DocAtom = None | bool | int | float | str
Document = DocAtom | Sequence['Document'] | Mapping[str, 'Document']
"""
Shapes a parsed config file (YAML or JSON) can take.
"""

_PART = re.compile(r'\.([^.\[]+)|\[(\d+)\]')


class DocPath:
    """
    Location of a value inside a config document, e.g. '$.attack.trim.b' or
    '$.seeds[2]'. Config errors carry one so the message points at the field.

    Paths are built by indexing: `DocPath()['seeds'][2]`. A string key renders
    as '.key', an int as '[i]'.
    """

    __slots__ = ('parts',)

    parts: tuple[str | int, ...]

    def __init__(self, text: str = '$'):
        if not text.startswith('$'):
            raise ValueError(f"Invalid document path {text!r}: must start with '$'")

        parts: list[str | int] = []
        pos = 1
        for match in _PART.finditer(text, pos):
            if match.start() != pos:
                break
            key, index = match.groups()
            parts.append(key if index is None else int(index))
            pos = match.end()
        if pos != len(text):
            raise ValueError(f"Invalid document path {text!r}")
        self.parts = tuple(parts)

    @classmethod
    def of(cls, *parts: str | int) -> 'DocPath':
        path = cls()
        path.parts = parts
        return path

    def __getitem__(self, part: str | int) -> 'DocPath':
        return DocPath.of(*self.parts, part)

    def __str__(self) -> str:
        return '$' + ''.join(f'[{p}]' if isinstance(p, int) else f'.{p}' for p in self.parts)

    def __repr__(self) -> str:
        return f"DocPath({str(self)!r})"

    def __eq__(self, other: object) -> bool:
        return isinstance(other, DocPath) and other.parts == self.parts

    def __hash__(self) -> int:
        return hash(self.parts)


class ConfigError(ValueError):
    """A config document is malformed; `loc` names the offending field."""

    def __init__(self, loc: DocPath, message: str):
        super().__init__(f"{loc}: {message}")
        self.loc = loc
        self.reason = message
