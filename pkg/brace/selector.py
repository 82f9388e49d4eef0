"""
Selectors: the `{kind: {param: value}}` form config files use to pick an
aggregator, attack, task or architecture.

    attack: none
    attack: {trim: {b: 2}}
    architecture: {sc: {krum: {f: 6}}}
"""

from collections.abc import Mapping

from .document import ConfigError, DocPath, Document


class Selector:
    kind: str
    params: dict[str, Document]
    loc: DocPath

    def __init__(self, document: Document, loc: DocPath = DocPath('$')):
        self.loc = loc

        if isinstance(document, str) and document:
            self.kind = document
            self.params = {}
            return

        if isinstance(document, Mapping) and len(document) == 1:
            kind, params = next(iter(document.items()))
            if not isinstance(kind, str):
                raise ConfigError(loc, f"selector key must be a string, got {kind!r}")

            self.kind = kind
            match params:
                case None:
                    self.params = {}
                case Mapping():
                    self.params = {}
                    for key, value in params.items():
                        if not isinstance(key, str):
                            raise ConfigError(loc[kind], f"parameter names must be strings, got {key!r}")
                        self.params[key] = value
                case _:
                    # `{sc: median}` nests a bare selector as the only parameter
                    self.params = {'': params}
            return

        raise ConfigError(loc, f"expected a kind name or a one-key mapping, got {document!r}")

    def param_loc(self, name: str) -> DocPath:
        return self.loc[self.kind][name]

    def nested(self) -> 'Selector':
        """The selector nested under this one (`{sc: {krum: {...}}}` -> krum)."""
        if '' in self.params:
            return Selector(self.params[''], self.loc[self.kind])
        if len(self.params) != 1:
            raise ConfigError(self.loc[self.kind], "expected exactly one nested selector")
        return Selector(dict(self.params), self.loc[self.kind])

    def __repr__(self) -> str:
        return f"Selector({self.kind!r}, {self.params!r}, loc={self.loc})"
