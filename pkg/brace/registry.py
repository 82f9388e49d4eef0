from collections.abc import Callable, Iterator, Mapping
from enum import Enum
from functools import partial, wraps
from inspect import Parameter, signature
from types import UnionType
from typing import Union, get_args, get_origin, get_type_hints

from .document import ConfigError, DocPath


class Registry[F: Callable[..., object]]:
    """
    Named functions selectable from config files.

    Functions register under a kind name with the `register` decorator. Their
    keyword-only parameters are the tunables a config may set; `bind` checks
    the config values against those parameters' annotations and returns the
    function with them applied.
    """

    name: str
    _fns: dict[str, F]

    def __init__(self, name: str):
        self.name = name
        self._fns = {}

    def register(self, kind: str) -> Callable[[F], F]:
        if kind in self._fns:
            raise ValueError(f"{self.name} '{kind}' is already registered")

        def decorator(fn: F) -> F:
            self._fns[kind] = fn
            return fn

        return decorator

    def __getitem__(self, kind: str) -> F:
        try:
            return self._fns[kind]
        except KeyError:
            raise ValueError(f"Unrecognized {self.name}: '{kind}' (known: {', '.join(self._fns)})")

    def __contains__(self, kind: object) -> bool:
        return kind in self._fns

    def __iter__(self) -> Iterator[str]:
        return iter(self._fns)

    def tunables(self, kind: str) -> dict[str, Parameter]:
        fn = self[kind]
        return {
            name: parameter
            for name, parameter in signature(fn).parameters.items()
            if parameter.kind is Parameter.KEYWORD_ONLY
        }

    def bind(
        self,
        kind: str,
        params: Mapping[str, object],
        loc: DocPath = DocPath('$'),
        context: Mapping[str, object] | None = None,
    ) -> Callable[..., object]:
        """
        Apply config `params` to the registered function. Values in `context`
        fill tunables the config leaves unset; context keys the function does
        not take are ignored, config keys it does not take are errors.
        """
        if kind not in self._fns:
            raise ConfigError(loc, f"unrecognized {self.name} '{kind}' (known: {', '.join(self._fns)})")

        fn = self._fns[kind]
        tunables = self.tunables(kind)
        hints = get_type_hints(fn)

        bound: dict[str, object] = {}
        for name, value in params.items():
            if name not in tunables:
                raise ConfigError(loc[name], f"unknown parameter for {self.name} '{kind}' (accepts: {', '.join(tunables) or 'nothing'})")
            bound[name] = self.coerce(value, hints.get(name, object), loc[name])

        for name, value in (context or {}).items():
            if name in tunables and name not in bound:
                bound[name] = value

        missing = [
            name for name, parameter in tunables.items()
            if name not in bound and parameter.default is Parameter.empty
        ]
        if missing:
            raise ConfigError(loc, f"{self.name} '{kind}' needs: {', '.join(missing)}")

        return wraps(fn)(partial(fn, **bound))

    @staticmethod
    def _check(value: object, annotation: object) -> object:
        """Return `value`, converted where the config form differs (int for float, str for enum); TypeError if it cannot match."""
        if annotation is object:
            return value

        if isinstance(annotation, type):
            if issubclass(annotation, Enum):
                if isinstance(value, annotation):
                    return value
                try:
                    return annotation(value)
                except ValueError:
                    raise TypeError
            if isinstance(value, bool) and annotation is not bool:
                raise TypeError
            if annotation is float and isinstance(value, int):
                return float(value)
            if not isinstance(value, annotation):
                raise TypeError
            return value

        # Subscripted types
        elif origin := get_origin(annotation):
            # Union or Optional
            if origin in (Union, UnionType):
                for ann in get_args(annotation):
                    try:
                        return Registry._check(value, ann)
                    except TypeError:
                        continue
                raise TypeError

            # list[int], frozenset[int], ...
            if isinstance(value, (list, tuple, set, frozenset)) and isinstance(origin, type):
                (item_ann,) = get_args(annotation)[:1] or (object,)
                return origin(Registry._check(item, item_ann) for item in value)
            if not isinstance(value, origin):
                raise TypeError
            return value

        elif annotation is None:
            if value is not None:
                raise TypeError
            return value

        return value

    @classmethod
    def coerce(cls, value: object, annotation: object, loc: DocPath) -> object:
        try:
            return cls._check(value, annotation)
        except TypeError:
            raise ConfigError(loc, f"expected {getattr(annotation, '__name__', annotation)}, got {value!r}")
