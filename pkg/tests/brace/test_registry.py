from enum import StrEnum

import pytest

from brace.document import ConfigError, DocPath
from brace.registry import Registry


class Color(StrEnum):
    RED = 'red'
    BLUE = 'blue'


shapes: Registry = Registry('shape')

@shapes.register('square')
def square(x: float, *, side: float, color: Color = Color.RED) -> tuple:
    return x, side, color

@shapes.register('polygon')
def polygon(x: float, *, corners: frozenset[int], label: str | None = None) -> tuple:
    return x, corners, label


def test_register():
    assert 'square' in shapes
    assert list(shapes) == ['square', 'polygon']
    assert shapes['square'] is square
    assert list(shapes.tunables('square')) == ['side', 'color']

def test_register_err():
    with pytest.raises(ValueError, match="already registered"):
        shapes.register('square')
    with pytest.raises(ValueError, match="Unrecognized shape"):
        shapes['circle']

def test_bind():
    bound = shapes.bind('square', {'side': 2, 'color': 'blue'})
    assert bound(1.0) == (1.0, 2.0, Color.BLUE)
    assert isinstance(bound(1.0)[1], float)
    assert bound.__name__ == 'square'

def test_bind_context():
    bound = shapes.bind('square', {}, context={'side': 3.0, 'unused': 1})
    assert bound(0.0) == (0.0, 3.0, Color.RED)
    # Config values win over context
    assert shapes.bind('square', {'side': 1.0}, context={'side': 3.0})(0.0)[1] == 1.0

def test_bind_collections():
    bound = shapes.bind('polygon', {'corners': [1, 2, 2]})
    assert bound(0.0) == (0.0, frozenset({1, 2}), None)
    assert shapes.bind('polygon', {'corners': [], 'label': 'x'})(0.0)[2] == 'x'

def test_bind_err():
    loc = DocPath('$.shape')
    with pytest.raises(ConfigError, match="unrecognized shape 'circle'"):
        shapes.bind('circle', {}, loc)
    with pytest.raises(ConfigError, match="needs: side"):
        shapes.bind('square', {}, loc)

    with pytest.raises(ConfigError) as info:
        shapes.bind('square', {'side': 1, 'sides': 4}, loc)
    assert info.value.loc == DocPath('$.shape.sides')

    with pytest.raises(ConfigError) as info:
        shapes.bind('square', {'side': 'wide'}, loc)
    assert info.value.loc == DocPath('$.shape.side')

def test_coerce():
    loc = DocPath()
    assert Registry.coerce(3, float, loc) == 3.0
    assert Registry.coerce(None, int | None, loc) is None
    assert Registry.coerce([1, 2], tuple[int, ...], loc) == (1, 2)
    assert Registry.coerce('red', Color, loc) is Color.RED

    # bool is not an int in config files
    with pytest.raises(ConfigError):
        Registry.coerce(True, int, loc)
    with pytest.raises(ConfigError):
        Registry.coerce('green', Color, loc)
    with pytest.raises(ConfigError):
        Registry.coerce([1, 'x'], frozenset[int], loc)
    with pytest.raises(ConfigError):
        Registry.coerce(1.5, int, loc)
