from pathlib import Path

import numpy as np
import pytest

from parasys.field import GridFunction, GridSpec
from parasys.gridio import GridFormatError, read_grid, write_grid
from parasys.symbol import check_parabolicity, diagonal_laplacian_system
from parasys.sysfile import SpecError, dump_system, load_system, parse_system

SYSTEMS = Path(__file__).resolve().parents[1] / "systems"

GOOD = """\
name: mixed
n: 2
b: 1
m: 2
principal:
  - alpha: [2, 0]
    matrix: [[1, 0], [0, -1]]
  - alpha: [0, 2]
    matrix: [[1, 0], [0, -1]]
"""


def test_parse_good_file():
    sys_ = parse_system(GOOD)
    assert (sys_.n, sys_.b, sys_.m) == (2, 1, 2)
    assert np.allclose(sys_.coefficient((2, 0)), np.diag([1.0, -1.0]))


def test_round_trip():
    sys_ = diagonal_laplacian_system([1.0, 2.5, -1.0], 3)
    back = parse_system(dump_system(sys_, "three"))
    assert back.digest() == sys_.digest()


@pytest.mark.parametrize(
    "text, line, field",
    [
        (GOOD.replace("m: 2", "m: two"), 4, "m"),
        (GOOD.replace("[2, 0]", "[1, 0]"), 6, "principal.alpha"),
        (GOOD.replace("[[1, 0], [0, -1]]\n  - alpha: [0, 2]", "[[1, 0]]\n  - alpha: [0, 2]"), 7, "principal[0].matrix"),
        (GOOD + "colour: red\n", 10, "colour"),
        (GOOD.replace("b: 1\n", ""), 1, "b"),
    ],
)
def test_parse_errors_carry_line_and_field(text, line, field):
    with pytest.raises(SpecError) as exc:
        parse_system(text)
    assert exc.value.line == line
    assert exc.value.field == field
    assert f"line {line}" in str(exc.value)


def test_yaml_syntax_error():
    with pytest.raises(SpecError) as exc:
        parse_system("n: [1, 2\nb: 1\n")
    assert exc.value.line > 0


@pytest.mark.parametrize("name, parabolic", [("heat2d.yaml", True), ("backward_pair.yaml", False),
                                             ("mixed_pair.yaml", False)])
def test_shipped_systems(name, parabolic):
    assert check_parabolicity(load_system(SYSTEMS / name)).is_parabolic == parabolic


@pytest.mark.parametrize("suffix", [".grid", ".csv"])
def test_grid_round_trip(tmp_path, suffix):
    spec = GridSpec.cube(2, -1.0, 1.0, 0.5, 6, 5, periodic_space=False, t_start=0.1)
    u = GridFunction.sample(spec, lambda t, xs: [np.sin(xs[0]) * t, xs[1] ** 2 + t])
    path = tmp_path / f"u{suffix}"
    write_grid(u, path, {"label": "test"})
    v, meta = read_grid(path)
    assert v.spec == spec
    assert np.array_equal(v.values, u.values)
    assert meta.get("label") == "test"


def test_bad_grid_file(tmp_path):
    p = tmp_path / "junk.grid"
    p.write_bytes(b"NOTAGRID" + b"\0" * 20)
    with pytest.raises(GridFormatError):
        read_grid(p)
