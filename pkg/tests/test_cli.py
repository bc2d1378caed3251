import csv
from pathlib import Path

import numpy as np
import pytest
import yaml

from parasys.cli import EXIT_FAIL, EXIT_OK, EXIT_USAGE, run
from parasys.field import GridFunction, GridSpec
from parasys.gridio import write_grid

SYSTEMS = Path(__file__).resolve().parents[1] / "systems"


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_check_heat(tmp_path, capsys):
    assert run(["check", str(SYSTEMS / "heat2d.yaml"), "--out", str(tmp_path)]) == EXIT_OK
    rows = {r["check"]: r for r in read_rows(tmp_path / "check.csv")}
    assert rows["parabolicity"]["result"] == "1"
    assert float(rows["parabolicity"]["value"]) == pytest.approx(1.0, abs=1e-9)
    assert "parabolic: yes" in capsys.readouterr().out


def test_manifest_contents(tmp_path):
    run(["check", str(SYSTEMS / "backward_pair.yaml"), "--out", str(tmp_path), "--seed", "5", "--threads", "2"])
    doc = yaml.safe_load((tmp_path / "manifest.yaml").read_text())
    assert doc["command"] == "check"
    assert doc["seed"] == 5 and doc["threads"] == 2
    assert doc["outputs"] == ["check.csv"]
    assert {"parasys", "numpy", "scipy", "python"} <= set(doc["versions"])
    assert doc["config"]["spec"].endswith("backward_pair.yaml")


@pytest.mark.parametrize("argv", [
    ["classify", "--n", "2", "--b", "1", "--s", "0", "--p", "2", "--lambda", "1"],
    ["diagram", "--n", "2", "--b", "1"],
    ["counterexample", "zero-real"],
    ["fundsol", str(SYSTEMS / "heat2d.yaml"), "--points", "9"],
])
def test_identical_config_gives_identical_tables(tmp_path, argv):
    a, b = tmp_path / "a", tmp_path / "b"
    assert run(argv + ["--out", str(a)]) == EXIT_OK
    assert run(argv + ["--out", str(b)]) == EXIT_OK
    tables = sorted(p.name for p in a.glob("*.csv"))
    assert tables
    for name in tables:
        assert (a / name).read_bytes() == (b / name).read_bytes(), name


def test_classify_row(tmp_path):
    run(["classify", "--n", "2", "--b", "1", "--s", "0", "--p", "3/2", "--lambda", "1", "--out", str(tmp_path)])
    row = read_rows(tmp_path / "classify.csv")[0]
    assert row["kind"] == "BMO"
    assert row["p_in"] == "3/2"


@pytest.mark.parametrize("argv", [
    ["check", "does-not-exist.yaml"],
    ["frobnicate"],
    ["classify", "--n", "2", "--b", "1", "--s", "0"],
    ["classify", "--n", "2", "--b", "1", "--s", "0", "--p", "0.5"],
    ["counterexample", "holder", "--mu", "0.9", "--p", "6"],
    ["counterexample", "zero-real", "--N", "4", "8"],
    ["check", str(SYSTEMS / "heat2d.yaml"), "--threads", "0"],
    ["potential", str(SYSTEMS / "backward_pair.yaml")],
])
def test_usage_and_input_errors_exit_2(tmp_path, argv):
    assert run(argv + ["--out", str(tmp_path)]) == EXIT_USAGE


def test_bad_spec_file_exits_2(tmp_path, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text("n: 2\nb: 1\nm: two\nprincipal: []\n")
    assert run(["check", str(bad), "--out", str(tmp_path / "o")]) == EXIT_USAGE
    assert "line 3" in capsys.readouterr().err


def test_reversed_family_fails_validation(tmp_path):
    assert run(["counterexample", "reversed", "--out", str(tmp_path)]) == EXIT_FAIL
    doc = yaml.safe_load((tmp_path / "manifest.yaml").read_text())
    assert doc["status"] == "validation failed"
    assert (tmp_path / "reversed_slopes.csv").exists()


def test_holder_regular_case(tmp_path):
    assert run(["counterexample", "holder", "--mu", "0.7", "--p", "6", "--out", str(tmp_path)]) == EXIT_OK
    assert read_rows(tmp_path / "holder.csv")


def test_norms_on_imported_field(tmp_path):
    spec = GridSpec.cube(2, -np.pi, np.pi, 1.0, 32, 9)
    u = GridFunction.sample(spec, lambda t, xs: np.sin(xs[0]) * (1 + t))
    path = tmp_path / "u.grid"
    write_grid(u, path)
    out = tmp_path / "out"
    code = run(["norms", str(path), "--p", "2", "--lambda", "1", "--radii", "2", "1", "--sigma", "0.5",
                "--out", str(out)])
    assert code == EXIT_OK
    kinds = {r["kind"] for r in read_rows(out / "norms.csv")}
    assert {"lp", "sobolev", "holder"} <= kinds


def test_norms_rejects_missing_field(tmp_path):
    assert run(["norms", str(tmp_path / "nothing.grid"), "--out", str(tmp_path)]) == EXIT_USAGE
