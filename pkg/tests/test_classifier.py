import csv
import re
import time
from fractions import Fraction

import numpy as np
import pytest

from parasys.classifier import (
    QueryError,
    RegularityQuery,
    classify,
    collinearity_det,
    cut_length,
    emit_diagram,
    region_membership,
    region_vertices,
    tau,
)

F = Fraction


def random_queries(count, seed=0):
    """Rational queries; small denominators so thresholds are hit exactly now and then."""
    rng = np.random.default_rng(seed)
    out = []
    while len(out) < count:
        n = int(rng.integers(2, 5))
        b = int(rng.integers(1, 3))
        s = int(rng.integers(0, 2 * b))
        lam = F(int(rng.integers(1, 4 * (n + 2 * b))), 4)
        if not 0 < lam < n + 2 * b:
            continue
        p = F(int(rng.integers(5, 60)), int(rng.integers(1, 5)))
        if p <= 1:
            continue
        out.append(RegularityQuery(n, b, s, p, lam))
    return out


def test_spot_holder():
    c = classify(RegularityQuery(2, 1, 0, 2, 1))
    assert c.kind == "Holder" and c.sigma == F(1, 2)


def test_spot_vmo_at_threshold():
    assert classify(RegularityQuery(2, 1, 1, 4, 0)).kind == "VMO"


def test_spot_bmo_at_threshold_with_positive_lambda():
    # tau_0 = 3/2 for n=2, b=1, lambda=1
    assert classify(RegularityQuery(2, 1, 0, F(3, 2), 1)).kind == "BMO"


def test_spot_morrey():
    c = classify(RegularityQuery(2, 1, 0, "1.2", 1))
    assert c.kind == "Morrey" and c.exponent == F(17, 5)


def test_essentially_bounded_flag():
    assert classify(RegularityQuery(2, 1, 0, 3, 0)).essentially_bounded
    assert not classify(RegularityQuery(2, 1, 0, 3, 1)).essentially_bounded
    assert not classify(RegularityQuery(2, 1, 0, F(3, 2), 0)).essentially_bounded


def test_redirect_past_the_window():
    c = classify(RegularityQuery(2, 2, 0, 10, 0))
    assert c.kind == "Boundary"
    # tau_s = 6/(4-s): 1.5, 2, 3, 6; p = 10 lies past tau_3
    assert c.redirect_s == 3


def test_float_input_on_threshold_is_boundary():
    c = classify(RegularityQuery(2, 1, 0, 1.5 + 1e-14, 1.0))
    assert c.kind == "Boundary"
    assert classify(RegularityQuery(2, 1, 0, 1.5, 1.0)).kind == "BMO"


@pytest.mark.parametrize(
    "kw",
    [dict(n=1, b=1, s=0, p=2), dict(n=2, b=1, s=2, p=2), dict(n=2, b=1, s=0, p=1),
     dict(n=2, b=1, s=0, p=2, lam=4), dict(n=2, b=1, s=0.5, p=2), dict(n=2, b=1, s=0, p="abc")],
)
def test_invalid_queries(kw):
    with pytest.raises(QueryError):
        RegularityQuery(**kw)


@pytest.mark.parametrize("n, b", [(2, 1), (3, 1), (2, 2), (4, 3)])
def test_continuity_across_the_threshold(n, b):
    lam = F(1, 2)
    for s in range(2 * b):
        t = tau(n, b, s, lam)
        below = classify(RegularityQuery(n, b, s, t - F(1, 10**9), lam))
        above = classify(RegularityQuery(n, b, s, t + F(1, 10**9), lam))
        assert below.kind == "Morrey" and abs(below.exponent - (n + 2 * b)) < F(1, 10**8)
        assert above.kind == "Holder" and 0 < above.sigma < F(1, 10**8)


def test_sigma_monotone():
    n, b = 3, 2
    lam = F(1)
    for s in range(2 * b - 1):
        lo, hi = tau(n, b, s, lam), tau(n, b, s + 1, lam)
        ps = [lo + (hi - lo) * F(k, 10) for k in range(1, 10)]
        sig = [classify(RegularityQuery(n, b, s, p, lam)).sigma for p in ps]
        assert all(a < c for a, c in zip(sig, sig[1:]))
        p = ps[4]
        lams = [lam - F(1, 100), lam, lam + F(1, 100)]
        sl = [classify(RegularityQuery(n, b, s, p, x)).sigma for x in lams]
        assert sl[0] < sl[1] < sl[2]


def test_sigma_decreases_in_s():
    # one point that is Hoelder for two consecutive s would contradict disjoint windows,
    # so compare the formula itself at a fixed point
    n, b, p, lam = 2, 2, F(5), F(1)
    vals = [2 * b - s - (n + 2 * b - lam) / p for s in range(2 * b)]
    assert all(a > c for a, c in zip(vals, vals[1:]))


def test_classify_agrees_with_regions():
    qs = random_queries(10_000, seed=7)
    t0 = time.perf_counter()
    bad = []
    hits = {"segment": 0, "tetragon": 0, "triangle": 0, "unbounded": 0}
    for q in qs:
        reg = region_membership((q.p, q.lam), q.n, q.b)
        hits[reg.label] += 1
        kind = classify(q).kind
        if kind != reg.implied(q.s, q.lam):
            bad.append((q, kind, reg))
    assert not bad, bad[:3]
    assert all(v > 0 for v in hits.values()), hits
    assert time.perf_counter() - t0 < 5.0


def test_cut_length_is_sigma(rng):
    for _ in range(200):
        n, b = int(rng.integers(2, 5)), int(rng.integers(1, 3))
        s = int(rng.integers(0, 2 * b))
        lam = float(rng.uniform(0.1, n + 2 * b - 0.1))
        lo, hi = tau(n, b, s, lam), tau(n, b, s + 1, lam)
        hi = lo + 5.0 if hi == float("inf") else hi
        if hi <= 1.0:
            continue
        lo = max(lo, 1.0)
        p = float(lo + (hi - lo) * rng.uniform(0.05, 0.95))
        c = classify(RegularityQuery(n, b, s, p, lam))
        reg = region_membership((p, lam), n, b)
        assert c.kind == "Holder" and reg.s == s
        assert abs(cut_length(n, b, s, p, lam) - c.sigma) < 1e-12
        assert abs(reg.sigma - c.sigma) < 1e-12


def test_figure_examples():
    r = region_membership((2, 1), 2, 1)
    assert r.label == "tetragon" and r.s == 0 and r.sigma == F(1, 2)
    assert region_membership((F(3, 2), 1), 2, 1).label == "segment"
    assert region_membership(("1.2", 1), 2, 1).label == "triangle"


@pytest.mark.parametrize(
    "n, b, s, B, A",
    [(2, 1, 0, (2, 0), (1, 2)), (2, 1, 1, (4, 0), (1, 3)), (2, 2, 3, (6, 0), (1, 5))],
)
def test_region_vertices(n, b, s, B, A):
    v = region_vertices(n, b, s)
    assert v["B"] == B and v["A"] == A and v["apex"] == (0, n + 2 * b)


def test_collinearity_is_exact():
    for n in range(2, 6):
        for b in range(1, 4):
            for s in range(2 * b):
                assert collinearity_det(n, b, s) == 0


@pytest.mark.parametrize("b", [1, 2])
def test_diagram_files(tmp_path, b):
    svg, vcsv = emit_diagram(2, b, tmp_path / "fig")
    with open(vcsv) as fh:
        rows = list(csv.DictReader(fh))
    assert set(rows[0]) == {"label", "p", "lambda", "provenance"}
    by = {r["label"]: r for r in rows}
    for s in range(2 * b):
        assert F(by[f"B{s}"]["p"]) == F(2 + 2 * b, 2 * b - s)
    text = svg.read_text()
    ids = set(re.findall(r'id="vertex-([^"]+)"', text))
    assert {f"B{s}" for s in range(2 * b)} <= ids
    assert "region-triangle" in text and f"region-R{2 * b - 1}" in text
    assert (tmp_path / "fig_edges.csv").exists()


def test_diagram_unwritable(tmp_path):
    with pytest.raises(QueryError):
        emit_diagram(2, 1, tmp_path / "missing" / "fig")
