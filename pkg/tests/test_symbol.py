import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from parasys.symbol import (
    ParabolicSystem,
    SymbolError,
    characteristic_roots,
    check_parabolicity,
    check_strong_ellipticity,
    diagonal_laplacian_system,
    evaluate_symbol,
    heat_system,
    multi_indices,
    polyharmonic_system,
    sphere_samples,
)


def test_multi_indices_have_the_requested_order():
    for n, k in [(2, 2), (3, 4), (1, 3)]:
        idx = multi_indices(n, k)
        assert all(len(a) == n and sum(a) == k for a in idx)
        assert len(idx) == len(set(idx))
    assert len(multi_indices(2, 4)) == 5


def test_system_validation():
    with pytest.raises(SymbolError):
        ParabolicSystem(2, 1, 1, {(1, 0): [[1.0]]})
    with pytest.raises(SymbolError):
        ParabolicSystem(2, 1, 1, {(2, 0): [[0.0]]})
    with pytest.raises(SymbolError):
        ParabolicSystem(2, 1, 2, {(2, 0): [[1.0]]})
    with pytest.raises(SymbolError):
        ParabolicSystem(2, 1, 1, {(2, 0): [[np.nan]]})


def test_laplacian_symbol_at_unit_vector():
    assert evaluate_symbol(heat_system(2), [1.0, 0.0]) == pytest.approx(np.array([[-1.0]]))


def test_mixed_diagonal_symbol():
    sym = evaluate_symbol(diagonal_laplacian_system([1.0, -1.0], 2), [0.0, 1.0])
    assert np.allclose(sym, np.diag([-1.0, 1.0]))


def test_bilaplacian_symbol():
    # -Delta^2 expanded over multi-indices: coefficients 1, 2, 1 with a minus sign
    sym = evaluate_symbol(polyharmonic_system(2, 2), [1.0, 1.0])
    assert sym == pytest.approx(np.array([[-4.0]]))


def test_roots_of_laplacian():
    assert characteristic_roots(heat_system(2), [3.0, 4.0]) == pytest.approx([-25.0])


@pytest.mark.parametrize("deltas", [(1.0, 2.0), (0.5, -1.0, 3.0), (2.0, 2.0, 1.0, -0.5)])
def test_roots_of_diagonal_systems(deltas):
    roots = characteristic_roots(diagonal_laplacian_system(deltas, 2), [0.6, 0.8])
    assert sorted(roots.real) == pytest.approx(sorted(-np.array(deltas)))


def test_triangular_coupling_roots_equal_diagonal_entries():
    sys_ = ParabolicSystem(2, 1, 2, {(2, 0): [[1.0, 3.0], [0.0, 2.0]], (0, 2): [[1.0, 0.0], [0.0, 2.0]]})
    xi = np.array([0.3, -1.1])
    roots = characteristic_roots(sys_, xi)
    sym = evaluate_symbol(sys_, xi)
    # brute-force characteristic polynomial of the 2x2 triangular symbol
    tr, det = np.trace(sym), np.linalg.det(sym)
    brute = np.roots([1.0, -tr, det])
    assert sorted(roots.real) == pytest.approx(sorted(brute.real))
    assert sorted(roots.real) == pytest.approx(sorted(np.diag(sym)))


def test_heat_delta_hat():
    rep = check_parabolicity(heat_system(2))
    assert rep.is_parabolic
    assert rep.delta_hat == pytest.approx(1.0, abs=1e-9)
    assert rep.worst_root.real == pytest.approx(-rep.delta_hat, abs=1e-9)


def test_mixed_signs_have_a_root_with_positive_real_part():
    rep = check_parabolicity(diagonal_laplacian_system([1.0, -1.0], 2))
    assert not rep.is_parabolic
    assert rep.worst_root.real == pytest.approx(1.0, abs=1e-9)


def test_zero_diffusivity_gives_zero_margin():
    rep = check_parabolicity(diagonal_laplacian_system([1.0, 0.0], 2))
    assert not rep.is_parabolic
    assert rep.delta_hat == 0.0


def test_strongly_elliptic_but_not_parabolic():
    sys_ = diagonal_laplacian_system([-1.0, -1.0], 2)
    ell = check_strong_ellipticity(sys_)
    assert ell.is_strongly_elliptic
    assert ell.K_hat == pytest.approx(1.0, abs=1e-9)
    assert not check_parabolicity(sys_).is_parabolic


def test_mixed_signs_are_not_strongly_elliptic():
    ell = check_strong_ellipticity(diagonal_laplacian_system([1.0, -1.0], 2))
    assert not ell.is_strongly_elliptic
    assert ell.K_hat == pytest.approx(-1.0, abs=1e-9)


def test_laplacian_ellipticity_constant():
    assert check_strong_ellipticity(heat_system(2)).K_hat == pytest.approx(1.0, abs=1e-9)


def test_sphere_samples_are_unit_and_deterministic():
    a = sphere_samples(3, 200)
    assert np.allclose(np.linalg.norm(a, axis=1), 1.0)
    assert np.array_equal(a, sphere_samples(3, 200))


@settings(max_examples=25, deadline=None)
@given(mu=st.floats(0.1, 10.0), a=st.floats(-2, 2), c=st.floats(-2, 2))
def test_root_homogeneity(mu, a, c):
    sys_ = ParabolicSystem(2, 1, 2, {(2, 0): [[1.0, 0.4], [0.1, 2.0]], (1, 1): [[0.2, 0.0], [0.0, 0.3]],
                                     (0, 2): [[1.5, 0.0], [0.2, 1.0]]})
    xi = np.array([a, c])
    if np.linalg.norm(xi) < 1e-3:
        return
    lhs = characteristic_roots(sys_, mu * xi)
    rhs = mu**2 * characteristic_roots(sys_, xi)
    assert np.allclose(np.sort_complex(lhs), np.sort_complex(rhs), rtol=1e-10, atol=1e-12 * abs(rhs).max())


def test_block_diagonal_roots_are_the_union():
    A1 = np.array([[1.0, 0.5], [0.0, 2.0]])
    blk = np.zeros((3, 3))
    blk[:2, :2] = A1
    blk[2, 2] = 0.7
    sys_ = ParabolicSystem(2, 1, 3, {(2, 0): blk, (0, 2): blk})
    part = ParabolicSystem(2, 1, 2, {(2, 0): A1, (0, 2): A1})
    xi = [0.2, 0.9]
    union = np.concatenate([characteristic_roots(part, xi), characteristic_roots(heat_system(2, diffusivity=0.7), xi)])
    assert np.allclose(np.sort(characteristic_roots(sys_, xi).real), np.sort(union.real))


@pytest.mark.parametrize("m", [1, 2, 3, 4])
def test_parabolicity_iff_all_positive(m):
    for signs in itertools.product([-1.0, 1.0], repeat=m):
        rep = check_parabolicity(diagonal_laplacian_system(signs, 2), n_samples=256)
        assert rep.is_parabolic == all(s > 0 for s in signs)
