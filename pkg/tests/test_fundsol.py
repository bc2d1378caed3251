import numpy as np
import pytest
from scipy import integrate, special

import parasys.fundsol as F
from parasys.fundsol import (
    FundamentalMatrix,
    FundamentalSolutionError,
    compare_routes,
    check_properties,
    gaussian_kernel,
    homogeneity_residual,
    kernel_derivative,
    matrix_fundamental,
    scalar_fundamental,
)
from parasys.symbol import (
    ParabolicSystem,
    SymbolError,
    diagonal_laplacian_system,
    polyharmonic_system,
    symbol_matrices,
)

POINTS = np.array([[0.0, 0.0], [0.5, -0.3], [1.2, 0.7], [-1.4, 1.3], [2.0, 0.0], [0.1, 1.9]])


@pytest.fixture(scope="module")
def heat_report(heat_fm):
    return check_properties(heat_fm)


def test_heat_kernel_at_origin(heat_fm):
    assert scalar_fundamental(heat_fm, [0.0, 0.0], 1.0) == pytest.approx(1 / (4 * np.pi), rel=1e-8)


@pytest.mark.parametrize("t", [0.5, 1.0, 2.0])
def test_heat_kernel_matches_gauss(heat_fm, t):
    exact = gaussian_kernel(POINTS, t, 2)
    for route in ("exp", "cofactor"):
        got = matrix_fundamental(heat_fm, POINTS, t, route)[:, 0, 0]
        assert np.abs(got - exact).max() / exact.max() < 1e-6


def test_routes_agree(heat_fm):
    assert compare_routes(heat_fm, POINTS, (0.5, 1.0, 2.0)).agree


def test_heat_first_derivative(heat_fm):
    t = 0.8
    got = kernel_derivative(heat_fm, (1, 0), POINTS, t)[:, 0, 0]
    exact = -POINTS[:, 0] / (2 * t) * gaussian_kernel(POINTS, t, 2)
    assert np.abs(got - exact).max() / np.abs(exact).max() < 1e-6


def test_zero_order_derivative_is_the_kernel(heat_fm):
    a = kernel_derivative(heat_fm, (0, 0), POINTS, 1.0)
    assert np.allclose(a, matrix_fundamental(heat_fm, POINTS, 1.0))


def test_vanishes_before_time_zero(heat_fm):
    assert np.all(heat_fm.evaluate(POINTS, -0.5) == 0.0)


def test_diagonal_system_is_a_pair_of_gaussians():
    fm = FundamentalMatrix(diagonal_laplacian_system([1.0, 2.0], 2))
    for t in (0.5, 1.5):
        G = matrix_fundamental(fm, POINTS, t)
        assert np.abs(G[:, 0, 0] - gaussian_kernel(POINTS, t, 2, 1.0)).max() < 1e-7
        assert np.abs(G[:, 1, 1] - gaussian_kernel(POINTS, t, 2, 2.0)).max() < 1e-7
        assert np.abs(G[:, 0, 1]).max() < 1e-12
    assert compare_routes(fm, POINTS, (0.5, 1.5)).agree


def _scalar_by_hankel(x, t):
    # g = (e^{-r^2 t} - e^{-2 r^2 t}) / r^2; radial inverse transform in the plane
    rad = np.linalg.norm(x)
    val, _ = integrate.quad(lambda r: (np.exp(-r * r * t) - np.exp(-2 * r * r * t)) / r * special.j0(r * rad),
                            0, np.inf, limit=400)
    return val / (2 * np.pi)


@pytest.mark.parametrize("x", [(0.0, 0.0), (0.7, 0.2), (1.5, -1.0)])
def test_scalar_kernel_of_two_pole_system(x):
    fm = FundamentalMatrix(diagonal_laplacian_system([1.0, 2.0], 2))
    got = float(scalar_fundamental(fm, np.array(x), 0.6))
    assert got == pytest.approx(_scalar_by_hankel(np.array(x), 0.6), rel=1e-6)


def test_triangular_coupling_matches_duhamel_integral():
    c = 0.8
    sys_ = ParabolicSystem(2, 1, 2, {(2, 0): [[1.0, c], [0.0, 2.0]], (0, 2): [[1.0, c], [0.0, 2.0]]})
    fm = FundamentalMatrix(sys_)
    t = 0.7
    G = matrix_fundamental(fm, POINTS, t)

    def lap_gauss(x, tau):
        r2 = float(x @ x)
        return gaussian_kernel(x[None], tau, 2)[0] * (r2 / (4 * tau**2) - 1 / tau)

    for x, g in zip(POINTS, G):
        duhamel, _ = integrate.quad(lambda s: lap_gauss(x, (t - s) + 2 * s), 0, t, epsabs=1e-13)
        assert g[0, 1] == pytest.approx(c * duhamel, abs=1e-7)
        assert g[1, 0] == pytest.approx(0.0, abs=1e-12)
    assert compare_routes(fm, POINTS, (t,)).agree


def test_non_parabolic_system_is_rejected():
    with pytest.raises((FundamentalSolutionError, SymbolError, ValueError)):
        FundamentalMatrix(diagonal_laplacian_system([1.0, -1.0], 2))


def test_derivative_order_is_limited(heat_fm):
    with pytest.raises(FundamentalSolutionError):
        kernel_derivative(heat_fm, (3, 0), POINTS, 1.0)


@pytest.mark.parametrize("mu", [0.5, 2.0, 4.0])
@pytest.mark.parametrize("alpha", [(0, 0), (1, 0), (2, 0), (1, 1)])
def test_mixed_homogeneity(heat_fm, mu, alpha):
    assert homogeneity_residual(heat_fm, alpha, mu, POINTS[1:] * 0.6, (0.5, 1.0)) < 1e-5


def test_bilaplacian_homogeneity():
    fm = FundamentalMatrix(polyharmonic_system(2, 2))
    pts = POINTS[1:4] * 0.5
    for mu in (0.5, 2.0):
        assert homogeneity_residual(fm, (0, 0), mu, pts, (0.5, 1.0)) < 1e-5
        assert homogeneity_residual(fm, (2, 2), mu, pts, (0.5, 1.0)) < 1e-5


def test_property_report(heat_report):
    assert all(heat_report.passed.values()), heat_report.passed
    assert heat_report.sphere_mean_max < 1e-6
    assert max(heat_report.homogeneity_max_rel.values()) < 1e-5
    assert heat_report.shell_slopes[2] == pytest.approx(0.0, abs=0.05)
    assert heat_report.shell_slopes[1] == pytest.approx(1.0, abs=0.05)
    assert all(np.isfinite(v) for v in heat_report.derivative_sup.values())
    assert {r["property"] for r in heat_report.rows()} == {"P1", "P2", "P3", "P4", "P5"}


@pytest.mark.parametrize("kind", ["scalar", "cofactor"])
def test_residue_and_contour_paths_agree_on_close_roots(monkeypatch, kind):
    # roots 1e-5 apart: residues by default, circle contours once the gap threshold is raised
    sys_ = diagonal_laplacian_system([1.0, 1.0 + 1e-5], 2)
    xi = np.array([[0.3, 0.4], [1.0, 2.0], [2.0, -1.0]])
    mats = symbol_matrices(sys_, xi)
    roots = np.linalg.eigvals(mats)
    residue = F._transformed(mats, roots, 0.7, kind)
    monkeypatch.setattr(F, "ROOT_GAP", 1e-3)
    contour = F._transformed(mats, roots, 0.7, kind)
    assert np.abs(residue - contour).max() < 1e-8 * np.abs(contour).max()
