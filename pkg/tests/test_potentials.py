import math

import numpy as np
import pytest

from parasys.field import GridFunction, GridSpec, apply_operator, spatial_derivative
from parasys.fundsol import FundamentalMatrix
from parasys.norms import lp_norm
from parasys.potentials import (
    CZKernel,
    ExtrapolationWarning,
    PotentialError,
    PVQuadrature,
    boundary_constant,
    boundary_constant_quadrature,
    commutator,
    commutator_direct,
    commutator_shrinking_study,
    empirical_operator_norm,
    kernel_axioms,
    multiplier_bound,
    representation_residual,
    richardson,
    singular_operator,
    singular_operator_direct,
    trial_corpus,
    volume_potential,
)
from parasys.symbol import diagonal_laplacian_system, heat_system

HEAT_F = -0.389400391535702


def bump(t, xs, sharp=2.0):
    return t * np.exp(-sharp * sum(x * x for x in xs)) * np.cos(xs[0] + 0.5 * xs[1])


@pytest.fixture(scope="module")
def kern(heat_fm):
    return CZKernel.from_fundamental(heat_fm, (2, 0))


@pytest.fixture(scope="module")
def spec64():
    return GridSpec.cube(2, -np.pi, np.pi, 1.0, 64, 21)


def l2(vals, w):
    return float(np.sqrt(np.sum(w[..., None] * vals**2)))


def test_richardson_removes_even_powers():
    eps = [0.4, 0.2, 0.1]
    vals = [3.0 + 2 * e**2 - 5 * e**4 for e in eps]
    assert richardson(vals, eps) == pytest.approx(3.0, abs=1e-12)


def test_ladder_validation():
    with pytest.raises(ValueError):
        PVQuadrature(levels=2)
    assert PVQuadrature(eps0=1.0).ladder(0.1) == [1.0, 0.5, 0.25]


def test_volume_potential_of_zero(heat_fm, spec64):
    assert np.abs(volume_potential(heat_fm, GridFunction.zeros(spec64)).values).max() == 0.0


def test_volume_potential_single_mode(heat_fm):
    # u' + u = 1 per mode: u = sin(x1)(1 - e^{-t})
    spec = GridSpec.cube(2, -np.pi, np.pi, 1.0, 32, 21)
    u = volume_potential(heat_fm, GridFunction.sample(spec, lambda t, xs: np.sin(xs[0]) + 0 * t))
    exact = GridFunction.sample(spec, lambda t, xs: np.sin(xs[0]) * (1 - np.exp(-t)))
    assert np.abs(u.values - exact.values).max() < 1e-4
    assert np.abs(u.values[0]).max() == 0.0


def test_volume_potential_solves_the_equation(heat_fm):
    spec = GridSpec.cube(2, -np.pi, np.pi, 1.0, 32, 21)
    g = GridFunction.sample(spec, lambda t, xs: np.cos(xs[0] + 2 * xs[1]) * (1 + t) + np.sin(3 * xs[1]) * t * t)
    u = volume_potential(heat_fm, g)
    assert lp_norm(apply_operator(heat_system(2), u) - g, 2) / lp_norm(g, 2) < 1e-3


def test_singular_operator_of_zero(kern, spec64):
    assert np.abs(singular_operator(kern, GridFunction.zeros(spec64)).values).max() == 0.0


def test_singular_operator_reproduces_second_derivative(heat_fm, kern, spec64):
    g = GridFunction.sample(spec64, bump)
    D = spatial_derivative(volume_potential(heat_fm, g), (2, 0)).values
    pred = singular_operator(kern, g).values + HEAT_F * g.values
    w = spec64.weights().copy()
    w[0] = 0.0
    assert l2(pred - D, w) / l2(D, w) < 1e-2


def test_singular_operator_is_linear(kern, spec64):
    g = GridFunction.sample(spec64, bump)
    h = GridFunction.sample(spec64, lambda t, xs: t * t * np.exp(-3 * (xs[0] ** 2 + xs[1] ** 2)))
    lhs = singular_operator(kern, 2 * g - 3 * h).values
    rhs = 2 * singular_operator(kern, g).values - 3 * singular_operator(kern, h).values
    assert np.abs(lhs - rhs).max() < 1e-10 * np.abs(rhs).max()


def test_ladder_shift_stability(kern):
    spec = GridSpec.cube(2, -np.pi, np.pi, 1.0, 128, 41)
    g = GridFunction.sample(spec, bump)
    q = PVQuadrature()
    a = singular_operator(kern, g, q, full_report=True)
    b = singular_operator(kern, g, q.shifted(math.sqrt(2), float(min(spec.h))), full_report=True)
    assert a.converged and b.converged
    shift = l2(a.value.values - b.value.values, spec.weights())
    assert shift < 0.1 * max(a.leading_correction, b.leading_correction)


@pytest.mark.parametrize("mu", [0.5, 2.0])
def test_singular_operator_dilation_covariance(kern, mu):
    # a kernel of degree -(n+2b) commutes with parabolic dilations
    L = 3.0
    spec = GridSpec.cube(2, -L, L, 1.0, 64, 21)
    spec_mu = GridSpec.cube(2, -L / mu, L / mu, 1.0 / mu**2, 64, 21)
    g = GridFunction.sample(spec, bump)
    g_mu = GridFunction.sample(spec_mu, lambda t, xs: bump(mu**2 * t, [mu * x for x in xs]))
    a = singular_operator(kern, g).values
    b = singular_operator(kern, g_mu).values
    assert l2(b - a, spec.weights()) / l2(a, spec.weights()) < 0.02


def test_commutator_with_constant_coefficient_is_zero(kern, spec64):
    g = GridFunction.sample(spec64, bump)
    A = GridFunction.sample(spec64, lambda t, xs: 2.5 + 0 * t * xs[0])
    assert np.all(commutator(kern, A, g).values == 0.0)


def test_commutator_structural_identity_by_brute_force(kern):
    spec = GridSpec.cube(2, -1.5, 1.5, 0.5, 8, 5)
    g = GridFunction.sample(spec, lambda t, xs: (1 + t) * np.cos(xs[0]) * np.sin(xs[1] + 0.2))
    A = GridFunction.sample(spec, lambda t, xs: 1 + 0.3 * np.sin(2 * xs[0]) + 0.1 * t)
    eps = 0.4
    direct = commutator_direct(kern, A, g, eps)
    Ag = GridFunction(spec, A.values * g.values)
    split = singular_operator_direct(kern, Ag, eps) - A.values * singular_operator_direct(kern, g, eps)
    assert np.abs(direct - split).max() < 1e-10 * np.abs(direct).max()
    assert np.abs(direct).max() > 0


def test_commutator_sign_coefficient_does_not_shrink():
    # sgn(x1) is BMO but not VMO: the commutator stays order one on shrinking cylinders
    def sgn(x, t):
        return np.sign(x[:, 0]) + 0 * t

    st = commutator_shrinking_study(heat_system(2), (2, 0), sgn, (0.0, 0.0), 1.0, radii=(1.0, 0.5, 0.25),
                                    corpus_size=4)
    assert min(st.ratios) > 0.5 * max(st.ratios)
    assert min(st.etas) > 0.9


def test_boundary_constant_heat(heat_fm):
    bc = boundary_constant(heat_fm, (2, 0), GridSpec.cube(2, -4.0, 4.0, 1.0, 64, 21))
    assert bc.quadrature[0, 0] == pytest.approx(HEAT_F, abs=1e-9)
    assert bc.discrepancy < 1e-3
    assert bc.calibration_rank == 1


def test_boundary_constant_vanishes_for_mixed_index(heat_fm):
    assert abs(boundary_constant_quadrature(heat_fm, (1, 1))[0][0, 0]) < 1e-12


def test_boundary_constant_directions_agree(heat_fm):
    _, per = boundary_constant_quadrature(heat_fm, (2, 0))
    assert set(per) == {0}
    F, per = boundary_constant_quadrature(heat_fm, (0, 2))
    assert F[0, 0] == pytest.approx(HEAT_F, abs=1e-9)


def test_boundary_constant_diagonal_system_is_diagonal():
    fm = FundamentalMatrix(diagonal_laplacian_system([1.0, 2.0], 2))
    F, _ = boundary_constant_quadrature(fm, (2, 0))
    assert F[0, 0] == pytest.approx(HEAT_F, abs=1e-9)
    assert F[0, 1] == 0.0 and F[1, 0] == 0.0


def test_underdetermined_calibration():
    fm = FundamentalMatrix(diagonal_laplacian_system([1.0, 2.0], 2))
    spec = GridSpec.cube(2, -4.0, 4.0, 1.0, 16, 9)
    with pytest.raises(PotentialError):
        boundary_constant(fm, (2, 0), test_fields=[GridFunction.sample(spec, lambda t, xs: [t * xs[0], t * xs[1]])])


def test_representation_of_zero(spec64):
    res = representation_residual(heat_system(2), GridFunction.zeros(spec64), (2, 0))
    assert res.absolute and res.residual == 0.0


def _var_coeff(x, t):
    a = 1 + 0.1 * np.sin(x[..., 0]) * np.cos(x[..., 1]) + 0.05 * np.asarray(t)
    a = np.asarray(a)[..., None, None]
    return {(2, 0): a, (0, 2): a}


def test_representation_with_variable_coefficients():
    spec = GridSpec.cube(2, -np.pi, np.pi, 1.0, 128, 41)
    v = GridFunction.sample(spec, lambda t, xs: bump(t, xs) * np.sin(xs[0]))
    targets = [(jt, i, j) for jt in (20, 40) for i in (48, 72) for j in (52, 76)]
    full = representation_residual(heat_system(2), v, (2, 0), _var_coeff, targets=targets)
    ablated = representation_residual(heat_system(2), v, (2, 0), _var_coeff, targets=targets,
                                      include_commutator=False)
    assert full.residual < 5e-2
    assert ablated.residual > 3 * full.residual


def test_kernel_axioms(kern):
    rep = kernel_axioms(kern)
    assert all(rep.passed.values()), rep.passed
    assert rep.homogeneity_slope == pytest.approx(-4.0, abs=0.01)
    assert rep.sphere_mean < 1e-6
    assert 0 < rep.sphere_abs_integral < np.inf


def test_kernel_axioms_frozen_variable_kernel():
    rep = kernel_axioms(CZKernel(heat_system(2), (2, 0), _var_coeff), x=np.array([0.3, 0.2]), t=0.5)
    assert all(rep.passed.values())


def test_kernel_order_is_checked():
    with pytest.raises(PotentialError):
        CZKernel(heat_system(2), (1, 0))


def test_empirical_norm_below_multiplier_bound(heat_fm, kern):
    spec = GridSpec.cube(2, -np.pi, np.pi, 1.0, 32, 11)
    corpus = trial_corpus(spec, 1, 20)
    q = PVQuadrature(spacings=4)
    est, ratios = empirical_operator_norm(lambda f: singular_operator(kern, f, q), corpus)
    bound = multiplier_bound(heat_fm, (2, 0), boundary_constant_quadrature(heat_fm, (2, 0))[0])
    assert len(ratios) == 20
    assert 0 < est <= bound * 1.05


def test_empirical_norm_of_constant_commutator(kern):
    spec = GridSpec.cube(2, -np.pi, np.pi, 1.0, 32, 11)
    A = GridFunction.sample(spec, lambda t, xs: 1.7 + 0 * t * xs[0])
    est, ratios = empirical_operator_norm(lambda f: commutator(kern, A, f), trial_corpus(spec, 1, 20))
    assert est == 0.0 and all(r == 0.0 for r in ratios)


def test_non_converging_ladder_is_reported(kern):
    # eight coarse spacings exceed the corpus feature size, so the rungs do not settle
    spec = GridSpec.cube(2, -np.pi, np.pi, 1.0, 32, 21)
    f = trial_corpus(spec, 1, 20)[3]
    with pytest.warns(ExtrapolationWarning):
        res = singular_operator(kern, f, full_report=True)
    assert not res.converged


def test_trial_corpus_is_seeded():
    spec = GridSpec.cube(2, -np.pi, np.pi, 1.0, 16, 9)
    a = trial_corpus(spec, 2, 3, seed=5)
    b = trial_corpus(spec, 2, 3, seed=5)
    assert all(np.array_equal(x.values, y.values) for x, y in zip(a, b))
    assert all(np.abs(x.values[0]).max() == 0.0 for x in a)
