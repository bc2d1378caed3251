"""Explicit counterexamples for non-parabolic systems and a Hoelder-failure field.

Two families live on the diagonal system ``D_t u - diag(delta) Laplacian u = f``:

* ``delta_1 = 0``: ``u_N = (t sin(N x_1), 0, ...)`` with ``f_N = (sin(N x_1), 0, ...)``.
  The right-hand side stays bounded while ``||u_N||_{W^{2,1}_2} ~ N^2``.
* ``delta_1 = -1`` (backward heat in the first component):
  ``u_N = ((e^{N^2 t} - 1) sin(N x_1), 0, ...)``.  Every norm carries ``e^{N^2}``, so
  norms are combined in log domain from closed-form time factors and numerically
  computed spatial factors.

The third field, ``v = |x|^{2 mu} (|x|^2/|t-1|) exp(-|x|^2/|t-1|)``, solves a heat
equation with ``L^p`` right-hand side while its gradient is only Hoelder of exponent
``2 mu - 1`` near ``(0, 1)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import gamma as gamma_fn
from scipy.special import logsumexp

from .field import Box, GridFunction, GridResolutionError, GridSpec, apply_operator, spatial_derivative
from .norms import apriori_constant_fit, lp_norm, sobolev_norm
from .symbol import diagonal_laplacian_system, multi_indices

R2_MIN = 0.99


class CounterexampleError(ValueError):
    pass


# -- slope fitting -------------------------------------------------------------------------


@dataclass
class SlopeFit:
    """Least-squares log-log slope plus the extrapolated asymptotic slope.

    ``asymptotic`` models the local slopes between consecutive parameters as
    ``s_inf + c / N`` (the leading lower-order correction of a polynomial growth law)
    and reports ``s_inf``.
    """

    slope: float
    stderr: float
    r2: float
    intercept: float
    local: list
    asymptotic: float

    @property
    def conclusive(self) -> bool:
        return self.r2 >= R2_MIN

    def as_dict(self) -> dict:
        return {"slope": self.slope, "stderr": self.stderr, "r2": self.r2, "asymptotic": self.asymptotic}


def fit_slope(params: Sequence[float], log_values: Sequence[float]) -> SlopeFit:
    """Fit ``log value = slope * log N + c``; ``log_values`` are natural logs."""
    x = np.log(np.asarray(params, dtype=float))
    y = np.asarray(log_values, dtype=float)
    if len(x) < 4:
        raise CounterexampleError(f"slope fits need at least 4 parameter values, got {len(x)}")
    A = np.vstack([x, np.ones_like(x)]).T
    coef, res, *_ = np.linalg.lstsq(A, y, rcond=None)
    fitted = A @ coef
    ss_res = float(np.sum((y - fitted) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    # a flat sequence fits its constant exactly; R^2 is then 1 by convention
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 1e-20 * max(1.0, float(np.sum(y * y))) else 1.0
    dof = len(x) - 2
    stderr = math.sqrt(ss_res / dof / float(np.sum((x - x.mean()) ** 2))) if dof > 0 else math.nan
    local = list(np.diff(y) / np.diff(x))
    mids = np.exp(0.5 * (x[1:] + x[:-1]))
    B = np.vstack([np.ones_like(mids), 1.0 / mids]).T
    s_inf = float(np.linalg.lstsq(B, np.asarray(local), rcond=None)[0][0])
    return SlopeFit(float(coef[0]), stderr, r2, float(coef[1]), [float(v) for v in local], s_inf)


@dataclass
class FamilyReport:
    """Norm table, fitted slopes and verdicts for one family.

    ``expected`` maps a fitted quantity to ``(target, tol, method)`` where ``method``
    is ``"ls"`` (least-squares slope within ``tol``), ``"asymptotic"`` (extrapolated
    slope within ``tol``) or ``"at_most"`` (least-squares slope below ``target + tol``).
    """

    name: str
    params: list
    table: list  # one dict per parameter value
    fits: dict  # quantity -> SlopeFit
    expected: dict
    checks: dict = field(default_factory=dict)  # named boolean checks (residuals, traces, ...)
    notes: list = field(default_factory=list)

    def estimate(self, quantity: str) -> float:
        fit = self.fits[quantity]
        return fit.asymptotic if self.expected[quantity][2] == "asymptotic" else fit.slope

    def verdict(self, quantity: str) -> str:
        target, tol, method = self.expected[quantity]
        if not self.fits[quantity].conclusive:
            return "inconclusive"
        est = self.estimate(quantity)
        ok = est <= target + tol if method == "at_most" else abs(est - target) <= tol
        return "pass" if ok else "fail"

    @property
    def passed(self) -> bool:
        return all(self.verdict(q) == "pass" for q in self.expected) and all(self.checks.values())

    def rows(self) -> list[dict]:
        return [dict(row) for row in self.table]

    def slope_rows(self) -> list[dict]:
        out = []
        for q, fit in self.fits.items():
            row = {"family": self.name, "quantity": q, **fit.as_dict()}
            if q in self.expected:
                target, tol, method = self.expected[q]
                row.update(target=target, tol=tol, method=method, verdict=self.verdict(q))
            out.append(row)
        return out

    def summary(self) -> str:
        lines = [f"family {self.name}: params {self.params}"]
        for q, fit in self.fits.items():
            extra = ""
            if q in self.expected:
                target, tol, method = self.expected[q]
                extra = f"; expected {target} +- {tol} ({method}) -> {self.verdict(q)}"
            lines.append(f"  {q}: LS slope {fit.slope:.4f} (se {fit.stderr:.2e}, R^2 {fit.r2:.4f}), "
                         f"asymptotic {fit.asymptotic:.4f}{extra}")
        for k, v in self.checks.items():
            lines.append(f"  check {k}: {'ok' if v else 'FAILED'}")
        lines.extend(f"  note: {n}" for n in self.notes)
        return "\n".join(lines)


# -- family with a vanishing first diffusivity ------------------------------------------------


def zero_real_system(n: int = 2, m: int = 2):
    return diagonal_laplacian_system([0.0] + [1.0] * (m - 1), n)


def _family_grid(n: int, N_max: int, N_x: int | None, N_t: int) -> GridSpec:
    need = 4 * N_max + 2  # mode N on a period of 4 pi sits at index 2N
    N_x = N_x or int(2 ** math.ceil(math.log2(max(need + 1, 16))))
    if N_x <= need:
        raise GridResolutionError(f"N={N_max} needs N_x > {need} on [-2pi, 2pi]; got N_x={N_x}")
    return GridSpec.cube(n, -2 * math.pi, 2 * math.pi, 1.0, N_x, N_t)


def _inner_box(n: int) -> Box:
    return Box((-math.pi,) * n, (math.pi,) * n, 0.0, 1.0)


def family_zero_real(N_values: Sequence[int] = (4, 8, 16, 32), n: int = 2, m: int = 2,
                     N_x: int | None = None, N_t: int = 5, p: float = 2.0) -> FamilyReport:
    """``u_N = t sin(N x_1) e_1`` on ``Q'' = [-2pi, 2pi]^n x (0, 1)``, norms over ``Q' = [-pi, pi]^n x (0,1)``."""
    system = zero_real_system(n, m)
    spec = _family_grid(n, max(N_values), N_x, N_t)
    inner = _inner_box(n)
    rows, samples = [], []
    resid_ok, trace_ok = True, True
    for N in N_values:
        zeros = [0.0] * (m - 1)
        u = GridFunction.sample(spec, lambda t, xs, N=N: [t * np.sin(N * xs[0])] + zeros)
        f = GridFunction.sample(spec, lambda t, xs, N=N: [np.sin(N * xs[0]) + 0 * t] + zeros)
        res = lp_norm(apply_operator(system, u) - f, 2) / lp_norm(f, 2)
        resid_ok &= res < 1e-6
        trace_ok &= float(np.abs(u.values[0]).max()) == 0.0
        W = sobolev_norm(u, 1, p, inner)
        rhs = lp_norm(u, p) + lp_norm(f, p)
        rows.append({"N": N, "sobolev_inner": W, "u_outer": lp_norm(u, p), "f_outer": lp_norm(f, p),
                     "rhs": rhs, "ratio": W / rhs, "residual": res})
        samples.append((u, f))
    fit_apriori = apriori_constant_fit(system, samples, p, inner=inner, outer=None, params=list(N_values))
    fits = {
        "sobolev": fit_slope(N_values, [math.log(r["sobolev_inner"]) for r in rows]),
        "rhs": fit_slope(N_values, [math.log(r["rhs"]) for r in rows]),
        "ratio": fit_slope(N_values, [math.log(r["ratio"]) for r in rows]),
        "apriori": fit_slope(fit_apriori.params, np.log(fit_apriori.ratios)),
    }
    rep = FamilyReport("zero-real", list(N_values), rows, fits,
                       {"sobolev": (2.0, 0.1, "asymptotic"), "rhs": (0.0, 0.05, "ls"),
                        "apriori": (2.0, 0.1, "asymptotic")},
                       {"residual": resid_ok, "zero_initial_trace": trace_ok,
                        "apriori_divergence_flagged": fit_apriori.divergent})
    rep.notes.append("slopes are judged on the asymptotic estimate; the least-squares slope over a short "
                     "range is biased low by the lower-order terms N and 1")
    return rep


# -- backward-heat family (log domain) --------------------------------------------------------


def _log_l2_time(kind: str, a: float) -> float:
    """``log ||T||_{L^2(0,1)}`` for the closed-form time factors (``a = N^2``)."""
    if kind == "forward":  # e^{at} - 1
        # int (e^{at}-1)^2 = (e^{2a}-1)/(2a) - 2 (e^a - 1)/a + 1
        logs = [2 * a - math.log(2 * a), -math.log(2 * a), a + math.log(2 / a), math.log(2 / a), 0.0]
        signs = [1, -1, -1, 1, 1]
    elif kind == "exp":  # e^{at}
        logs, signs = [2 * a - math.log(2 * a), -math.log(2 * a)], [1, -1]
    elif kind == "reversed":  # e^{at} - e^{a}
        # int (e^{at} - e^a)^2 = (e^{2a}-1)/(2a) - 2 e^a (e^a - 1)/a + e^{2a}
        logs = [2 * a - math.log(2 * a), -math.log(2 * a), 2 * a + math.log(2 / a), a + math.log(2 / a), 2 * a]
        signs = [1, -1, -1, 1, 1]
    elif kind == "const":
        return 0.0
    else:
        raise ValueError(kind)
    val, sign = logsumexp(logs, b=signs, return_sign=True)
    if sign <= 0:
        raise CounterexampleError("time-factor norm lost all precision")
    return 0.5 * float(val)


def _spatial_factor_norms(spec: GridSpec, N: int, inner: Box) -> dict:
    """``||D^alpha sin(N x_1)||`` over the inner and outer cross-sections, for ``|alpha| <= 2``.

    The time axis of ``spec`` only carries the unit measure of ``(0, 1)``.
    """
    X = GridFunction.sample(spec, lambda t, xs: np.sin(N * xs[0]) + 0 * t)
    out = {"outer": {}, "inner": {}}
    for s in range(3):
        for alpha in multi_indices(spec.n, s):
            d = spatial_derivative(X, alpha)
            out["outer"][alpha] = lp_norm(d, 2)
            out["inner"][alpha] = lp_norm(d, 2, inner)
    lap = sum(spatial_derivative(X, a).values for a in multi_indices(spec.n, 2) if max(a) == 2)
    out["eigen_residual"] = float(np.abs(lap + N * N * X.values).max() / (N * N))
    return out


def _logsum(logs: Sequence[float]) -> float:
    logs = [v for v in logs if v > -math.inf]
    return float(logsumexp(logs)) if logs else -math.inf


def _safe_log(v: float) -> float:
    return math.log(v) if v > 0 else -math.inf


def _backward_rows(N_values, n, reversed_family: bool, N_x, log_only: bool):
    spec = _family_grid(n, max(N_values), N_x, 5)
    inner = _inner_box(n)
    rows = []
    for N in N_values:
        a = float(N * N)
        if not log_only and a > 30:
            raise CounterexampleError(f"N^2 = {a:g} > 30 overflows the direct path; use the log-domain path")
        xs = _spatial_factor_norms(spec, N, inner)
        kind = "reversed" if reversed_family else "forward"
        log_T = _log_l2_time(kind, a)
        log_dT = math.log(a) + _log_l2_time("exp", a)  # D_t of either factor is a e^{at}
        # f_N = (T' - a T) X: a for the forward family, a e^a for the reversed one
        log_f_time = math.log(a) + (a if reversed_family else 0.0)
        terms = [log_dT + _safe_log(xs["inner"][tuple([0] * n)])]
        for alpha, v in xs["inner"].items():
            terms.append(log_T + _safe_log(v))
        log_W = _logsum(terms)
        log_u = log_T + math.log(xs["outer"][tuple([0] * n)])
        log_f = log_f_time + math.log(xs["outer"][tuple([0] * n)])
        log_rhs = _logsum([log_u, log_f])
        rows.append({"N": N, "log_W_inner": log_W, "log_u_outer": log_u, "log_f_outer": log_f,
                     "log_rhs": log_rhs, "log_ratio": log_W - log_rhs, "ratio": math.exp(log_W - log_rhs),
                     "eigen_residual": xs["eigen_residual"]})
    return rows


def backward_residual(N: int, n: int = 2, reversed_family: bool = False, times: int = 11,
                      N_x: int | None = None) -> float:
    """Relative residual of ``D_t u + Laplacian u = f`` for one backward family member.

    Time factors are exact; the Laplacian is spectral.  The residual is measured
    against the size of the largest term, which is the scale at which the floating
    point cancellation happens.
    """
    spec = _family_grid(n, N, N_x, 5)
    X = GridFunction.sample(spec, lambda t, xs: np.sin(N * xs[0]) + 0 * t).values[0, ..., 0]
    lap = GridFunction.sample(spec, lambda t, xs: np.sin(N * xs[0]) + 0 * t)
    lapX = sum(spatial_derivative(lap, al).values[0, ..., 0] for al in multi_indices(n, 2) if max(al) == 2)
    a = float(N * N)
    worst = 0.0
    # every term is divided by e^a so large N stays finite
    base = 1.0 if reversed_family else math.exp(-a)
    for t in np.linspace(0.0, 1.0, times):
        T = math.exp(a * (t - 1)) - base
        dT = a * math.exp(a * (t - 1))
        f_t = a * base
        r = dT * X + T * lapX - f_t * X
        scale = max(abs(dT), abs(T) * a, abs(f_t)) * np.abs(X).max()
        if scale == 0:  # every term underflowed after scaling
            continue
        worst = max(worst, float(np.abs(r).max() / scale))
    return worst


def time_reversal_residual(N: int, n: int = 2, times: int = 11, N_x: int | None = None) -> float:
    """With ``tau = 1 - t``, ``U(tau) = u_N(1 - tau)`` solves ``(D_tau - Laplacian) U = -f``.

    Returns the relative residual of that forward heat equation (spectral in ``x``,
    exact in ``tau``).
    """
    spec = _family_grid(n, N, N_x, 5)
    Xg = GridFunction.sample(spec, lambda t, xs: np.sin(N * xs[0]) + 0 * t)
    X = Xg.values[0, ..., 0]
    lapX = sum(spatial_derivative(Xg, al).values[0, ..., 0] for al in multi_indices(n, 2) if max(al) == 2)
    a = float(N * N)
    worst = 0.0
    for tau in np.linspace(0.0, 1.0, times):
        # divided by e^a, as in backward_residual
        U = math.exp(-a * tau) - math.exp(-a)
        dU = -a * math.exp(-a * tau)
        r = dU * X - U * lapX + a * math.exp(-a) * X
        scale = max(abs(dU), abs(U) * a, a * math.exp(-a)) * np.abs(X).max()
        if scale == 0:
            continue
        worst = max(worst, float(np.abs(r).max() / scale))
    return worst


def family_positive_real(N_values: Sequence[int] = (2, 3, 4, 5), n: int = 2, N_x: int | None = None,
                         log_domain: bool = True) -> FamilyReport:
    """Backward-heat family ``u_N = (e^{N^2 t} - 1) sin(N x_1)``; ratio slope ~ 2."""
    rows = _backward_rows(N_values, n, False, N_x, log_domain)
    fits = {
        "ratio": fit_slope(N_values, [r["log_ratio"] for r in rows]),
        "W_minus_N2": fit_slope(N_values, [r["log_W_inner"] - r["N"] ** 2 for r in rows]),
        "rhs_minus_N2": fit_slope(N_values, [r["log_rhs"] - r["N"] ** 2 for r in rows]),
    }
    checks = {
        "residual": all(backward_residual(N, n) < 1e-6 for N in N_values),
        "spatial_eigenfunction": all(r["eigen_residual"] < 1e-8 for r in rows),
        "zero_initial_trace": True,  # e^{0} - 1 == 0 exactly
        "time_reversal_forward_heat": time_reversal_residual(min(N_values), n) < 1e-8,
    }
    return FamilyReport("positive-real", list(N_values), rows, fits,
                        {"ratio": (2.0, 0.15, "ls")},
                        checks)


def family_reversed(N_values: Sequence[int] = (2, 3, 4, 5), n: int = 2, N_x: int | None = None) -> FamilyReport:
    """``v_N = (e^{N^2 t} - e^{N^2}) sin(N x_1)`` vanishes at ``t = 1``; its a priori ratio stays bounded."""
    rows = _backward_rows(N_values, n, True, N_x, True)
    fits = {"ratio": fit_slope(N_values, [r["log_ratio"] for r in rows])}
    checks = {
        "residual": all(backward_residual(N, n, reversed_family=True) < 1e-6 for N in N_values),
        "zero_final_trace": True,  # e^{a} - e^{a} == 0 exactly
    }
    rep = FamilyReport("reversed", list(N_values), rows, fits, {"ratio": (0.0, 0.1, "at_most")}, checks)
    rep.notes.append("bounded means the ratio does not grow; over small N it decreases towards its limit, "
                     "so the least-squares slope is negative")
    return rep


# -- Hoelder-failure field --------------------------------------------------------------------


def holder_window(n: int, p: float) -> tuple[float, float]:
    """Admissible ``mu``: ``(1 - (n+2)/(2p), 1 - (n+1)/(2p))``."""
    return 1 - (n + 2) / (2 * p), 1 - (n + 1) / (2 * p)


def _check_holder_args(n: int, p: float, mu: float):
    if p <= n + 1:
        raise CounterexampleError(f"need p > n + 1 = {n + 1}, got {p}")
    lo, hi = holder_window(n, p)
    if not lo < mu < hi:
        raise CounterexampleError(f"mu = {mu} outside the window ({lo:.6g}, {hi:.6g}) for n={n}, p={p}")


def _phi(s):
    return s * np.exp(-s)


def _psi(s, mu):
    # radial derivative profile: v_r = r^{2mu-1} psi(s), s = r^2 / |t-1|
    return (2 * mu * s + 2 * s * (1 - s)) * np.exp(-s)


def _dpsi(s, mu):
    return (2 * mu + 2 - 4 * s - (2 * mu * s + 2 * s - 2 * s * s)) * np.exp(-s)


def holder_field(x, t, mu: float) -> np.ndarray:
    """``v(x, t)``; ``x`` has shape ``(..., n)``.  Zero at ``t = 1`` and at ``x = 0``."""
    x = np.asarray(x, dtype=float)
    r2 = np.sum(x * x, axis=-1)
    d = np.abs(np.asarray(t, dtype=float) - 1.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        s = np.where(d > 0, r2 / np.where(d > 0, d, 1.0), np.inf)
        out = np.where(np.isfinite(s), r2**mu * _phi(np.where(np.isfinite(s), s, 0.0)), 0.0)
    return out


def holder_gradient(x, t, mu: float) -> np.ndarray:
    """``D_x v``, shape ``(..., n)``."""
    x = np.asarray(x, dtype=float)
    r = np.sqrt(np.sum(x * x, axis=-1))
    d = np.abs(np.asarray(t, dtype=float) - 1.0)
    ok = (d > 0) & (r > 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        s = np.where(ok, r * r / np.where(d > 0, d, 1.0), 0.0)
        vr = np.where(ok, np.where(r > 0, r, 1.0) ** (2 * mu - 1) * _psi(s, mu), 0.0)
        unit = np.where(ok[..., None], x / np.where(r > 0, r, 1.0)[..., None], 0.0)
    return vr[..., None] * unit


def _forcing_polar(r, d, side, mu: float, n: int):
    """``f`` in terms of ``r = |x|``, ``d = |t - 1| > 0`` and ``side = sign(t - 1)``."""
    s = r * r / d
    lap = r ** (2 * mu - 2) * ((2 * mu + n - 2) * _psi(s, mu) + 2 * s * _dpsi(s, mu))
    dt = side * r ** (2 * mu - 2) * s * (s - 1) * _phi(s)
    return dt - lap


def holder_forcing(x, t, mu: float) -> np.ndarray:
    """``f = D_t v - Laplacian v`` in closed form (valid for ``t != 1``, ``x != 0``)."""
    x = np.asarray(x, dtype=float)
    tt = np.asarray(t, dtype=float)
    r = np.sqrt(np.sum(x * x, axis=-1))
    return _forcing_polar(r, np.abs(tt - 1.0), np.sign(tt - 1.0), mu, x.shape[-1])


def holder_pde_check(mu: float, n: int = 2, points: int = 20, seed: int = 0, h: float = 1e-4) -> float:
    """Max relative gap between the closed-form ``f`` and a finite-difference ``D_t v - Laplacian v``."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(points):
        x = rng.uniform(-0.6, 0.6, size=n)
        t = 1.0 + rng.choice([-1, 1]) * rng.uniform(0.05, 0.5)
        e = np.eye(n) * h
        lap = sum((holder_field(x + e[i], t, mu) - 2 * holder_field(x, t, mu) + holder_field(x - e[i], t, mu)) / h**2
                  for i in range(n))
        dt = (holder_field(x, t + h, mu) - holder_field(x, t - h, mu)) / (2 * h)
        f = holder_forcing(x, t, mu)
        worst = max(worst, float(abs(dt - lap - f) / max(abs(f), 1e-12)))
    return worst


def _sphere_volume(n: int) -> float:
    return 2 * math.pi ** (n / 2) / gamma_fn(n / 2)


def holder_lp_integral(mu: float, p: float, n: int = 2, levels: int = 12, k: int = 12) -> float:
    """``int_Q |f|^p`` restricted to ``|x| > 2^-levels``, ``Q = {|x| <= 1, 0 < t < 2}``.

    Radial symmetry reduces the integral to ``(r, t)``; both are split into dyadic
    cells accumulating at ``(0, 1)`` with Gauss-Legendre nodes per cell.
    """
    xg, wg = np.polynomial.legendre.leggauss(k)
    r_edges = 2.0 ** -np.arange(levels + 1)[::-1]
    d_levels = 2 * levels + 8  # below r_min^2 / 2^8 the Gaussian factor has vanished
    d_edges = np.concatenate([[0.0], 2.0 ** -np.arange(d_levels, -1, -1)])
    rs, rw = [], []
    for a, b in zip(r_edges[:-1], r_edges[1:]):
        rs.append(0.5 * (b - a) * xg + 0.5 * (a + b))
        rw.append(0.5 * (b - a) * wg)
    rs, rw = np.concatenate(rs), np.concatenate(rw)
    ds, dw = [], []
    for a, b in zip(d_edges[:-1], d_edges[1:]):
        ds.append(0.5 * (b - a) * xg + 0.5 * (a + b))
        dw.append(0.5 * (b - a) * wg)
    ds, dw = np.concatenate(ds), np.concatenate(dw)
    total = 0.0
    for sign in (-1.0, 1.0):
        R, D = np.meshgrid(rs, ds, indexing="ij")
        f = _forcing_polar(R, D, sign, mu, n)
        W = np.outer(rw * rs ** (n - 1), dw)
        total += float(np.sum(W * np.abs(f) ** p))
    return float(total * _sphere_volume(n))


@dataclass
class HolderReport:
    n: int
    p: float
    mu: float
    window: tuple
    predicted_exponent: float
    fitted_exponent: float
    fit: SlopeFit
    gamma: float
    lp_integrals: list  # per refinement level
    lp_converged: bool
    lp_increment_ratio: float  # < 1 means the dyadic contributions decay geometrically
    gradient_maxima: list  # max |D_x v| over the grid, per refinement level
    blow_up: bool
    rotation_gap: float
    pde_gap: float
    levels: list

    @property
    def exponent_ok(self) -> bool:
        return abs(self.fitted_exponent - self.predicted_exponent) <= 0.05

    @property
    def refutes_gamma(self) -> bool:
        return self.fitted_exponent < self.gamma

    def rows(self) -> list[dict]:
        return [{"level": L, "lp_integral": I, "grad_max": g}
                for L, I, g in zip(self.levels, self.lp_integrals, self.gradient_maxima)]

    def summary(self) -> str:
        return (f"n={self.n} p={self.p} mu={self.mu}: window ({self.window[0]:.4f}, {self.window[1]:.4f}); "
                f"gradient exponent fitted {self.fitted_exponent:.4f} vs 2mu-1={self.predicted_exponent:.4f}; "
                f"gamma=1-(n+1)/p={self.gamma:.4f}; L^p integral converged={self.lp_converged} "
                f"(increment ratio {self.lp_increment_ratio:.3f}); "
                f"blow-up={self.blow_up}")


def holder_counterexample(mu: float, p: float, n: int = 2, max_level: int = 12, angles: int = 16,
                          time_per_octave: int = 4) -> HolderReport:
    """Radial exponent of ``|D_x v|`` near ``(0, 1)`` and ``L^p`` convergence of ``f``.

    The grid is geometric: radii ``2^-k`` (``k <= max_level``) times a tensor angular
    sample, and times ``1 +- 2^{-j/time_per_octave}``.  The gradient sup at each radius
    is fitted against ``r`` on the finer half of the levels.
    """
    _check_holder_args(n, p, mu)
    if n != 2 and angles:
        # tensor angular sampling implemented for the plane; other n use axis directions
        dirs = np.vstack([np.eye(n), -np.eye(n)])
    else:
        th = 2 * np.pi * np.arange(angles) / angles
        dirs = np.stack([np.cos(th), np.sin(th)], axis=-1)
    j_max = time_per_octave * (2 * max_level + 4)
    d = 2.0 ** (-np.arange(j_max + 1) / time_per_octave)
    times = np.concatenate([1 - d, 1 + d])
    ks = np.arange(max_level + 1)
    sup_r = []
    for k in ks:
        x = (2.0 ** -k) * dirs
        g = holder_gradient(x[:, None, :], times[None, :], mu)
        sup_r.append(float(np.linalg.norm(g, axis=-1).max()))
    fine = ks >= max_level // 2
    fit = fit_slope(2.0 ** -ks[fine], np.log(np.array(sup_r)[fine]))
    # rotation invariance on symmetric pairs
    rng = np.random.default_rng(0)
    x = rng.uniform(-0.5, 0.5, size=(32, n))
    Q, _ = np.linalg.qr(rng.normal(size=(n, n)))
    tt = 1 + rng.uniform(-0.5, 0.5, size=32)
    gap_v = np.abs(holder_field(x, tt, mu) - holder_field(x @ Q.T, tt, mu)).max()
    gap_g = np.abs(np.linalg.norm(holder_gradient(x, tt, mu), axis=-1)
                   - np.linalg.norm(holder_gradient(x @ Q.T, tt, mu), axis=-1)).max()
    levels = list(range(max(4, max_level - 6), max_level + 1, 2))
    integrals = [holder_lp_integral(mu, p, n, L) for L in levels]
    changes = [abs(b - a) / abs(b) for a, b in zip(integrals[:-1], integrals[1:])]
    incs = np.diff(integrals)
    inc_ratio = float(incs[-1] / incs[-2]) if len(incs) >= 2 and incs[-2] != 0 else math.nan
    grad_max = [max(sup_r[: L + 1]) for L in levels]
    blow = all(b > a * (1 + 1e-9) for a, b in zip(grad_max[:-1], grad_max[1:]))
    return HolderReport(n, p, mu, holder_window(n, p), 2 * mu - 1, fit.slope, fit, 1 - (n + 1) / p, integrals,
                        bool(changes and changes[-1] < 0.05), inc_ratio, grad_max, blow, float(max(gap_v, gap_g)),
                        holder_pde_check(mu, n), levels)


FAMILIES = {
    "zero-real": family_zero_real,
    "positive-real": family_positive_real,
    "reversed": family_reversed,
}
