"""Fundamental matrix of a constant-coefficient parabolic system.

``Gamma(x, t)`` is the inverse Fourier transform of ``exp(t M(xi))``.  The
transform is a trapezoid sum over a truncated, uniformly spaced xi-grid whose
extent and spacing are adapted to each ``t``:

* truncation ``Xi(t)`` from the parabolic decay envelope ``exp(-delta t |xi|^{2b})``;
* spacing ``2 pi / L`` with period ``L`` large enough that the periodic images of
  the kernel are below double precision at the evaluation points.

Two routes compute the transformed kernel: the matrix exponential (default) and
the cofactor/residue route ``sum_s e^{p_s t} adj(p_s - M) / prod_{r != s}(p_s - p_r)``,
switching to contour quadrature around clustered roots.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.linalg import expm

from .symbol import (
    MultiIndex,
    ParabolicityReport,
    ParabolicSystem,
    check_parabolicity,
    multi_indices,
    sphere_samples,
    symbol_matrices,
)

ROOT_GAP = 1e-6
CONTOUR_NODES = 64
ENVELOPE_LOG = math.log(1e14)
# half-width of the kernel in units of (kappa t)^{1/2b}, per b
_WIDTH = {1: 12.0, 2: 40.0}
_WIDTH_DEFAULT = 50.0


EIG_COND_MAX = 1e4


def matrix_functions(A: np.ndarray, fns, fallback):
    """Apply scalar functions to a stack of matrices ``(K, m, m)`` by eigendecomposition.

    Matrices whose eigenvector basis has condition number above ``EIG_COND_MAX``
    (near-defective ones) go through ``fallback(A_subset)``, which must return the
    same list of arrays.  Batched ``scipy.linalg.expm`` loops over the stack in
    Python, so the eigen route is much faster for the many small symbols used here.
    """
    out = [np.empty(A.shape, dtype=A.dtype) for _ in fns]
    if A.shape[0] == 0:
        return out
    w, V = np.linalg.eig(A)
    with np.errstate(all="ignore"):
        cond = np.linalg.cond(V)
    ok = np.isfinite(cond) & (cond < EIG_COND_MAX)
    if ok.any():
        Vo = V[ok]
        Vi = np.linalg.inv(Vo)
        for dst, f in zip(out, fns):
            vals = np.einsum("kij,kj,kjl->kil", Vo, f(w[ok]), Vi)
            dst[ok] = vals.real if np.isrealobj(A) else vals
    if not ok.all():
        for dst, vals in zip(out, fallback(A[~ok])):
            dst[~ok] = vals
    return out


def expm_batch(A: np.ndarray) -> np.ndarray:
    """``e^A`` for a stack ``(K, m, m)``."""
    if A.shape[-1] == 1:
        return np.exp(A)
    return matrix_functions(A, [np.exp], lambda B: [expm(B)])[0]


class FundamentalSolutionError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class FrozenOperator:
    """A parabolic constant-coefficient system with its decay constants.

    Attributes
    ----------
    delta : float
        Parabolicity margin ``min_{|xi|=1} -max Re p(xi)``.
    kappa : float
        ``max_{|xi|=1} max |p(xi)|``, the widest spatial spread of the kernel.
    """

    system: ParabolicSystem
    report: ParabolicityReport
    delta: float
    kappa: float

    @classmethod
    def from_system(cls, system: ParabolicSystem, n_samples: int | None = None) -> "FrozenOperator":
        rep = check_parabolicity(system, n_samples)
        if not rep.is_parabolic:
            raise FundamentalSolutionError(
                f"system is not parabolic (margin {rep.margin:.3g} at xi={np.round(rep.worst_xi, 6).tolist()}); "
                "no fundamental matrix is constructed"
            )
        pts = sphere_samples(system.n, 512 if system.n > 1 else 2)
        kappa = float(np.abs(np.linalg.eigvals(symbol_matrices(system, pts))).max())
        return cls(system, rep, rep.delta_hat, max(kappa, rep.delta_hat))

    @property
    def n(self) -> int:
        return self.system.n

    @property
    def m(self) -> int:
        return self.system.m

    @property
    def b(self) -> int:
        return self.system.b


# -- transformed kernels -----------------------------------------------------------------


def _adjugate(A: np.ndarray) -> np.ndarray:
    """Batched adjugate (transposed cofactor matrix) of ``(..., m, m)`` arrays."""
    m = A.shape[-1]
    if m == 1:
        return np.ones_like(A)
    out = np.empty_like(A)
    for i in range(m):
        for j in range(m):
            minor = np.delete(np.delete(A, i, axis=-2), j, axis=-1)
            out[..., j, i] = (-1) ** (i + j) * np.linalg.det(minor)
    return out


def _circle_nodes(center, radius, count=CONTOUR_NODES):
    theta = 2 * np.pi * (np.arange(count) + 0.5) / count
    z = np.exp(1j * theta)
    return center[..., None] + radius[..., None] * z, radius[..., None] * z / count


def _contour_radius(roots: np.ndarray, t: float):
    c = roots.mean(axis=-1)
    spread = np.abs(roots - c[..., None]).max(axis=-1)
    return c, np.maximum(3 * spread, 1.0 / t)


def _clusters(r: np.ndarray, thresh: float) -> list[np.ndarray]:
    """Single-linkage clusters of complex roots ``r`` with link distance ``thresh``."""
    k = r.size
    label = np.arange(k)
    for i in range(k):
        for j in range(i + 1, k):
            if abs(r[i] - r[j]) <= thresh:
                label[label == label[j]] = label[i]
    return [np.flatnonzero(label == u) for u in np.unique(label)]


def _transformed(mats: np.ndarray, roots: np.ndarray, t: float, kind: str) -> np.ndarray:
    """Residue/contour evaluation of ``(1/2 pi i) oint e^{pt} R(p) dp`` per xi.

    ``kind == "cofactor"`` integrates the resolvent (matrix result); ``"scalar"``
    integrates ``1/det(p - M)``.
    """
    nb, m = roots.shape
    out_shape = (nb, m, m) if kind == "cofactor" else (nb,)
    out = np.zeros(out_shape, dtype=complex)
    if m == 1:
        e = np.exp(roots[:, 0] * t)
        return e[:, None, None] if kind == "cofactor" else e
    diff = roots[:, :, None] - roots[:, None, :]
    idx = np.arange(m)
    diff[:, idx, idx] = np.inf
    gap = np.abs(diff).min(axis=(1, 2))
    scale = np.abs(roots).max(axis=1)
    simple = gap > ROOT_GAP * np.maximum(scale, 1e-300)
    eye = np.eye(m)

    if simple.any():
        r = roots[simple]
        d = diff[simple].copy()
        d[:, idx, idx] = 1.0
        denom = d.prod(axis=2)  # prod_{r != s}(p_s - p_r)
        w = np.exp(r * t) / denom
        if kind == "scalar":
            out[simple] = w.sum(axis=1)
        else:
            A = r[:, :, None, None] * eye - mats[simple][:, None].astype(complex)
            out[simple] = np.einsum("bs,bsij->bij", w, _adjugate(A))

    rest = np.flatnonzero(~simple)
    if rest.size:
        c, rad = _contour_radius(roots[rest], t)
        spread_ok = (rad * t <= 8.0) | (rad <= 1.0 / t + 1e-300)
        fast = rest[spread_ok]
        if fast.size:
            out[fast] = _circle_integral(mats[fast], roots[fast], c[spread_ok], rad[spread_ok], t, kind)
        for i in rest[~spread_ok]:
            out[i] = _clustered_integral(mats[i], roots[i], t, kind, ROOT_GAP * scale[i])
    return out


def _circle_integral(mats, roots, center, radius, t, kind):
    p, w = _circle_nodes(center, radius)  # (B, K)
    ew = np.exp(p * t) * w
    if kind == "scalar":
        det = np.prod(p[:, :, None] - roots[:, None, :], axis=-1)
        return (ew / det).sum(axis=1)
    m = mats.shape[-1]
    A = p[:, :, None, None] * np.eye(m) - mats[:, None].astype(complex)
    R = np.linalg.inv(A)
    return np.einsum("bk,bkij->bij", ew, R)


def _clustered_integral(M, roots, t, kind, thresh):
    """Residues at isolated roots plus one small circle per root cluster."""
    m = M.shape[0]
    total = np.zeros((m, m), dtype=complex) if kind == "cofactor" else 0j
    groups = _clusters(roots, max(thresh, 1e-300))
    for g in groups:
        others = np.delete(roots, g)
        if g.size == 1:
            p = roots[g[0]]
            denom = np.prod(p - others)
            if kind == "scalar":
                total += np.exp(p * t) / denom
            else:
                total += np.exp(p * t) * _adjugate(p * np.eye(m) - M.astype(complex)) / denom
            continue
        c = roots[g].mean()
        r_mem = np.abs(roots[g] - c).max()
        d_out = np.abs(others - c).min() if others.size else np.inf
        rad = min(max(3 * r_mem, 1.0 / t), r_mem + 0.5 * (d_out - r_mem))
        p, w = _circle_nodes(np.array([c]), np.array([rad]), 2 * CONTOUR_NODES)
        p, w = p[0], w[0]
        ew = np.exp(p * t) * w
        if kind == "scalar":
            total += (ew / np.prod(p[:, None] - roots[None, :], axis=-1)).sum()
        else:
            R = np.linalg.inv(p[:, None, None] * np.eye(m) - M.astype(complex))
            total += np.einsum("k,kij->ij", ew, R)
    return total


# -- the evaluator -------------------------------------------------------------------------


@dataclass
class _Spectrum:
    axis: np.ndarray  # xi nodes (shared by all axes)
    hat: np.ndarray  # (N,)*n + (m, m) for matrix kinds, (N,)*n for scalar
    xi_max: float
    period: float


class FundamentalMatrix:
    """Evaluator for ``Gamma(x, t)`` and its spatial derivatives.

    Parameters
    ----------
    operator : FrozenOperator or ParabolicSystem
        A parabolic constant-coefficient system (non-parabolic systems are rejected).
    x_min : float
        Smallest evaluation radius used to size the period.  Each query is covered
        by the power-of-two radius bucket containing its largest ``|x|``.
    route : {"exp", "cofactor"}
        Default route for matrix evaluations.
    """

    def __init__(self, operator, x_min: float = 2.0**-6, route: str = "exp"):
        if isinstance(operator, ParabolicSystem):
            operator = FrozenOperator.from_system(operator)
        if route not in ("exp", "cofactor"):
            raise ValueError("route must be 'exp' or 'cofactor'")
        self.op = operator
        self.x_min = float(x_min)
        self.route = route
        self._cache: dict = {}

    @property
    def n(self) -> int:
        return self.op.n

    @property
    def m(self) -> int:
        return self.op.m

    @property
    def b(self) -> int:
        return self.op.b

    def xi_cutoff(self, t: float) -> float:
        """Smallest ``Xi`` where the envelope (with polynomial slack) drops below 1e-14."""
        b, n, m = self.b, self.n, self.m
        d, k = self.op.delta, self.op.kappa

        def excess(X):
            return (d * t * X ** (2 * b) - (2 * b + 1 + n) * math.log1p(X)
                    - (m - 1) * math.log1p(k * t * X ** (2 * b)) - ENVELOPE_LOG)

        X = (ENVELOPE_LOG / (d * t)) ** (1 / (2 * b))
        while excess(X) < 0:
            X *= 1.1
        return X

    def period(self, t: float, x_cap: float) -> float:
        width = _WIDTH.get(self.b, _WIDTH_DEFAULT) * (self.op.kappa * t) ** (1 / (2 * self.b))
        return 2 * (x_cap + width)

    def _x_cap(self, xabs: float) -> float:
        if xabs <= self.x_min:
            return self.x_min
        return 2.0 ** math.ceil(math.log2(xabs))

    def spectrum(self, t: float, x_cap: float | None = None, kind: str | None = None) -> _Spectrum:
        """Transformed kernel on the adapted xi-grid (cached per ``(t, x_cap, kind)``)."""
        if not t > 0:
            raise FundamentalSolutionError(f"kernel is evaluated only for t > 0, got t={t}")
        kind = kind or self.route
        x_cap = 1.0 if x_cap is None else x_cap
        key = (float(t), float(x_cap), kind)
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        X = self.xi_cutoff(t)
        L = self.period(t, x_cap)
        half = int(math.ceil(X * L / (2 * math.pi)))
        dxi = 2 * math.pi / L
        axis = dxi * np.arange(-half, half + 1)
        n = self.n
        grids = np.meshgrid(*([axis] * n), indexing="ij")
        xi = np.stack([g.ravel() for g in grids], axis=-1)
        mats = symbol_matrices(self.op.system, xi)
        if kind == "exp":
            if self.m == 1:
                hat = np.exp(t * mats)
            else:
                hat = expm_batch(t * mats)
        else:
            roots = np.linalg.eigvals(mats)
            hat = _transformed(mats, roots, t, "cofactor" if kind == "cofactor" else "scalar").real
        shape = (axis.size,) * n
        hat = hat.reshape(shape + ((self.m, self.m) if kind != "scalar" else ()))
        spec = _Spectrum(axis, np.real(hat), X, L)
        self._cache[key] = spec
        return spec

    @staticmethod
    def _multiplier(axis: np.ndarray, alpha: MultiIndex, n: int) -> np.ndarray:
        out = np.ones((axis.size,) * n, dtype=complex)
        for j, a in enumerate(alpha):
            if a:
                shp = [1] * n
                shp[j] = -1
                out = out * ((1j * axis) ** a).reshape(shp)
        return out

    def _check_alpha(self, alpha) -> MultiIndex:
        alpha = (0,) * self.n if alpha is None else tuple(int(a) for a in alpha)
        if len(alpha) != self.n or min(alpha) < 0:
            raise ValueError(f"multi-index {alpha} invalid for n={self.n}")
        if sum(alpha) > 2 * self.b + 1:
            raise FundamentalSolutionError(f"derivative order {sum(alpha)} exceeds 2b+1={2 * self.b + 1}")
        return alpha

    def evaluate(self, x, t: float, alpha=None, kind: str | None = None) -> np.ndarray:
        """``D^alpha Gamma`` at points ``x`` (shape ``(K, n)`` or ``(n,)``); zero for ``t <= 0``."""
        alpha = self._check_alpha(alpha)
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        x = np.atleast_2d(x)
        kind = kind or self.route
        tail = (self.m, self.m) if kind != "scalar" else ()
        if t <= 0:
            out = np.zeros((x.shape[0],) + tail)
            return out[0] if single else out
        sp = self.spectrum(t, self._x_cap(float(np.abs(x).max(initial=0.0)) * math.sqrt(self.n)), kind)
        n, N = self.n, sp.axis.size
        H = sp.hat * (self._multiplier(sp.axis, alpha, n).reshape((N,) * n + (1,) * len(tail)))
        q = int(np.prod(tail)) if tail else 1
        H = H.reshape((N,) * n + (q,))
        w = (sp.axis[1] - sp.axis[0]) / (2 * np.pi)
        chunk = max(1, int(4e6 // (N ** max(n - 1, 1) * q)))
        res = np.empty((x.shape[0], q))
        for s in range(0, x.shape[0], chunk):
            xs = x[s : s + chunk]
            E = [np.exp(1j * np.outer(xs[:, j], sp.axis)) for j in range(n)]
            T = E[0] @ H.reshape(N, -1)  # (k, N^{n-1} q)
            T = T.reshape((xs.shape[0],) + (N,) * (n - 1) + (q,))
            for j in range(1, n):
                T = np.einsum("kb,kb...->k...", E[j], T)
            res[s : s + chunk] = T.real * w**n
        res = res.reshape((x.shape[0],) + tail)
        return res[0] if single else res

    def evaluate_grid(self, axes: Sequence[np.ndarray], t: float, alpha=None, kind: str | None = None) -> np.ndarray:
        """``D^alpha Gamma`` on the tensor grid ``axes`` -> shape ``(N_1, ..., N_n, m, m)``."""
        alpha = self._check_alpha(alpha)
        kind = kind or self.route
        xabs = math.sqrt(sum(float(np.abs(a).max()) ** 2 for a in axes))
        sp = self.spectrum(t, self._x_cap(xabs), kind)
        n, N = self.n, sp.axis.size
        tail = sp.hat.shape[n:]
        H = sp.hat * self._multiplier(sp.axis, alpha, n).reshape((N,) * n + (1,) * len(tail))
        w = (sp.axis[1] - sp.axis[0]) / (2 * np.pi)
        for j, ax in enumerate(axes):
            E = np.exp(1j * np.outer(np.asarray(ax, dtype=float), sp.axis))
            H = np.moveaxis(np.tensordot(E, H, axes=([1], [j])), 0, j)
        return H.real * w**n


def scalar_fundamental(fm: FundamentalMatrix, x, t: float) -> float | np.ndarray:
    """The scalar kernel ``inverse FT of oint e^{pt} / det(p - M(xi)) dp``."""
    return fm.evaluate(x, t, kind="scalar")


def matrix_fundamental(fm: FundamentalMatrix, x, t: float, route: str | None = None) -> np.ndarray:
    """``Gamma(x, t)`` as an ``m x m`` matrix (or a stack for several points)."""
    return fm.evaluate(x, t, kind=route or fm.route)


def kernel_derivative(fm: FundamentalMatrix, alpha, x, t: float) -> np.ndarray:
    """``D^alpha Gamma(x, t)`` with ``|alpha| <= 2b`` (the exponential route)."""
    if sum(alpha) > 2 * fm.b:
        raise FundamentalSolutionError(f"|alpha|={sum(alpha)} exceeds 2b={2 * fm.b}")
    return fm.evaluate(x, t, alpha=alpha, kind="exp")


@dataclass(frozen=True)
class RouteComparison:
    max_rel_diff: float
    worst_point: tuple
    agree: bool


def compare_routes(fm: FundamentalMatrix, points, times, tol: float = 1e-6) -> RouteComparison:
    """Relative disagreement between the exponential and cofactor routes."""
    worst = (0.0, None)
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    for t in times:
        a = fm.evaluate(pts, t, kind="exp")
        c = fm.evaluate(pts, t, kind="cofactor")
        scale = np.abs(a).max()
        err = np.abs(a - c).max(axis=(1, 2)) / scale
        k = int(np.argmax(err))
        if err[k] > worst[0] or worst[1] is None:
            worst = (float(err[k]), tuple(pts[k]) + (float(t),))
    return RouteComparison(worst[0], worst[1], worst[0] <= tol)


# -- parabolic unit sphere --------------------------------------------------------------------


def _gl(a: float, b: float, k: int):
    x, w = np.polynomial.legendre.leggauss(k)
    return 0.5 * (b - a) * x + 0.5 * (b + a), 0.5 * (b - a) * w


def unit_sphere_rule(n: int, k: int = 32) -> tuple[np.ndarray, np.ndarray]:
    """Quadrature on the Euclidean unit sphere in ``R^n``: nodes ``(K, n)``, weights ``(K,)``."""
    if n == 1:
        return np.array([[1.0], [-1.0]]), np.ones(2)
    if n == 2:
        th = 2 * np.pi * np.arange(2 * k) / (2 * k)
        return np.stack([np.cos(th), np.sin(th)], axis=-1), np.full(2 * k, np.pi / k)
    if n == 3:
        z, wz = np.polynomial.legendre.leggauss(k)
        ph = 2 * np.pi * np.arange(2 * k) / (2 * k)
        Z, P = np.meshgrid(z, ph, indexing="ij")
        s = np.sqrt(1 - Z**2)
        nodes = np.stack([s * np.cos(P), s * np.sin(P), Z], axis=-1).reshape(-1, 3)
        w = np.multiply.outer(wz, np.full(2 * k, np.pi / k)).ravel()
        return nodes, w
    raise NotImplementedError("sphere quadrature is provided for n <= 3")


def log_time_rule(t_lo: float, t_hi: float, panels: int = 8, k: int = 16):
    """Composite Gauss-Legendre in ``log t``; returns nodes and weights for ``dt``."""
    edges = np.linspace(math.log(t_lo), math.log(t_hi), panels + 1)
    nodes, weights = [], []
    for a, b in zip(edges[:-1], edges[1:]):
        s, w = _gl(a, b, k)
        nodes.append(np.exp(s))
        weights.append(w * np.exp(s))
    return np.concatenate(nodes), np.concatenate(weights)


def lateral_time_floor(fm: FundamentalMatrix) -> float:
    """Time below which the kernel at ``|x| = 1`` is negligible (super-exponential decay)."""
    b, k = fm.b, fm.op.kappa
    # the kernel behaves like exp(-c (|x|^{2b} / (kappa t))^{1/(2b-1)}); c ~ 1/4 for b = 1
    c = 0.25 if b == 1 else 0.2
    return 1.0 / (k * (40.0 / c) ** (2 * b - 1))


@dataclass
class SphereRule:
    """Quadrature for the parabolic unit sphere ``{max(|x|, |t|^{1/2b}) = 1, t > 0}``.

    The lateral piece ``{|x| = 1, 0 < t <= 1}`` carries ``dS(x) dt``; the cap
    ``{|x| < 1, t = 1}`` carries ``2b dx``.  With these weights a kernel homogeneous
    of degree ``-(n+2b)`` integrates to the same value over every parabolic sphere.
    """

    lateral_x: np.ndarray  # (Ka, n)
    lateral_xw: np.ndarray  # (Ka,)
    lateral_t: np.ndarray  # (Kt,)
    lateral_tw: np.ndarray
    cap_x: np.ndarray  # (Kc, n)
    cap_w: np.ndarray  # (Kc,), includes the 2b factor

    def integrate(self, fm: FundamentalMatrix, alpha, weight_fn=None, absolute=False) -> np.ndarray:
        """``int D^alpha Gamma * weight_fn(x)`` over the sphere (``m x m``)."""
        def fx(x):
            return np.ones(x.shape[0]) if weight_fn is None else weight_fn(x)

        acc = np.zeros((fm.m, fm.m))
        wl = self.lateral_xw * fx(self.lateral_x)
        for t, wt in zip(self.lateral_t, self.lateral_tw):
            vals = fm.evaluate(self.lateral_x, t, alpha)
            if absolute:
                vals = np.abs(vals)
            acc += wt * np.einsum("k,kij->ij", wl, vals)
        vals = fm.evaluate(self.cap_x, 1.0, alpha)
        if absolute:
            vals = np.abs(vals)
        acc += np.einsum("k,kij->ij", self.cap_w * fx(self.cap_x), vals)
        return acc

    def sup(self, fm: FundamentalMatrix, alpha) -> float:
        best = 0.0
        for t in self.lateral_t:
            best = max(best, float(np.abs(fm.evaluate(self.lateral_x, t, alpha)).max()))
        return max(best, float(np.abs(fm.evaluate(self.cap_x, 1.0, alpha)).max()))


def parabolic_sphere_rule(fm: FundamentalMatrix, k_angle: int = 32, k_radial: int = 24,
                          panels: int = 10, k_time: int = 16) -> SphereRule:
    n, b = fm.n, fm.b
    xs, xw = unit_sphere_rule(n, k_angle)
    t, tw = log_time_rule(lateral_time_floor(fm), 1.0, panels, k_time)
    r, rw = _gl(0.0, 1.0, k_radial)
    if n == 1:
        cap_x = np.concatenate([r, -r])[:, None]
        cap_w = np.concatenate([rw, rw])
    else:
        cap_x = (r[:, None, None] * xs[None]).reshape(-1, n)
        cap_w = np.multiply.outer(rw * r ** (n - 1), xw).ravel()
    return SphereRule(xs, xw, t, tw, cap_x, 2 * b * cap_w)


# -- property report ------------------------------------------------------------------------


@dataclass
class PropertyReport:
    """Outcome of the P1-P5 checks.  ``passed`` maps property name to a boolean."""

    regularity_max_rel: float
    homogeneity_max_rel: dict = field(default_factory=dict)
    sphere_integrals: dict = field(default_factory=dict)
    sphere_mean_max: float = 0.0
    sphere_abs_integrals: dict = field(default_factory=dict)
    derivative_sup: dict = field(default_factory=dict)
    shell_slopes: dict = field(default_factory=dict)
    passed: dict = field(default_factory=dict)

    def rows(self) -> list[dict]:
        out = [{"property": "P1", "quantity": "fd_vs_spectral_rel", "value": self.regularity_max_rel}]
        for mu, v in self.homogeneity_max_rel.items():
            out.append({"property": "P2", "quantity": f"scaling_residual_mu={mu}", "value": v})
        for a, v in self.sphere_integrals.items():
            out.append({"property": "P3", "quantity": f"sphere_integral_alpha={list(a)}", "value": float(np.abs(v).max())})
        for o, v in self.derivative_sup.items():
            out.append({"property": "P4", "quantity": f"sphere_sup_order={o}", "value": v})
        for o, v in self.shell_slopes.items():
            out.append({"property": "P5", "quantity": f"shell_slope_order={o}", "value": v})
        return out


def _sample_points(n: int, count: int, rng) -> np.ndarray:
    pts = rng.normal(size=(count, n))
    pts /= np.linalg.norm(pts, axis=1, keepdims=True)
    return pts * rng.uniform(0.4, 1.6, size=(count, 1))


def homogeneity_residual(fm: FundamentalMatrix, alpha, mu: float, points, times) -> float:
    """max relative residual of ``D^a G(mu x, mu^{2b} t) = mu^{-n-|a|} D^a G(x, t)``."""
    worst = 0.0
    k = -fm.n - sum(alpha)
    for t in times:
        lhs = fm.evaluate(mu * points, mu ** (2 * fm.b) * t, alpha)
        rhs = mu**k * fm.evaluate(points, t, alpha)
        worst = max(worst, float(np.abs(lhs - rhs).max() / np.abs(rhs).max()))
    return worst


def shell_mass(fm: FundamentalMatrix, alpha, r: float, k_angle: int = 24, k_rad: int = 20,
               panels: int = 4, k_time: int = 12) -> float:
    """``int_{r < rho(x,t) < 2r} |D^alpha Gamma|`` by polar quadrature in ``x``.

    The shell splits into ``{r < |x| < 2r, 0 < t < (2r)^{2b}}`` and
    ``{|x| < r, r^{2b} < t < (2r)^{2b}}``.  Entries of the matrix are summed.
    """
    n, b = fm.n, fm.b
    om, ow = unit_sphere_rule(n, k_angle)
    floor = lateral_time_floor(fm) * r ** (2 * b)
    total = 0.0
    pieces = [((r, 2 * r), log_time_rule(floor, (2 * r) ** (2 * b), panels, k_time)),
              ((0.0, r), _gl(r ** (2 * b), (2 * r) ** (2 * b), k_time))]
    for (ra, rb), (ts, tw) in pieces:
        rho, rhow = _gl(ra, rb, k_rad)
        x = (rho[:, None, None] * om[None]).reshape(-1, n)
        wx = np.multiply.outer(rhow * rho ** (n - 1), ow).ravel()
        for t, wt in zip(ts, tw):
            vals = np.abs(fm.evaluate(x, t, alpha)).sum(axis=(1, 2))
            total += wt * float(wx @ vals)
    return total


def check_properties(fm: FundamentalMatrix, seed: int = 0, mus=(0.5, 2.0),
                     shell_radii=(1.0, 0.5, 0.25, 0.125), tol_homogeneity: float = 1e-5,
                     tol_sphere: float = 1e-6) -> PropertyReport:
    """Numerical checks of P1 (regularity) through P5 (integrability)."""
    rng = np.random.default_rng(seed)
    n, b = fm.n, fm.b
    pts = _sample_points(n, 12, rng)
    times = (0.5, 1.0)

    # P1: fourth-order differences of Gamma vs the spectral first derivatives
    h = 1e-3
    p1 = 0.0
    for j in range(n):
        e = np.zeros(n)
        e[j] = h
        for t in times:
            f = [fm.evaluate(pts + s * e, t) for s in (-2, -1, 1, 2)]
            fd = (f[0] - 8 * f[1] + 8 * f[2] - f[3]) / (12 * h)
            alpha = tuple(int(i == j) for i in range(n))
            sp = fm.evaluate(pts, t, alpha)
            p1 = max(p1, float(np.abs(fd - sp).max() / np.abs(sp).max()))

    # P2
    homog = {}
    for mu in mus:
        homog[mu] = max(homogeneity_residual(fm, a, mu, pts, times)
                        for order in (0, 2 * b) for a in multi_indices(n, order))

    # P3 / P4 on the parabolic unit sphere
    rule = parabolic_sphere_rule(fm)
    integrals = {a: rule.integrate(fm, a) for a in multi_indices(n, 2 * b)}
    abs_integrals = {a: rule.integrate(fm, a, absolute=True) for a in multi_indices(n, 2 * b)}
    sphere_max = max(float(np.abs(v).max()) for v in integrals.values())
    sups = {}
    for order in range(2 * b + 2):
        sups[order] = max(rule.sup(fm, a) for a in multi_indices(n, order))

    # P5: shell mass slope, log M(r) vs log r
    slopes = {}
    logs_r = np.log(shell_radii)
    for order in (2 * b - 1, 2 * b):
        a = multi_indices(n, order)[0]
        masses = [shell_mass(fm, a, r) for r in shell_radii]
        slopes[order] = float(np.polyfit(logs_r, np.log(masses), 1)[0])

    passed = {
        "P1": p1 < 1e-6,
        "P2": max(homog.values()) < tol_homogeneity,
        "P3": sphere_max < tol_sphere,
        "P4": all(np.isfinite(v) for v in sups.values()),
        "P5": all(abs(slopes[o] - (2 * b - o)) <= 0.05 for o in slopes),
    }
    return PropertyReport(p1, homog, integrals, sphere_max, abs_integrals, sups, slopes, passed)


def kernel_table(fm: FundamentalMatrix, alpha, times, half_width: float, points: int):
    """``D^alpha Gamma`` on a cube grid for each ``t``; returns ``(axis, values)``.

    ``values`` has shape ``(len(times), points, ..., points, m*m)`` ready for
    export as a grid function.
    """
    axis = np.linspace(-half_width, half_width, points)
    vals = [fm.evaluate_grid([axis] * fm.n, t, alpha).reshape((points,) * fm.n + (-1,)) for t in times]
    return axis, np.stack(vals)


def gaussian_kernel(x, t, n: int, diffusivity: float = 1.0, alpha=None) -> np.ndarray:
    """Closed-form heat kernel ``(4 pi k t)^{-n/2} exp(-|x|^2 / 4kt)`` and its derivatives."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    kt = diffusivity * t
    g = (4 * np.pi * kt) ** (-n / 2) * np.exp(-np.sum(x**2, axis=1) / (4 * kt))
    if alpha is None or sum(alpha) == 0:
        return g
    out = g.copy()
    # product of 1-d Hermite factors: d^a/dx^a e^{-x^2/4kt}
    for j, a in enumerate(alpha):
        if a:
            s = math.sqrt(2 * kt)
            y = x[:, j] / s
            He = np.polynomial.hermite_e.hermeval(y, [0] * a + [1])
            out *= (-1) ** a * He / s**a
    return out


__all__ = [
    "FrozenOperator", "FundamentalMatrix", "FundamentalSolutionError", "PropertyReport", "RouteComparison",
    "SphereRule", "check_properties", "compare_routes", "gaussian_kernel", "homogeneity_residual",
    "kernel_derivative", "kernel_table", "matrix_fundamental", "parabolic_sphere_rule", "scalar_fundamental",
    "shell_mass", "unit_sphere_rule",
]
