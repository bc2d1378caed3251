"""Volume potentials, principal-value singular operators and commutators.

For a constant-coefficient kernel ``k = D^alpha Gamma`` (``|alpha| = 2b``) the
truncated operator

    K_eps g(x, t) = int_{rho(x - y, t - s) > eps, s < t} k(x - y, t - s) g(y, s) dy ds

is evaluated in the spatial Fourier domain.  Splitting the time lag at
``eps^{2b}`` gives, per wave vector ``kappa``,

    (i kappa)^alpha e^{eps^{2b} M(kappa)} U(kappa, t - eps^{2b})
        + int_0^1 E(kappa eps, sigma) g_hat(kappa, t - eps^{2b} sigma) d sigma,

where ``U`` is the volume potential and ``E(eta, sigma)`` is the transform of
``k(., sigma)`` restricted to ``|y| > 1``.  ``E`` is computed as the full transform
minus a disk integral, which keeps the quadrature free of long oscillatory tails.
The ``eps -> 0`` limit uses Richardson extrapolation in ``eps^2``.
"""
from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.linalg import expm
from scipy.ndimage import map_coordinates

from .field import GridFunction, GridSpec, ParabolicCylinder, apply_operator, region_weights, spatial_derivative
from .fundsol import (
    FundamentalMatrix,
    _WIDTH,
    _WIDTH_DEFAULT,
    _gl,
    expm_batch,
    log_time_rule,
    matrix_functions,
    parabolic_sphere_rule,
    unit_sphere_rule,
)
from .symbol import MultiIndex, ParabolicSystem, multi_indices, symbol_matrices

ACTIVE_TOL = 1e-13


class PotentialError(ValueError):
    pass


class ExtrapolationWarning(UserWarning):
    pass


@dataclass(frozen=True)
class PVQuadrature:
    """Exclusion-radius ladder ``eps_k = eps0 / ratio^k`` and Richardson depth.

    ``eps0`` defaults to ``spacings`` grid spacings of the field being integrated.
    """

    eps0: float | None = None
    levels: int = 3
    ratio: float = 2.0
    spacings: float = 8.0

    def __post_init__(self):
        if self.levels < 3:
            raise ValueError("the ladder needs at least 3 rungs")
        if self.ratio <= 1:
            raise ValueError("ladder ratio must exceed 1")

    def ladder(self, h: float) -> list[float]:
        e0 = self.eps0 if self.eps0 is not None else self.spacings * h
        return [e0 / self.ratio**k for k in range(self.levels)]

    def shifted(self, factor: float, h: float) -> "PVQuadrature":
        return PVQuadrature(self.ladder(h)[0] * factor, self.levels, self.ratio, self.spacings)


def richardson(values: Sequence, eps: Sequence[float]):
    """Eliminate ``eps^2, eps^4, ...`` from values computed on a geometric ladder."""
    table = [list(values)]
    r2 = (eps[0] / eps[1]) ** 2
    for k in range(1, len(values)):
        prev = table[-1]
        f = r2**k
        table.append([(f * prev[i + 1] - prev[i]) / (f - 1) for i in range(len(prev) - 1)])
    return table[-1][0]


# -- kernels -------------------------------------------------------------------------------


class CZKernel:
    """``k(x, t; z, s) = D^alpha Gamma_{(x,t)}(z, s)`` for ``|alpha| = 2b``.

    With ``coeff_field`` absent the kernel does not depend on the base point.  With
    a coefficient field ``(x, t) -> {alpha: matrix}``, the fundamental matrix is
    that of the system frozen at the base point.
    """

    def __init__(self, system: ParabolicSystem, alpha: MultiIndex, coeff_field: Callable | None = None):
        alpha = tuple(int(a) for a in alpha)
        if len(alpha) != system.n or sum(alpha) != 2 * system.b:
            raise PotentialError(f"kernel multi-index must have length n={system.n} and order 2b={2 * system.b}")
        self.system = system
        self.alpha = alpha
        self.coeff_field = coeff_field
        self._fm = None if coeff_field is not None else FundamentalMatrix(system)
        self._tables: dict = {}

    @classmethod
    def from_fundamental(cls, fm: FundamentalMatrix, alpha) -> "CZKernel":
        k = cls.__new__(cls)
        k.system = fm.op.system
        k.alpha = tuple(int(a) for a in alpha)
        k.coeff_field = None
        k._fm = fm
        k._tables = {}
        return k

    @property
    def constant(self) -> bool:
        return self.coeff_field is None

    @property
    def n(self) -> int:
        return self.system.n

    @property
    def b(self) -> int:
        return self.system.b

    @property
    def m(self) -> int:
        return self.system.m

    def frozen(self, x=None, t: float = 0.0) -> FundamentalMatrix:
        if self.constant:
            return self._fm
        return FundamentalMatrix(self.system.freeze(self.coeff_field, x, t))

    def __call__(self, z, s: float, x=None, t: float = 0.0) -> np.ndarray:
        return self.frozen(x, t).evaluate(z, s, self.alpha)


@dataclass
class _KernelTable:
    """``D^alpha Gamma(., 1)`` on a cube grid, used for interpolation."""

    axis: np.ndarray
    values: np.ndarray  # (N,)*n + (m, m)
    radius: float  # beyond this radius the kernel is below the noise floor

    def __call__(self, pts: np.ndarray) -> np.ndarray:
        h = self.axis[1] - self.axis[0]
        coords = ((pts - self.axis[0]) / h).T
        m = self.values.shape[-1]
        out = np.empty((pts.shape[0], m, m))
        for i in range(m):
            for j in range(m):
                out[:, i, j] = map_coordinates(self.values[(Ellipsis, i, j)], coords, order=5,
                                               mode="constant", cval=0.0, prefilter=True)
        return out


def kernel_table(fm: FundamentalMatrix, alpha, spacing: float = 0.04) -> _KernelTable:
    key = ("table", tuple(alpha), spacing)
    hit = fm._cache.get(key)
    if hit is not None:
        return hit
    width = _WIDTH.get(fm.b, _WIDTH_DEFAULT) * fm.op.kappa ** (1 / (2 * fm.b))
    R = width
    npts = 2 * int(math.ceil(R / spacing)) + 1
    axis = np.linspace(-R, R, npts)
    vals = fm.evaluate_grid([axis] * fm.n, 1.0, alpha)
    mag = np.abs(vals).max(axis=(-2, -1))
    grids = np.meshgrid(*([axis] * fm.n), indexing="ij")
    rad = np.sqrt(sum(g**2 for g in grids))
    alive = mag > 1e-15 * mag.max()
    radius = float(rad[alive].max()) if alive.any() else R
    tab = _KernelTable(axis, vals, min(radius, R - 6 * spacing))
    fm._cache[key] = tab
    return tab


# -- spectral machinery ----------------------------------------------------------------------


def _phi_scalar(z):
    """``e^z``, ``phi_1(z)`` and ``phi_2(z)`` elementwise, with series near 0."""
    small = np.abs(z) < 1e-2
    zz = np.where(small, 1.0, z)
    p1 = np.where(small, 1 + z / 2 + z**2 / 6 + z**3 / 24 + z**4 / 120, np.expm1(zz) / zz)
    p2 = np.where(small, 0.5 + z / 6 + z**2 / 24 + z**3 / 120 + z**4 / 720, (np.expm1(zz) - zz) / zz**2)
    return np.exp(z), p1, p2


def _phi_block(A: np.ndarray):
    """Same three functions via the augmented-matrix exponential (any ``A``)."""
    K, m, _ = A.shape
    X = np.zeros((K, 3 * m, 3 * m))
    X[:, :m, :m] = A
    X[:, :m, m : 2 * m] = np.eye(m)
    X[:, m : 2 * m, 2 * m :] = np.eye(m)
    Ex = expm(X)
    return [Ex[:, :m, :m], Ex[:, :m, m : 2 * m], Ex[:, :m, 2 * m :]]


def _phi(M: np.ndarray, s: float):
    """``e^{sM}``, ``s phi_1(sM)`` and ``s phi_2(sM)`` for a batch ``(K, m, m)``."""
    m = M.shape[-1]
    if m == 1:
        e, p1, p2 = _phi_scalar(s * M[:, 0, 0])
        return e[:, None, None], s * p1[:, None, None], s * p2[:, None, None]
    fns = [lambda z, k=k: _phi_scalar(z)[k] for k in range(3)]
    e, p1, p2 = matrix_functions(s * M, fns, _phi_block)
    return e, s * p1, s * p2


def _expm_batch(M: np.ndarray, s: float) -> np.ndarray:
    return expm_batch(s * M)


@dataclass
class _Frame:
    """Spatial Fourier frame of a grid (zero-padded when the grid is not periodic)."""

    spec: GridSpec
    shape: tuple  # transform shape
    kvec: np.ndarray  # (prod(shape), n) wave vectors
    pad: bool

    @classmethod
    def of(cls, spec: GridSpec) -> "_Frame":
        pad = not spec.periodic_space
        N = spec.N_x * (2 if pad else 1)
        ks = []
        for i, h in enumerate(spec.h):
            ks.append(2 * np.pi * np.fft.fftfreq(N, d=h))
        grids = np.meshgrid(*ks, indexing="ij")
        kvec = np.stack([g.ravel() for g in grids], axis=-1)
        return cls(spec, (N,) * spec.n, kvec, pad)

    def forward(self, vals: np.ndarray) -> np.ndarray:
        """``(N_t, N_x..., m) -> (N_t, K_all, m)`` spatial FFT."""
        n = self.spec.n
        axes = tuple(range(1, n + 1))
        if self.pad:
            if _touches_boundary(vals, n):
                warnings.warn("field does not vanish at the box boundary; zero padding truncates it",
                              RuntimeWarning, stacklevel=3)
            widths = [(0, 0)] + [(0, self.shape[0] - vals.shape[1])] * n + [(0, 0)]
            vals = np.pad(vals, widths)
        vh = np.fft.fftn(vals, axes=axes)
        return vh.reshape(vh.shape[0], -1, vh.shape[-1])

    def inverse(self, vh: np.ndarray) -> np.ndarray:
        n = self.spec.n
        full = vh.reshape((vh.shape[0],) + self.shape + (vh.shape[-1],))
        out = np.fft.ifftn(full, axes=tuple(range(1, n + 1))).real
        if self.pad:
            sl = (slice(None),) + (slice(0, self.spec.N_x),) * n + (slice(None),)
            out = out[sl]
        return out

    def point_values(self, vh: np.ndarray, idx: np.ndarray, x: np.ndarray) -> np.ndarray:
        """Evaluate the trigonometric interpolant at points ``x`` from the active coefficients."""
        x0 = np.array([a for a, _ in self.spec.box])
        phase = np.exp(1j * (x - x0) @ self.kvec[idx].T)  # (P, K)
        total = int(np.prod(self.shape))
        return np.einsum("pk,pkj->pj", phase, vh).real / total


def _touches_boundary(vals: np.ndarray, n: int) -> bool:
    scale = np.abs(vals).max()
    if scale == 0:
        return False
    for ax in range(1, n + 1):
        for end in (0, -1):
            if np.abs(np.take(vals, end, axis=ax)).max() > 1e-10 * scale:
                return True
    return False


def _active(gh: np.ndarray, tol: float = ACTIVE_TOL) -> np.ndarray:
    mag = np.abs(gh).max(axis=(0, 2))
    if mag.max() == 0:
        return np.zeros(0, dtype=int)
    return np.flatnonzero(mag > tol * mag.max())


def _etd_history(M: np.ndarray, G: np.ndarray, dt: float) -> np.ndarray:
    """Volume potential coefficients at grid times for piecewise-linear forcing ``G (N_t, K, m)``."""
    E0, P1, P2 = _phi(M, dt)
    U = np.zeros_like(G)
    for k in range(G.shape[0] - 1):
        U[k + 1] = (np.einsum("kij,kj->ki", E0, U[k]) + np.einsum("kij,kj->ki", P1, G[k])
                    + np.einsum("kij,kj->ki", P2, G[k + 1] - G[k]))
    return U


def _advance(M, U, G, dt, tau_rel):
    """Potential at times ``tau_rel`` (relative to the grid start) from the history ``U``."""
    Nt = G.shape[0]
    out = np.zeros((len(tau_rel),) + G.shape[1:], dtype=complex)
    pos = np.asarray(tau_rel) / dt
    k = np.clip(np.floor(pos + 1e-12).astype(int), 0, Nt - 1)
    s = np.asarray(tau_rel) - k * dt
    for sv in np.unique(np.round(s, 14)):
        sel = np.flatnonzero((np.abs(s - sv) < 1e-13) & (pos >= -1e-12))
        if sel.size == 0:
            continue
        if sv <= 1e-14 * dt:
            out[sel] = U[k[sel]]
            continue
        E0, P1, P2 = _phi(M, sv)
        kk = k[sel]
        kn = np.minimum(kk + 1, Nt - 1)
        d = (G[kn] - G[kk]) * (sv / dt)
        out[sel] = (np.einsum("kij,tkj->tki", E0, U[kk]) + np.einsum("kij,tkj->tki", P1, G[kk])
                    + np.einsum("kij,tkj->tki", P2, d))
    return out


def _sigma_history_weights(edges, sigma, k, lag, times_rel, dt, Nt):
    """Weights ``W[t, s, j]`` with ``int E(sigma) G(t - lag sigma) d sigma ~ sum W E(sigma_s) G_j``.

    ``E`` is replaced by its Lagrange interpolant (in ``log sigma``) on each panel and
    integrated exactly against the piecewise-linear history of ``G``, which vanishes
    before the grid start.  Splitting at every kink keeps the rule accurate when the
    lag spans several time steps.
    """
    u_nodes = np.log(sigma).reshape(len(edges) - 1, k)
    x, wq = np.polynomial.legendre.leggauss(k + 2)
    W = np.zeros((len(times_rel), len(sigma), Nt))
    for ti, t in enumerate(times_rel):
        kinks = (t - dt * np.arange(Nt)) / lag
        kinks = np.log(kinks[kinks > 0])
        for p, (a, c) in enumerate(zip(edges[:-1], edges[1:])):
            cuts = np.unique(np.concatenate([[a, c], kinks[(kinks > a) & (kinks < c)]]))
            lo, hi = cuts[:-1, None], cuts[1:, None]
            u = (0.5 * (hi - lo) * x + 0.5 * (hi + lo)).ravel()
            wu = (0.5 * (hi - lo) * wq).ravel() * np.exp(u)
            tau = t - lag * np.exp(u)
            keep = tau > -1e-12 * max(dt, lag)
            u, wu, tau = u[keep], wu[keep], np.maximum(tau[keep], 0.0)
            if u.size == 0:
                continue
            un = u_nodes[p]
            basis = np.ones((k, u.size))
            for j in range(k):
                for i in range(k):
                    if i != j:
                        basis[j] *= (u - un[i]) / (un[j] - un[i])
            pos = tau / dt
            k0 = np.clip(np.floor(pos).astype(int), 0, Nt - 2)
            fr = pos - k0
            hat = np.zeros((u.size, Nt))
            rows = np.arange(u.size)
            hat[rows, k0] += 1 - fr
            hat[rows, k0 + 1] += fr
            W[ti, p * k:(p + 1) * k] += (basis * wu) @ hat
    return W


class _PVEngine:
    """Truncated singular operator for one frozen kernel on one grid frame."""

    def __init__(self, fm: FundamentalMatrix, alpha: MultiIndex, frame: _Frame, k_sigma=(4, 5),
                 k_radial: int = 16, k_angle: int = 16):
        self.fm = fm
        self.alpha = tuple(alpha)
        self.frame = frame
        self.b = fm.b
        self.n = fm.n
        self.m = fm.m
        self.table = kernel_table(fm, alpha)
        R = self.table.radius
        self.sigma, _ = log_time_rule(R ** (-2 * self.b), 1.0, *k_sigma)
        self.panels = np.linspace(-2 * self.b * np.log(R), 0.0, k_sigma[0] + 1)
        self.k_node = k_sigma[1]
        dirs, dir_w = unit_sphere_rule(self.n, k_angle)
        rho_u, rho_uw = _gl(0.0, 1.0, k_radial)
        # disk nodes in the rescaled variable w = y sigma^{-1/2b}, per sigma node
        self.nodes = []
        for sg in self.sigma:
            Rw = min(sg ** (-1 / (2 * self.b)), R)
            rho = Rw * rho_u
            w = (rho[:, None, None] * dirs[None]).reshape(-1, self.n)
            wt = np.multiply.outer(Rw * rho_uw * rho ** (self.n - 1), dir_w).ravel()
            kv = self.table(w) * wt[:, None, None]
            self.nodes.append((w, kv.reshape(kv.shape[0], -1)))
        self.M_all = None

    def symbols(self, idx):
        return symbol_matrices(self.fm.op.system, self.frame.kvec[idx])

    def apply(self, G: np.ndarray, idx: np.ndarray, eps: float, times_rel: np.ndarray, dt: float,
              U: np.ndarray | None = None, M: np.ndarray | None = None) -> np.ndarray:
        """Coefficients of ``K_eps g`` at ``times_rel`` for the active modes ``idx``."""
        b, m = self.b, self.m
        kv = self.frame.kvec[idx]
        M = self.symbols(idx) if M is None else M
        U = _etd_history(M, G, dt) if U is None else U
        lag = eps ** (2 * b)
        mult = np.ones(len(idx), dtype=complex)
        for j, a in enumerate(self.alpha):
            if a:
                mult = mult * (1j * kv[:, j]) ** a
        # lags beyond eps^{2b}
        Ushift = _advance(M, U, G, dt, times_rel - lag)
        Elag = _expm_batch(M, lag)
        out = mult[None, :, None] * np.einsum("kij,tkj->tki", Elag, Ushift)
        # lags below eps^{2b}: E(kappa eps, sigma) = full transform - disk integral
        a_ord = sum(self.alpha)
        # kappa . w separates over axes: build phases from per-axis exponential tables
        axis_vals = [np.unique(kv[:, j], return_inverse=True) for j in range(self.n)]
        W = _sigma_history_weights(self.panels, self.sigma, self.k_node, lag, times_rel, dt, G.shape[0])
        for s_i, (sg, (w, kvals)) in enumerate(zip(self.sigma, self.nodes)):
            full = (eps**a_ord * mult)[:, None, None] * _expm_batch(M, sg * lag)
            scale = eps * sg ** (1 / (2 * b))
            phase = None
            for j, (vals, inv) in enumerate(axis_vals):
                tab = np.exp(-1j * scale * np.outer(vals, w[:, j]))[inv.ravel()]
                phase = tab if phase is None else phase * tab
            disk = (phase @ kvals).reshape(len(idx), m, m) * sg ** (-a_ord / (2 * b))
            Ek = full - disk
            Gs = np.einsum("tk,kpj->tpj", W[:, s_i, :], G)
            out += np.einsum("kij,tkj->tki", Ek, Gs)
        return out


# -- public operators ------------------------------------------------------------------------


def volume_potential(fm: FundamentalMatrix, g: GridFunction) -> GridFunction:
    """``u(x, t) = int_0^t int Gamma(x - y, t - s) g(y, s) dy ds`` on the grid of ``g``.

    Exact in time for forcing that is piecewise linear between grid times; spectral in
    space (zero-padded when the grid is not periodic).
    """
    if g.spec.n != fm.n or g.m != fm.m:
        raise PotentialError("forcing does not match the kernel (n or m differs)")
    frame = _Frame.of(g.spec)
    gh = frame.forward(g.values)
    idx = _active(gh)
    out = np.zeros_like(gh)
    if idx.size:
        M = symbol_matrices(fm.op.system, frame.kvec[idx])
        out[:, idx] = _etd_history(M, gh[:, idx], g.spec.dt)
    return GridFunction(g.spec, frame.inverse(out))


@dataclass
class PVResult:
    """Extrapolated principal value plus the ladder diagnostics."""

    value: GridFunction
    eps: list
    rung_norms: list
    differences: list
    converged: bool
    leading_correction: float

    def rows(self) -> list[dict]:
        return [{"eps": e, "norm": v} for e, v in zip(self.eps, self.rung_norms)]


def _l2(vals: np.ndarray, w: np.ndarray) -> float:
    return float(np.sqrt(np.sum(w[..., None] * np.abs(vals) ** 2)))


def singular_operator(kernel: CZKernel, g: GridFunction, q: PVQuadrature | None = None,
                      full_report: bool = False):
    """Principal-value operator ``K_alpha g`` for a constant-coefficient kernel.

    Returns a :class:`GridFunction`, or a :class:`PVResult` when ``full_report``.
    """
    if not kernel.constant:
        raise PotentialError("singular_operator needs a constant kernel; use representation_residual "
                             "or frozen_singular_values for variable coefficients")
    q = q or PVQuadrature()
    spec = g.spec
    eps_list = q.ladder(float(min(spec.h)))
    frame = _Frame.of(spec)
    gh = frame.forward(g.values)
    idx = _active(gh)
    w = spec.weights()
    if idx.size == 0:
        z = GridFunction.zeros(spec, g.m)
        res = PVResult(z, eps_list, [0.0] * len(eps_list), [0.0] * (len(eps_list) - 1), True, 0.0)
        return res if full_report else z
    eng = _engine(kernel.frozen(), kernel.alpha, frame)
    G = gh[:, idx]
    M = eng.symbols(idx)
    U = _etd_history(M, G, spec.dt)
    times_rel = spec.times - spec.t_start
    rungs = []
    for eps in eps_list:
        coef = eng.apply(G, idx, eps, times_rel, spec.dt, U, M)
        full = np.zeros_like(gh)
        full[:, idx] = coef
        rungs.append(frame.inverse(full))
    value = richardson(rungs, eps_list)
    diffs = [_l2(rungs[k + 1] - rungs[k], w) for k in range(len(rungs) - 1)]
    converged = all(diffs[k + 1] < diffs[k] for k in range(len(diffs) - 1))
    if not converged:
        warnings.warn(f"principal-value ladder not converging: successive differences {diffs}",
                      ExtrapolationWarning, stacklevel=2)
    res = PVResult(GridFunction(spec, value), eps_list, [_l2(r, w) for r in rungs], diffs, converged,
                   _l2(rungs[-1] - value, w))
    return res if full_report else res.value


def _engine(fm: FundamentalMatrix, alpha, frame: _Frame) -> _PVEngine:
    key = ("engine", tuple(alpha), frame.spec)
    hit = fm._cache.get(key)
    if hit is None:
        hit = _PVEngine(fm, alpha, frame)
        fm._cache[key] = hit
    return hit


def frozen_singular_values(kernel: CZKernel, field_fn: Callable, targets, spec: GridSpec,
                           q: PVQuadrature | None = None) -> np.ndarray:
    """``K^{(x0,t0)}_alpha h_{(x0,t0)}`` evaluated at each target grid node.

    ``targets`` is a list of index tuples ``(j_t, i_1, ..., i_n)``; ``field_fn(x0, t0)``
    returns the grid function integrated against the kernel frozen at that point.
    """
    q = q or PVQuadrature()
    frame = _Frame.of(spec)
    eps_list = q.ladder(float(min(spec.h)))
    axes = spec.axes()
    out = []
    for tgt in targets:
        jt, ix = tgt[0], tgt[1:]
        x0 = np.array([axes[i][k] for i, k in enumerate(ix)])
        t0 = float(spec.times[jt])
        fm = kernel.frozen(x0, t0)
        h = field_fn(x0, t0)
        gh = frame.forward(h.values)
        idx = _active(gh)
        if idx.size == 0:
            out.append(np.zeros(h.m))
            continue
        eng = _PVEngine(fm, kernel.alpha, frame)
        G = gh[:, idx]
        M = eng.symbols(idx)
        U = _etd_history(M, G, spec.dt)
        vals = []
        for eps in eps_list:
            coef = eng.apply(G, idx, eps, np.array([t0 - spec.t_start]), spec.dt, U, M)
            vals.append(frame.point_values(coef, idx, x0[None])[0])
        out.append(richardson(vals, eps_list))
    return np.array(out)


def _matrix_field(A: GridFunction, m: int) -> np.ndarray:
    vals = A.values
    if vals.shape[-1] != m * m:
        raise PotentialError(f"coefficient field needs {m * m} components, has {vals.shape[-1]}")
    return vals.reshape(vals.shape[:-1] + (m, m))


def commutator(kernel: CZKernel, A: GridFunction, g: GridFunction, q: PVQuadrature | None = None) -> GridFunction:
    """``C[A, g] = K(A g) - A K(g)`` (principal value, constant kernel).

    Returns exact zeros when ``A`` is constant, since the difference factor vanishes
    before any quadrature.
    """
    if A.spec != g.spec:
        raise PotentialError("A and g must share a grid")
    Am = _matrix_field(A, g.m)
    if np.ptp(Am.reshape(-1, g.m * g.m), axis=0).max() == 0:
        return GridFunction.zeros(g.spec, g.m)
    Ag = GridFunction(g.spec, np.einsum("...ij,...j->...i", Am, g.values))
    KAg = singular_operator(kernel, Ag, q).values
    Kg = singular_operator(kernel, g, q).values
    return GridFunction(g.spec, KAg - np.einsum("...ij,...j->...i", Am, Kg))


# -- brute-force quadrature (small grids) ------------------------------------------------------


def _pairwise_kernel(kernel: CZKernel, spec: GridSpec, eps: float, base=None):
    """Kernel values ``k(x_i - y_j, t_a - t_c)`` for all node pairs with ``rho > eps``."""
    t, xs = spec.mesh()
    pts = np.stack(np.broadcast_arrays(*xs, t), axis=-1).reshape(-1, spec.n + 1)
    w = spec.weights().ravel()
    P = pts.shape[0]
    m = kernel.m
    Kmat = np.zeros((P, P, m, m))
    fm = kernel.frozen(*(base or (None, 0.0)))
    times = spec.times
    for a, ta in enumerate(times):
        tgt = np.flatnonzero(np.isclose(pts[:, -1], ta))
        for c, tc in enumerate(times[:a]):
            src = np.flatnonzero(np.isclose(pts[:, -1], tc))
            s = ta - tc
            z = pts[tgt, None, :-1] - pts[None, src, :-1]
            rho = np.maximum(np.linalg.norm(z, axis=-1), s ** (1 / (2 * kernel.b)))
            vals = fm.evaluate(z.reshape(-1, spec.n), s, kernel.alpha).reshape(len(tgt), len(src), m, m)
            vals[rho <= eps] = 0.0
            Kmat[np.ix_(tgt, src)] = vals * w[src][None, :, None, None]
    return Kmat


def singular_operator_direct(kernel: CZKernel, g: GridFunction, eps: float) -> np.ndarray:
    """Truncated operator by direct summation over grid nodes (``O(P^2)``, small grids only)."""
    Kmat = _pairwise_kernel(kernel, g.spec, eps)
    gv = g.values.reshape(-1, g.m)
    return np.einsum("pqij,qj->pi", Kmat, gv).reshape(g.values.shape)


def commutator_direct(kernel: CZKernel, A: GridFunction, g: GridFunction, eps: float) -> np.ndarray:
    """Truncated commutator with the explicit difference factor ``A(y) - A(x)``."""
    Kmat = _pairwise_kernel(kernel, g.spec, eps)
    m = g.m
    Am = _matrix_field(A, m).reshape(-1, m, m)
    gv = g.values.reshape(-1, m)
    diff = Am[None, :, :, :] - Am[:, None, :, :]  # (target, source)
    out = np.einsum("pqij,pqjk,qk->pi", Kmat, diff, gv)
    return out.reshape(g.values.shape)


# -- boundary constant -------------------------------------------------------------------------


@dataclass
class BoundaryConstant:
    """The constant ``F`` of the representation formula, two ways.

    ``per_direction`` holds the surface integral for every admissible lowering
    direction ``s``; ``quadrature`` is their mean.  ``calibrated`` (when computed)
    comes from fitting the representation formula on test functions.
    """

    alpha: MultiIndex
    quadrature: np.ndarray
    per_direction: dict
    calibrated: np.ndarray | None = None
    calibration_rank: int | None = None

    @property
    def discrepancy(self) -> float | None:
        if self.calibrated is None:
            return None
        return float(np.abs(self.calibrated - self.quadrature).max())


def boundary_constant_quadrature(fm: FundamentalMatrix, alpha) -> tuple[np.ndarray, dict]:
    """``int_{|w|=1} int_0^1 D^{alpha - e_s} Gamma(w, t) w_s dt dS(w)`` for each ``s`` with ``alpha_s > 0``."""
    alpha = tuple(alpha)
    rule = parabolic_sphere_rule(fm)
    per = {}
    for s, a in enumerate(alpha):
        if not a:
            continue
        beta = tuple(a_ - (i == s) for i, a_ in enumerate(alpha))
        acc = np.zeros((fm.m, fm.m))
        wx = rule.lateral_xw * rule.lateral_x[:, s]
        for t, wt in zip(rule.lateral_t, rule.lateral_tw):
            acc += wt * np.einsum("k,kij->ij", wx, fm.evaluate(rule.lateral_x, t, beta))
        per[s] = acc
    return np.mean(list(per.values()), axis=0), per


def default_test_fields(spec: GridSpec, m: int, count: int = 5, seed: int = 0) -> list[GridFunction]:
    """Smooth, rapidly decaying fields with zero initial trace for calibration."""
    rng = np.random.default_rng(seed)
    t, xs = spec.mesh()
    centre = [0.5 * (a + b) for a, b in spec.box]
    width = min(b - a for a, b in spec.box)
    out = []
    for k in range(count):
        freq = rng.integers(0, 3, size=spec.n)
        phase = rng.uniform(0, 2 * np.pi)
        sharp = 48.0 / width**2 * (1 + rng.uniform(0, 1))  # at least e^-12 at the box edge
        env = np.exp(-sharp * sum((x - c) ** 2 for x, c in zip(xs, centre)))
        osc = np.cos(sum(f * x for f, x in zip(freq, xs)) + phase)
        tpow = 1 + rng.integers(0, 2)
        comps = [t**tpow * env * osc * (1 + 0.5 * j) * np.cos(j * xs[0]) for j in range(m)]
        out.append(GridFunction.sample(spec, lambda tt, xx, c=comps: c))
    return out


def boundary_constant(fm: FundamentalMatrix, alpha, calibration_spec: GridSpec | None = None,
                      test_fields: Sequence[GridFunction] | None = None,
                      q: PVQuadrature | None = None) -> BoundaryConstant:
    """Surface-integral value of ``F``, optionally cross-checked by calibration.

    Calibration solves ``D^alpha v - K_alpha(L v) = F L v`` in least squares over the
    test fields; fewer independent samples than components raises ``PotentialError``.
    """
    alpha = tuple(int(a) for a in alpha)
    if sum(alpha) != 2 * fm.b:
        raise PotentialError(f"|alpha| must equal 2b={2 * fm.b}")
    quad, per = boundary_constant_quadrature(fm, alpha)
    res = BoundaryConstant(alpha, quad, per)
    if calibration_spec is None and test_fields is None:
        return res
    if test_fields is None:
        test_fields = default_test_fields(calibration_spec, fm.m)
    if len(test_fields) < fm.m:
        raise PotentialError(f"calibration needs at least m={fm.m} test fields, got {len(test_fields)}")
    kern = CZKernel.from_fundamental(fm, alpha)
    rows_f, rows_r = [], []
    system = fm.op.system
    for v in test_fields:
        f = apply_operator(system, v)
        r = spatial_derivative(v, alpha).values - singular_operator(kern, f, q).values
        # skip the first slice, where the zero extension in time jumps
        rows_f.append(f.values[1:].reshape(-1, fm.m))
        rows_r.append(r[1:].reshape(-1, fm.m))
    Fm = np.concatenate(rows_f)
    Rm = np.concatenate(rows_r)
    rank = int(np.linalg.matrix_rank(Fm, tol=1e-10 * np.abs(Fm).max()))
    if rank < fm.m:
        raise PotentialError(f"calibration system is rank deficient (rank {rank} < m={fm.m}); add test fields")
    sol, *_ = np.linalg.lstsq(Fm, Rm, rcond=None)
    res.calibrated = sol.T
    res.calibration_rank = rank
    return res


# -- representation formula ----------------------------------------------------------------------


@dataclass
class RepresentationResult:
    residual: float
    absolute: bool
    targets: int
    F: np.ndarray | None = None


def representation_residual(system: ParabolicSystem, v: GridFunction, alpha, coeff_field: Callable | None = None,
                            q: PVQuadrature | None = None, include_commutator: bool = True,
                            targets: Sequence | None = None, F: np.ndarray | None = None) -> RepresentationResult:
    """Relative L2 residual of ``D^alpha v = K_alpha(L v) + sum C[A, D v] + F L v``.

    Constant coefficients are handled on the whole grid.  With ``coeff_field`` the
    kernel is frozen at each target node (``targets``: list of index tuples, default
    a coarse lattice); dropping the commutator term (``include_commutator=False``)
    gives the ablated formula.
    """
    alpha = tuple(int(a) for a in alpha)
    spec = v.spec
    Dv = spatial_derivative(v, alpha).values
    if coeff_field is None:
        fm = FundamentalMatrix(system)
        kern = CZKernel.from_fundamental(fm, alpha)
        Lv = apply_operator(system, v)
        if F is None:
            F = boundary_constant_quadrature(fm, alpha)[0]
        rhs = singular_operator(kern, Lv, q).values + np.einsum("ij,...j->...i", F, Lv.values)
        # the identity holds for t > t_start; the zero extension jumps at the first slice
        w = spec.weights().copy()
        w[0] = 0.0
        num, den = _l2(Dv - rhs, w), _l2(Dv, w)
        if den == 0:
            return RepresentationResult(num, True, int(np.prod(spec.shape)), F)
        return RepresentationResult(num / den, False, int(np.prod(spec.shape)), F)

    kern = CZKernel(system, alpha, coeff_field)
    if targets is None:
        targets = default_targets(spec)
    Lv = apply_operator(system, v, coeff_field)
    derivs = {a: spatial_derivative(v, a).values for a in system.principal}

    def field_fn(x0, t0):
        if not include_commutator:
            return Lv
        frozen = coeff_field(np.asarray(x0), t0)
        vals = Lv.values.copy()
        tt, xs = spec.mesh()
        X = np.stack(np.broadcast_arrays(*xs, tt)[:-1], axis=-1)
        A = coeff_field(X, np.broadcast_to(tt, spec.shape))
        for a in system.principal:
            diff = np.asarray(A[a]) - np.asarray(frozen[a])
            vals += np.einsum("...ij,...j->...i", diff, derivs[a])
        return GridFunction(spec, vals)

    Kv = frozen_singular_values(kern, field_fn, targets, spec, q)
    axes = spec.axes()
    num = den = 0.0
    for tgt, kval in zip(targets, Kv):
        jt, ix = tgt[0], tgt[1:]
        x0 = np.array([axes[i][k] for i, k in enumerate(ix)])
        t0 = float(spec.times[jt])
        fm = kern.frozen(x0, t0)
        Fx = boundary_constant_quadrature(fm, alpha)[0]
        node = (jt,) + tuple(ix)
        pred = kval + Fx @ Lv.values[node]
        num += float(np.sum((Dv[node] - pred) ** 2))
        den += float(np.sum(Dv[node] ** 2))
    if den == 0:
        return RepresentationResult(math.sqrt(num), True, len(targets))
    return RepresentationResult(math.sqrt(num / den), False, len(targets))


def default_targets(spec: GridSpec, per_axis: int = 4, times: int = 2) -> list[tuple]:
    """A coarse lattice of interior target nodes."""
    xi = np.linspace(0, spec.N_x - 1, per_axis + 2)[1:-1].round().astype(int)
    ti = np.linspace(0, spec.N_t - 1, times + 1)[1:].round().astype(int)
    return [(int(t),) + tuple(int(i) for i in ix) for t in ti for ix in itertools.product(xi, repeat=spec.n)]


# -- kernel axioms and operator norms ------------------------------------------------------------


@dataclass
class KernelAxiomsReport:
    homogeneity_slope: float
    expected_slope: float
    homogeneity_residual: dict
    sphere_mean: float
    sphere_abs_integral: float
    tangential_sup: dict
    passed: dict


def kernel_axioms(kernel: CZKernel, x=None, t: float = 0.0, seed: int = 0) -> KernelAxiomsReport:
    """Homogeneity, cancellation, integrability and smoothness checks on one frozen kernel."""
    fm = kernel.frozen(x, t)
    n, b, a = fm.n, fm.b, kernel.alpha
    rng = np.random.default_rng(seed)
    dirs = rng.normal(size=(6, n))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    taus = rng.uniform(0.3, 1.0, size=6)
    mus = 2.0 ** np.arange(-3, 4)
    slopes = []
    for d, tau in zip(dirs, taus):
        vals = [np.abs(fm.evaluate(mu * d, mu ** (2 * b) * tau, a)).max() for mu in mus]
        slopes.append(np.polyfit(np.log(mus), np.log(vals), 1)[0])
    resid = {}
    pts = dirs * 0.8
    for mu in (0.5, 2.0):
        worst = 0.0
        for tau in (0.5, 1.0):
            lhs = fm.evaluate(mu * pts, mu ** (2 * b) * tau, a)
            rhs = mu ** (-(n + 2 * b)) * fm.evaluate(pts, tau, a)
            worst = max(worst, float(np.abs(lhs - rhs).max() / np.abs(rhs).max()))
        resid[mu] = worst
    rule = parabolic_sphere_rule(fm)
    mean = float(np.abs(rule.integrate(fm, a)).max())
    absint = float(np.abs(rule.integrate(fm, a, absolute=True)).max())
    tang = {}
    for order in (1, 2):
        best = 0.0
        for beta in multi_indices(n, order):
            gamma = tuple(x_ + y_ for x_, y_ in zip(a, beta))
            if sum(gamma) <= 2 * b + 1:
                best = max(best, rule.sup(fm, gamma))
            else:
                # second derivatives beyond the evaluator's order: differences of first derivatives
                j = int(np.argmax(beta))
                e = np.zeros(n)
                e[j] = 1e-3
                b1 = tuple(bb - (i == j) for i, bb in enumerate(beta))
                g1 = tuple(x_ + y_ for x_, y_ in zip(a, b1))
                xs = rule.lateral_x
                for tt in rule.lateral_t[::4]:
                    d2 = (fm.evaluate(xs + e, tt, g1) - fm.evaluate(xs - e, tt, g1)) / 2e-3
                    best = max(best, float(np.abs(d2).max()))
        tang[order] = best
    slope = float(np.mean(slopes))
    expected = -(n + 2 * b)
    passed = {
        "homogeneity": abs(slope - expected) <= 0.01 and max(resid.values()) < 1e-6,
        "cancellation": mean < 1e-6,
        "integrability": bool(np.isfinite(absint)),
        "smoothness": all(np.isfinite(v) for v in tang.values()),
    }
    return KernelAxiomsReport(slope, expected, resid, mean, absint, tang, passed)


def multiplier_bound(fm: FundamentalMatrix, alpha, F: np.ndarray, k_max: float = 200.0, samples: int = 4000,
                     seed: int = 0) -> float:
    """``sup |(i k)^alpha (i w - M(k))^{-1} - F|`` over sampled ``(k, w)``: the L2 bound of ``K_alpha``."""
    rng = np.random.default_rng(seed)
    n, m = fm.n, fm.m
    k = rng.normal(size=(samples, n))
    k /= np.linalg.norm(k, axis=1, keepdims=True)
    # homogeneity: only the direction of k and the ratio w / |k|^{2b} matter
    ratio = np.concatenate([[0.0], np.geomspace(1e-3, k_max, samples - 1)]) * rng.choice([-1, 1], samples)
    M = symbol_matrices(fm.op.system, k)
    mult = np.ones(samples, dtype=complex)
    for j, a in enumerate(alpha):
        mult = mult * (1j * k[:, j]) ** a
    R = np.linalg.inv(1j * ratio[:, None, None] * np.eye(m) - M)
    sym = mult[:, None, None] * R - F
    return float(np.linalg.norm(sym, ord=2, axis=(1, 2)).max())


def lp_norm_values(vals: np.ndarray, w: np.ndarray, p: float) -> float:
    """Sum of component ``L^p`` norms with quadrature weights ``w``."""
    return float(sum((np.sum(w * np.abs(vals[..., k]) ** p)) ** (1 / p) for k in range(vals.shape[-1])))


@dataclass
class OperatorNormRow:
    operator: str
    p: float
    lam: float | None
    r: float | None
    ratio: float
    eta: float | None

    def as_dict(self) -> dict:
        return {"operator": self.operator, "p": self.p, "lambda": "" if self.lam is None else self.lam,
                "r": "" if self.r is None else self.r, "ratio": self.ratio,
                "eta_A": "" if self.eta is None else self.eta}


def trial_corpus(spec: GridSpec, m: int = 1, count: int = 20, seed: int = 0, support=None) -> list[GridFunction]:
    """Bump-times-trigonometric fields with varied frequency content (fixed seed).

    ``support`` is an optional :class:`ParabolicCylinder`; fields then vanish outside it
    (smoothly in space; in time they grow linearly from the base).
    """
    rng = np.random.default_rng(seed)
    t, xs = spec.mesh()
    if support is None:
        centre = [0.5 * (a + b) for a, b in spec.box]
        rad = 0.35 * min(b - a for a, b in spec.box)
        t_lo = spec.t_start
    else:
        centre, rad, t_lo = support.center, support.r, support.t0 - support.height
    r2 = sum((x - c) ** 2 for x, c in zip(xs, centre)) / rad**2
    bump = np.where(r2 < 1, np.exp(-1.0 / np.maximum(1 - r2, 1e-300) + 1.0), 0.0)
    on = np.clip((t - t_lo) / max(spec.T - t_lo, 1e-12), 0.0, None)  # continuous switch-on
    fields = []
    for _ in range(count):
        freq = rng.integers(0, 3, size=spec.n) * (np.pi / rad)
        ph = rng.uniform(0, 2 * np.pi)
        w = rng.uniform(0.5, 4.0) / max(spec.T - t_lo, 1e-12)
        comps = [bump * on * np.cos(sum(f * (x - c) for f, x, c in zip(freq, xs, centre)) + ph + j)
                 * np.cos(w * (t - t_lo) + j) for j in range(m)]
        fields.append(GridFunction.sample(spec, lambda tt, xx, c=comps: c))
    return fields


def empirical_operator_norm(op: Callable[[GridFunction], GridFunction], corpus: Sequence[GridFunction],
                            p: float = 2.0, region=None) -> tuple[float, list[float]]:
    """``max ||op f||_p / ||f||_p`` over the corpus (norms over ``region`` if given)."""
    if len(corpus) < 1:
        raise ValueError("empty corpus")
    ratios = []
    for f in corpus:
        w = region_weights(f.spec, region)
        den = lp_norm_values(f.values, w, p)
        if den == 0:
            continue
        ratios.append(lp_norm_values(op(f).values, w, p) / den)
    return max(ratios), ratios


def mean_oscillation(A_fn: Callable, center, t0: float, r: float, b: int, n_pts: int = 24) -> float:
    """Mean oscillation of a (scalar or matrix) coefficient over ``C_r(center, t0)`` by tensor quadrature."""
    n = len(center)
    dirs, dw = unit_sphere_rule(n, n_pts)
    rho, rw = _gl(0.0, r, n_pts)
    ts, tw = _gl(t0 - r ** (2 * b), t0, 8)
    X = (np.asarray(center)[None, None] + rho[:, None, None] * dirs[None]).reshape(-1, n)
    Wx = np.multiply.outer(rw * rho ** (n - 1), dw).ravel()
    vals, wts = [], []
    for t, w in zip(ts, tw):
        v = np.asarray(A_fn(X, np.full(X.shape[0], t)), dtype=float).reshape(X.shape[0], -1)
        vals.append(v)
        wts.append(w * Wx)
    vals = np.concatenate(vals)
    wts = np.concatenate(wts)
    mean = (wts[:, None] * vals).sum(0) / wts.sum()
    return float((wts * np.abs(vals - mean).sum(axis=1)).sum() / wts.sum())


@dataclass
class ShrinkingStudy:
    radii: list
    ratios: list
    etas: list
    correlation: float
    monotone: bool
    rows: list = field(default_factory=list)


def commutator_shrinking_study(system: ParabolicSystem, alpha, A_fn: Callable, center, t0: float,
                               radii=(1.0, 0.5, 0.25, 0.125), p: float = 2.0, n_x: int = 32, n_t: int = 17,
                               corpus_size: int = 20, seed: int = 0, q: PVQuadrature | None = None,
                               operator_name: str = "commutator", half_width: float = 3.0) -> ShrinkingStudy:
    """``max ||C[A, f]||_{p;C_r} / ||f||_{p;C_r}`` over a corpus supported in ``C_r``, per radius.

    Each radius gets its own grid (box of half-width ``half_width * r`` around the centre, times
    ``[t0 - r^{2b}, t0]``), so resolution relative to the cylinder is the same at
    every scale.  ``A_fn(x, t)`` returns the scalar coefficient (``m = 1``) or the
    flattened ``m x m`` matrix.
    """
    fm = FundamentalMatrix(system)
    kern = CZKernel.from_fundamental(fm, alpha)
    b, n, m = system.b, system.n, system.m
    ratios, etas, rows = [], [], []
    for r in radii:
        box = tuple((c - half_width * r, c + half_width * r) for c in center)
        spec = GridSpec(box, t0, n_x, n_t, True, t0 - r ** (2 * b))
        C = ParabolicCylinder(tuple(center), t0, r, b)
        tt, xs = spec.mesh()
        X = np.stack(np.broadcast_arrays(*xs, tt)[:-1], axis=-1)
        Avals = np.asarray(A_fn(X.reshape(-1, n), np.broadcast_to(tt, spec.shape).ravel()), dtype=float)
        A = GridFunction(spec, Avals.reshape(spec.shape + (m * m,)))
        corpus = trial_corpus(spec, m, corpus_size, seed, support=C)
        # the default 8h exclusion would swallow the whole time span r^{2b}; scale it with r
        q_r = q or PVQuadrature(eps0=r / 4)
        best, _ = empirical_operator_norm(lambda f: commutator(kern, A, f, q_r), corpus, p, region=C)
        eta = mean_oscillation(A_fn, center, t0, r, b)
        ratios.append(best)
        etas.append(eta)
        rows.append(OperatorNormRow(operator_name, p, None, r, best, eta))
    corr = float(np.corrcoef(ratios, etas)[0, 1]) if np.ptp(ratios) > 0 and np.ptp(etas) > 0 else float("nan")
    monotone = all(ratios[k + 1] < ratios[k] for k in range(len(ratios) - 1))
    return ShrinkingStudy(list(radii), ratios, etas, corr, monotone, rows)
