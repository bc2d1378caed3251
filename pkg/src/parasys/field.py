"""Vector fields sampled on space-time tensor grids.

Values are stored with shape ``(N_t, N_x, ..., N_x, m)``: time first, then the
spatial axes ``x_1 .. x_n``, then the component index.  Flattening in C order gives
the documented on-disk layout.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field
from typing import Callable, Sequence

import numpy as np

from .symbol import MultiIndex, ParabolicSystem


class GridResolutionError(ValueError):
    """The grid is too coarse for the requested operation."""


@dataclass(frozen=True)
class GridSpec:
    """Tensor grid over ``box x [t_start, T]``.

    Periodic spatial axes exclude the right endpoint (``N_x`` nodes with spacing
    ``(b - a) / N_x``); non-periodic axes and the time axis include both ends.
    """

    box: tuple[tuple[float, float], ...]
    T: float
    N_x: int
    N_t: int
    periodic_space: bool = True
    t_start: float = 0.0

    def __post_init__(self):
        box = tuple((float(a), float(b)) for a, b in self.box)
        object.__setattr__(self, "box", box)
        if self.N_x < 2 or self.N_t < 2:
            raise ValueError("N_x and N_t must be >= 2")
        if any(b <= a for a, b in box):
            raise ValueError("every box interval needs b > a")
        if self.T <= self.t_start:
            raise ValueError("T must exceed t_start")

    @classmethod
    def cube(cls, n: int, lo: float, hi: float, T: float, N_x: int, N_t: int,
             periodic_space: bool = True, t_start: float = 0.0) -> "GridSpec":
        return cls(((lo, hi),) * n, T, N_x, N_t, periodic_space, t_start)

    @property
    def n(self) -> int:
        return len(self.box)

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.N_t,) + (self.N_x,) * self.n

    @property
    def h(self) -> np.ndarray:
        lengths = np.array([b - a for a, b in self.box])
        return lengths / (self.N_x if self.periodic_space else self.N_x - 1)

    @property
    def dt(self) -> float:
        return (self.T - self.t_start) / (self.N_t - 1)

    @property
    def times(self) -> np.ndarray:
        return np.linspace(self.t_start, self.T, self.N_t)

    def axis(self, i: int) -> np.ndarray:
        a, b = self.box[i]
        if self.periodic_space:
            return a + (b - a) * np.arange(self.N_x) / self.N_x
        return np.linspace(a, b, self.N_x)

    def axes(self) -> list[np.ndarray]:
        return [self.axis(i) for i in range(self.n)]

    def mesh(self) -> tuple[np.ndarray, list[np.ndarray]]:
        """Broadcastable ``(t, [x_1, ..., x_n])`` arrays of grid shape."""
        d = self.n + 1
        t = self.times.reshape((-1,) + (1,) * self.n)
        xs = []
        for i, ax in enumerate(self.axes()):
            shp = [1] * d
            shp[i + 1] = -1
            xs.append(ax.reshape(shp))
        return t, xs

    def wavenumbers(self, i: int) -> np.ndarray:
        a, b = self.box[i]
        return 2 * np.pi * np.fft.fftfreq(self.N_x, d=(b - a) / self.N_x)

    def weights_1d(self) -> tuple[np.ndarray, list[np.ndarray]]:
        wt = _trapezoid_weights(self.N_t, self.dt)
        ws = []
        for hi in self.h:
            if self.periodic_space:
                ws.append(np.full(self.N_x, hi))
            else:
                ws.append(_trapezoid_weights(self.N_x, hi))
        return wt, ws

    def weights(self) -> np.ndarray:
        wt, ws = self.weights_1d()
        return _outer(wt, ws)

    def measure(self) -> float:
        return (self.T - self.t_start) * math.prod(b - a for a, b in self.box)

    def to_header(self) -> dict:
        return {
            "box": [list(x) for x in self.box],
            "T": self.T,
            "t_start": self.t_start,
            "N_x": self.N_x,
            "N_t": self.N_t,
            "periodic_space": self.periodic_space,
        }

    @classmethod
    def from_header(cls, d: dict) -> "GridSpec":
        return cls(tuple(tuple(x) for x in d["box"]), d["T"], d["N_x"], d["N_t"],
                   d["periodic_space"], d.get("t_start", 0.0))


def _trapezoid_weights(k: int, h: float) -> np.ndarray:
    w = np.full(k, h)
    w[0] = w[-1] = h / 2
    return w


def _outer(wt: np.ndarray, ws: Sequence[np.ndarray]) -> np.ndarray:
    out = wt
    for w in ws:
        out = np.multiply.outer(out, w)
    return out


@dataclass(frozen=True, eq=False)
class GridFunction:
    """An ``m``-vector field on a :class:`GridSpec`."""

    spec: GridSpec
    values: np.ndarray
    _cache: dict = dc_field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.shape == self.spec.shape:
            vals = vals[..., None]
        if vals.shape[:-1] != self.spec.shape:
            raise ValueError(f"values shape {vals.shape} does not match grid {self.spec.shape} (+ components)")
        if not np.all(np.isfinite(vals)):
            raise ValueError("grid function has non-finite entries")
        vals = np.array(vals, copy=True)
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @property
    def m(self) -> int:
        return self.values.shape[-1]

    @classmethod
    def sample(cls, spec: GridSpec, fn: Callable, m: int | None = None) -> "GridFunction":
        """Evaluate ``fn(t, xs)`` on the grid.

        ``fn`` receives broadcastable arrays and returns either one array (scalar
        field) or a sequence of ``m`` arrays.
        """
        t, xs = spec.mesh()
        out = fn(t, xs)
        if isinstance(out, (list, tuple)):
            comps = [np.broadcast_to(np.asarray(c, dtype=float), spec.shape) for c in out]
            vals = np.stack(comps, axis=-1)
        else:
            vals = np.broadcast_to(np.asarray(out, dtype=float), spec.shape)[..., None]
        if m is not None and vals.shape[-1] != m:
            raise ValueError(f"fn returned {vals.shape[-1]} components, expected {m}")
        return cls(spec, vals)

    @classmethod
    def zeros(cls, spec: GridSpec, m: int = 1) -> "GridFunction":
        return cls(spec, np.zeros(spec.shape + (m,)))

    def with_values(self, values) -> "GridFunction":
        return GridFunction(self.spec, values)

    def component(self, k: int) -> "GridFunction":
        return GridFunction(self.spec, self.values[..., k : k + 1])

    def _check(self, other: "GridFunction"):
        if other.spec != self.spec:
            raise ValueError("grid functions live on different grids")

    def __add__(self, other):
        if isinstance(other, GridFunction):
            self._check(other)
            return self.with_values(self.values + other.values)
        return self.with_values(self.values + other)

    def __sub__(self, other):
        if isinstance(other, GridFunction):
            self._check(other)
            return self.with_values(self.values - other.values)
        return self.with_values(self.values - other)

    def __mul__(self, c):
        if isinstance(c, GridFunction):
            self._check(c)
            return self.with_values(self.values * c.values)
        return self.with_values(self.values * c)

    __rmul__ = __mul__

    def __neg__(self):
        return self.with_values(-self.values)


# -- metric and cylinders --------------------------------------------------------------


def parabolic_distance(p, q, b: int) -> float:
    """``max(|x_p - x_q|, |t_p - t_q|^{1/2b})`` for points given as ``(x_1, ..., x_n, t)``."""
    if b < 1:
        raise ValueError("b must be >= 1")
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    dx = np.linalg.norm(p[..., :-1] - q[..., :-1], axis=-1)
    dt = np.abs(p[..., -1] - q[..., -1]) ** (1.0 / (2 * b))
    out = np.maximum(dx, dt)
    return float(out) if out.ndim == 0 else out


def unit_ball_volume(n: int) -> float:
    return math.pi ** (n / 2) / math.gamma(n / 2 + 1)


@dataclass(frozen=True)
class ParabolicCylinder:
    """``B_r(x0) x (t0 - r^{2b}, t0)``."""

    center: tuple[float, ...]
    t0: float
    r: float
    b: int

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(float(c) for c in np.atleast_1d(self.center)))
        if self.r <= 0:
            raise ValueError("cylinder radius must be positive")

    @property
    def n(self) -> int:
        return len(self.center)

    @property
    def height(self) -> float:
        return self.r ** (2 * self.b)

    def measure(self) -> float:
        return unit_ball_volume(self.n) * self.r**self.n * self.height

    def scaled(self, factor: float) -> "ParabolicCylinder":
        """Concentric cylinder (same top) with radius ``factor * r``."""
        return ParabolicCylinder(self.center, self.t0, factor * self.r, self.b)

    def contains(self, t, xs) -> np.ndarray:
        """Membership mask: strict spatial ball, half-open time interval ``(t0 - r^{2b}, t0]``."""
        d2 = 0.0
        for x, c in zip(xs, self.center):
            d2 = d2 + (x - c) ** 2
        in_t = (t > self.t0 - self.height) & (t <= self.t0)
        return (d2 < self.r**2) & in_t


@dataclass(frozen=True)
class Box:
    """Axis-aligned sub-box ``prod [lo_i, hi_i] x [t_lo, t_hi]`` used as an integration region."""

    lo: tuple[float, ...]
    hi: tuple[float, ...]
    t_lo: float
    t_hi: float


@dataclass(frozen=True)
class Restriction:
    """Samples of a field inside a region, with quadrature weights."""

    values: np.ndarray  # (K, m)
    points: np.ndarray  # (K, n + 1), last column is time
    weights: np.ndarray  # (K,)

    @property
    def empty(self) -> bool:
        return self.weights.size == 0

    def measure(self) -> float:
        return float(self.weights.sum())


def _axis_window(ax: np.ndarray, lo: float, hi: float) -> slice:
    i0 = int(np.searchsorted(ax, lo, side="left"))
    i1 = int(np.searchsorted(ax, hi, side="right"))
    return slice(i0, i1)


def clipped_hat_weights(nodes: np.ndarray, lo: float, hi: float) -> np.ndarray:
    """``int_lo^hi phi_j`` for the piecewise-linear hat functions on ``nodes``.

    This is the trapezoid rule clipped exactly to ``[lo, hi]``: a node just outside
    the interval still carries the part of its hat that reaches inside.
    """
    w = np.zeros(nodes.size)
    for k in range(nodes.size - 1):
        a, b = nodes[k], nodes[k + 1]
        x0, x1 = max(a, lo), min(b, hi)
        if x1 <= x0:
            continue
        L = b - a
        # integrals of (b - t)/L and (t - a)/L over [x0, x1]
        w[k] += ((b - x0) ** 2 - (b - x1) ** 2) / (2 * L)
        w[k + 1] += ((x1 - a) ** 2 - (x0 - a) ** 2) / (2 * L)
    return w


def cylinder_window(spec: GridSpec, C: ParabolicCylinder):
    """Index window covering ``C`` plus the in-window membership mask and weights.

    Space uses the strict ball on grid nodes; time uses hat weights clipped to
    ``(t0 - r^{2b}, t0]``, so slices whose hat overlaps the interval take part.
    """
    tol = 1e-12
    times = spec.times
    wt_full = clipped_hat_weights(times, C.t0 - C.height, C.t0)
    on = np.flatnonzero(wt_full > tol * max(spec.dt, 1.0))
    sl_t = slice(int(on[0]), int(on[-1]) + 1) if on.size else slice(0, 0)
    slices = [sl_t]
    for i, c in enumerate(C.center):
        slices.append(_axis_window(spec.axis(i), c - C.r - tol, c + C.r + tol))
    _, ws = spec.weights_1d()
    wt = wt_full[sl_t]
    xs_loc = []
    for i in range(spec.n):
        shp = [1] * (spec.n + 1)
        shp[i + 1] = -1
        xs_loc.append(spec.axis(i)[slices[i + 1]].reshape(shp))
    d2 = sum((x - c) ** 2 for x, c in zip(xs_loc, C.center))
    mask = np.broadcast_to((d2 < C.r**2) & (wt.reshape((-1,) + (1,) * spec.n) > 0),
                           (wt.size,) + tuple(x.size for x in xs_loc))
    w = _outer(wt, [w_[s] for w_, s in zip(ws, slices[1:])])
    return tuple(slices), mask, w * mask


def box_weights(spec: GridSpec, region: Box) -> np.ndarray:
    """Tensor trapezoid weights for the grid nodes inside ``region`` (zero elsewhere)."""
    tol = 1e-9 * max(1.0, max(abs(v) for ab in spec.box for v in ab))

    def sub_weights(nodes, lo, hi):
        w = np.zeros_like(nodes)
        inside = np.flatnonzero((nodes >= lo - tol) & (nodes <= hi + tol))
        if inside.size >= 2:
            pts = nodes[inside]
            dw = np.diff(pts)
            w[inside[:-1]] += dw / 2
            w[inside[1:]] += dw / 2
        return w

    wt = sub_weights(spec.times, region.t_lo, region.t_hi)
    ws = [sub_weights(spec.axis(i), region.lo[i], region.hi[i]) for i in range(spec.n)]
    return _outer(wt, ws)


def region_weights(spec: GridSpec, region=None) -> np.ndarray:
    """Quadrature weights (grid shape) for the whole grid, a :class:`Box` or a cylinder."""
    if region is None:
        return spec.weights()
    if isinstance(region, Box):
        return box_weights(spec, region)
    if isinstance(region, ParabolicCylinder):
        w = np.zeros(spec.shape)
        slices, _, wloc = cylinder_window(spec, region)
        w[slices] = wloc
        return w
    raise TypeError(f"unsupported region {type(region).__name__}")


def restrict(u: GridFunction, C: ParabolicCylinder) -> Restriction:
    """Samples of ``u`` inside ``C`` with clipped trapezoid weights; may be empty."""
    slices, mask, w = cylinder_window(u.spec, C)
    vals = u.values[slices][mask]
    t_loc = u.spec.times[slices[0]]
    grids = np.meshgrid(t_loc, *[u.spec.axis(i)[slices[i + 1]] for i in range(u.spec.n)], indexing="ij")
    pts = np.stack([g[mask] for g in grids[1:]] + [grids[0][mask]], axis=-1) if mask.any() \
        else np.zeros((0, u.spec.n + 1))
    return Restriction(vals.reshape(-1, u.m), pts, w[mask])


# -- derivatives -----------------------------------------------------------------------

# fourth-order first-derivative stencils: interior and the two one-sided closures
_CENTRAL = np.array([1.0, -8.0, 0.0, 8.0, -1.0]) / 12.0
_EDGE0 = np.array([-25.0, 48.0, -36.0, 16.0, -3.0]) / 12.0
_EDGE1 = np.array([-3.0, -10.0, 18.0, -6.0, 1.0]) / 12.0


def fd_first_derivative(values: np.ndarray, h: float, axis: int) -> np.ndarray:
    """Fourth-order finite-difference derivative along ``axis`` (non-periodic)."""
    v = np.moveaxis(values, axis, 0)
    k = v.shape[0]
    if k < 5:
        raise GridResolutionError(f"need at least 5 nodes along an axis for 4th-order differences, got {k}")
    out = np.empty_like(v)
    out[2:-2] = sum(c * v[i : k - 4 + i] for i, c in enumerate(_CENTRAL) if c)
    out[0] = sum(c * v[i] for i, c in enumerate(_EDGE0))
    out[1] = sum(c * v[i] for i, c in enumerate(_EDGE1))
    out[-1] = -sum(c * v[k - 1 - i] for i, c in enumerate(_EDGE0))
    out[-2] = -sum(c * v[k - 1 - i] for i, c in enumerate(_EDGE1))
    return np.moveaxis(out / h, 0, axis)


def spectral_multiplier(spec: GridSpec, alpha: MultiIndex) -> np.ndarray:
    """``(i k)^alpha`` on the FFT grid (spatial axes only); odd orders drop the Nyquist mode."""
    mult = np.ones((spec.N_x,) * spec.n, dtype=complex)
    for i, a in enumerate(alpha):
        if not a:
            continue
        k = spec.wavenumbers(i)
        f = (1j * k) ** a
        if a % 2 and spec.N_x % 2 == 0:
            f[spec.N_x // 2] = 0.0
        shp = [1] * spec.n
        shp[i] = -1
        mult = mult * f.reshape(shp)
    return mult


def _spatial_axes(spec: GridSpec) -> tuple[int, ...]:
    return tuple(range(1, spec.n + 1))


def spatial_derivative(u: GridFunction, alpha: MultiIndex) -> GridFunction:
    """``D^alpha u``: spectral on periodic grids, 4th-order differences otherwise."""
    alpha = tuple(int(a) for a in alpha)
    spec = u.spec
    if len(alpha) != spec.n:
        raise ValueError(f"multi-index {alpha} does not match n={spec.n}")
    order = sum(alpha)
    if order == 0:
        return u
    key = ("dx", alpha)
    if key in u._cache:
        return u._cache[key]
    if spec.N_x < 4 * order:
        raise GridResolutionError(f"derivative of order {order} needs N_x >= {4 * order}, have {spec.N_x}")
    if spec.periodic_space:
        axes = _spatial_axes(spec)
        uh = np.fft.fftn(u.values, axes=axes)
        mult = spectral_multiplier(spec, alpha)[None, ..., None]
        vals = np.fft.ifftn(uh * mult, axes=axes).real
    else:
        vals = u.values
        for i, a in enumerate(alpha):
            for _ in range(a):
                vals = fd_first_derivative(vals, spec.h[i], axis=i + 1)
    out = GridFunction(spec, vals)
    u._cache[key] = out
    return out


def time_derivative(u: GridFunction) -> GridFunction:
    """Fourth-order finite differences in ``t``, one-sided at both ends."""
    if "dt" in u._cache:
        return u._cache["dt"]
    if u.spec.N_t < 5:
        raise GridResolutionError(f"time derivative needs N_t >= 5, have {u.spec.N_t}")
    out = GridFunction(u.spec, fd_first_derivative(u.values, u.spec.dt, axis=0))
    u._cache["dt"] = out
    return out


def _coefficients_on_grid(coeff_field: Callable, spec: GridSpec) -> dict:
    t, xs = spec.mesh()
    x = np.stack(np.broadcast_arrays(*xs, t)[:-1], axis=-1)
    tt = np.broadcast_to(t, spec.shape)
    return coeff_field(x, tt)


def apply_operator(system: ParabolicSystem, u: GridFunction, coeff_field: Callable | None = None) -> GridFunction:
    """``D_t u - sum_{|alpha|=2b} A_alpha D^alpha u`` on the grid.

    ``coeff_field(x, t)`` (``x`` of shape ``(..., n)``, ``t`` of shape ``(...)``)
    returns a mapping ``alpha -> array (..., m, m)``; when omitted the constant
    matrices of ``system`` are used.
    """
    if u.spec.n != system.n or u.m != system.m:
        raise ValueError("grid function is incompatible with the system (n or m differs)")
    out = time_derivative(u).values.copy()
    coeffs = system.principal if coeff_field is None else _coefficients_on_grid(coeff_field, u.spec)
    for alpha, A in coeffs.items():
        d = spatial_derivative(u, alpha).values
        A = np.asarray(A)
        if A.ndim == 2:
            out -= d @ A.T
        else:
            out -= np.einsum("...ij,...j->...i", A, d)
    return GridFunction(u.spec, out)
