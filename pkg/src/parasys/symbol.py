"""Constant-coefficient 2b-order systems, their symbols and characteristic roots.

A system ``D_t u - sum_{|alpha|=2b} A_alpha D^alpha u = f`` is stored as a map from
multi-indices (tuples of length ``n``) to real ``m x m`` matrices.  Everything here
works with *frozen* coefficients; variable coefficients are handled by freezing
them at a point (see :meth:`ParabolicSystem.freeze`).
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from itertools import combinations_with_replacement
from typing import Callable, Mapping

import numpy as np
from scipy import optimize
from scipy.stats import qmc

MultiIndex = tuple[int, ...]

#: margins closer to zero than this are treated as zero
ROOT_TOL = 1e-9


class SymbolError(ValueError):
    """Raised for invalid systems or failed root computations."""


def multi_indices(n: int, order: int) -> list[MultiIndex]:
    """All multi-indices of length ``n`` with ``|alpha| == order``, in lexicographic order (descending)."""
    out = []
    for combo in combinations_with_replacement(range(n), order):
        alpha = [0] * n
        for i in combo:
            alpha[i] += 1
        out.append(tuple(alpha))
    return sorted(set(out), reverse=True)


def multi_index_order(alpha: MultiIndex) -> int:
    return int(sum(alpha))


def monomial(xi: np.ndarray, alpha: MultiIndex) -> np.ndarray:
    """``xi**alpha`` evaluated over the last axis of ``xi``."""
    xi = np.asarray(xi, dtype=float)
    out = np.ones(xi.shape[:-1])
    for i, a in enumerate(alpha):
        if a:
            out = out * xi[..., i] ** a
    return out


@dataclass(frozen=True, eq=False)
class ParabolicSystem:
    """Principal part of ``D_t u - sum A_alpha D^alpha u``.

    Parameters
    ----------
    n, b, m : int
        Spatial dimension, half-order and number of unknowns.
    principal : mapping
        ``alpha -> A_alpha`` with ``|alpha| == 2b``; matrices are ``m x m``.
    lower_order : mapping, optional
        Reserved slot for ``B_beta`` (``|beta| <= 2b-1``).  Stored and validated,
        never used by any operator.
    """

    n: int
    b: int
    m: int
    principal: Mapping[MultiIndex, np.ndarray]
    lower_order: Mapping[MultiIndex, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if self.n < 1 or self.b < 1 or self.m < 1:
            raise SymbolError(f"need n, b, m >= 1, got n={self.n}, b={self.b}, m={self.m}")
        principal = {}
        for alpha, mat in self.principal.items():
            alpha = tuple(int(a) for a in alpha)
            if len(alpha) != self.n or min(alpha) < 0:
                raise SymbolError(f"multi-index {alpha} is not a length-{self.n} non-negative index")
            if sum(alpha) != 2 * self.b:
                raise SymbolError(f"principal multi-index {alpha} has order {sum(alpha)}, expected {2 * self.b}")
            mat = np.array(mat, dtype=float).reshape(self.m, self.m) if np.size(mat) == self.m**2 else None
            if mat is None:
                raise SymbolError(f"coefficient for {alpha} is not {self.m}x{self.m}")
            if not np.all(np.isfinite(mat)):
                raise SymbolError(f"coefficient for {alpha} has non-finite entries")
            mat.setflags(write=False)
            if alpha in principal:
                mat = principal[alpha] + mat
            principal[alpha] = mat
        if not principal or all(not np.any(a) for a in principal.values()):
            raise SymbolError("at least one principal coefficient must be nonzero")
        lower = {}
        for beta, mat in self.lower_order.items():
            beta = tuple(int(x) for x in beta)
            if len(beta) != self.n or sum(beta) > 2 * self.b - 1:
                raise SymbolError(f"lower-order multi-index {beta} invalid")
            mat = np.array(mat, dtype=float).reshape(self.m, self.m)
            mat.setflags(write=False)
            lower[beta] = mat
        object.__setattr__(self, "principal", dict(sorted(principal.items(), reverse=True)))
        object.__setattr__(self, "lower_order", lower)

    @property
    def order(self) -> int:
        return 2 * self.b

    def coefficient(self, alpha: MultiIndex) -> np.ndarray:
        return self.principal.get(tuple(alpha), np.zeros((self.m, self.m)))

    def scale(self) -> float:
        """Largest entry magnitude among the principal coefficients."""
        return max(float(np.abs(a).max()) for a in self.principal.values())

    def freeze(self, coeff_field: Callable, x, t) -> "ParabolicSystem":
        """Constant system with coefficients ``coeff_field(x, t)`` (a mapping alpha -> matrix)."""
        coeffs = coeff_field(np.asarray(x, dtype=float), float(t))
        return ParabolicSystem(self.n, self.b, self.m, {a: np.asarray(v) for a, v in coeffs.items()})

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "b": self.b,
            "m": self.m,
            "principal": [{"alpha": list(a), "matrix": mat.tolist()} for a, mat in self.principal.items()],
        }

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


# -- stock systems ---------------------------------------------------------------------


def heat_system(n: int, m: int = 1, diffusivity: float = 1.0) -> ParabolicSystem:
    """``D_t u - diffusivity * Laplacian u`` acting componentwise."""
    return diagonal_laplacian_system([diffusivity] * m, n)


def diagonal_laplacian_system(deltas, n: int) -> ParabolicSystem:
    """``D_t u - diag(delta_1, ..., delta_m) Laplacian u``.

    Parabolic iff every ``delta_j > 0``; strongly elliptic iff ``prod(delta) > 0``.
    """
    deltas = np.asarray(deltas, dtype=float)
    mat = np.diag(deltas)
    principal = {}
    for i in range(n):
        alpha = [0] * n
        alpha[i] = 2
        principal[tuple(alpha)] = mat
    return ParabolicSystem(n, 1, len(deltas), principal)


def polyharmonic_system(n: int, b: int, m: int = 1, scale: float = 1.0) -> ParabolicSystem:
    """``D_t u + scale * (-Laplacian)^b u``, whose symbol is ``-scale * |xi|^{2b} Id``.

    The coefficient of ``D^{2 gamma}`` is ``(-1)^{b+1} * scale * b!/gamma!``.
    """
    principal = {}
    for gamma in multi_indices(n, b):
        coef = math.factorial(b) / math.prod(math.factorial(g) for g in gamma)
        alpha = tuple(2 * g for g in gamma)
        principal[alpha] = (-1) ** (b + 1) * scale * coef * np.eye(m)
    return ParabolicSystem(n, b, m, principal)


# -- symbol and roots ------------------------------------------------------------------


def symbol_matrices(system: ParabolicSystem, xi) -> np.ndarray:
    """Vectorised symbol ``(-1)^b sum A_alpha xi^alpha`` for ``xi`` of shape ``(..., n)``."""
    xi = np.asarray(xi, dtype=float)
    if xi.shape[-1] != system.n:
        raise SymbolError(f"xi has length {xi.shape[-1]}, system has n={system.n}")
    out = np.zeros(xi.shape[:-1] + (system.m, system.m))
    for alpha, mat in system.principal.items():
        out += monomial(xi, alpha)[..., None, None] * mat
    return (-1) ** system.b * out


def evaluate_symbol(system: ParabolicSystem, xi) -> np.ndarray:
    xi = np.asarray(xi, dtype=float)
    if xi.ndim != 1:
        raise SymbolError("evaluate_symbol takes a single n-vector; use symbol_matrices for batches")
    if not np.all(np.isfinite(xi)):
        raise SymbolError("xi must be finite")
    return symbol_matrices(system, xi)


def _sorted_eigvals(mats: np.ndarray) -> np.ndarray:
    try:
        vals = np.linalg.eigvals(mats)
    except np.linalg.LinAlgError as exc:
        raise SymbolError(f"eigenvalue solver failed: {exc}") from exc
    if not np.all(np.isfinite(vals)):
        raise SymbolError("eigenvalue solver returned non-finite roots")
    order = np.argsort(-vals.real, axis=-1, kind="stable")
    return np.take_along_axis(vals, order, axis=-1)


def characteristic_roots(system: ParabolicSystem, xi) -> np.ndarray:
    """Roots of ``det(p Id - sum A_alpha (i xi)^alpha)``, by descending real part."""
    return _sorted_eigvals(evaluate_symbol(system, xi))


def roots_batch(system: ParabolicSystem, xi) -> np.ndarray:
    return _sorted_eigvals(symbol_matrices(system, xi))


# -- sphere sampling -------------------------------------------------------------------


def sphere_samples(n: int, count: int) -> np.ndarray:
    """Deterministic, roughly uniform points on the unit sphere of R^n."""
    if count < 1:
        raise ValueError("count must be >= 1")
    if n == 1:
        return np.array([[1.0], [-1.0]])
    if n == 2:
        theta = 2 * np.pi * (np.arange(count) + 0.5) / count
        return np.stack([np.cos(theta), np.sin(theta)], axis=-1)
    if n == 3:
        # Fibonacci spiral
        k = np.arange(count) + 0.5
        z = 1 - 2 * k / count
        phi = np.pi * (3 - np.sqrt(5)) * k
        rad = np.sqrt(1 - z**2)
        return np.stack([rad * np.cos(phi), rad * np.sin(phi), z], axis=-1)
    # generalised: unscrambled Sobol points pushed through the Gaussian quantile
    from scipy.special import ndtri

    m = int(np.ceil(np.log2(max(count, 2))))
    pts = qmc.Sobol(d=n, scramble=False).random_base2(m)[1 : count + 1]
    pts = np.clip(pts, 1e-12, 1 - 1e-12)
    g = ndtri(pts)
    return g / np.linalg.norm(g, axis=-1, keepdims=True)


def _refine_min(fun, xi0: np.ndarray) -> tuple[float, np.ndarray]:
    """Nelder-Mead on the sphere (parametrised by un-normalised vectors)."""
    if xi0.size == 1:
        return fun(xi0), xi0

    def obj(y):
        nrm = np.linalg.norm(y)
        return fun(y / nrm) if nrm > 0 else np.inf

    res = optimize.minimize(obj, xi0, method="Nelder-Mead",
                            options={"xatol": 1e-11, "fatol": 1e-14, "maxiter": 4000})
    y = res.x / np.linalg.norm(res.x)
    return float(fun(y)), y


@dataclass(frozen=True)
class ParabolicityReport:
    """Outcome of the unit-sphere sweep.

    ``margin`` is the raw minimum of ``-max_s Re p_s`` (negative for systems with
    roots in the right half-plane); ``delta_hat = max(margin, 0)`` after clamping
    values within :data:`ROOT_TOL` of zero.
    """

    is_parabolic: bool
    delta_hat: float
    margin: float
    worst_xi: np.ndarray
    worst_root: complex
    samples_used: int
    notes: tuple[str, ...] = ()


def _default_samples(n: int) -> int:
    return 4096 if n <= 3 else 8192


def check_parabolicity(system: ParabolicSystem, n_samples: int | None = None) -> ParabolicityReport:
    """Estimate the Petrovskii constant ``delta`` with ``Re p_s(xi) <= -delta |xi|^{2b}``.

    The symbol is ``2b``-homogeneous, so the minimum margin over the unit sphere is
    the constant for all ``xi`` (at sample resolution).
    """
    n_samples = n_samples or _default_samples(system.n)
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    xi = sphere_samples(system.n, n_samples)
    roots = roots_batch(system, xi)
    margins = -roots[:, 0].real
    k = int(np.argmin(margins))

    def margin_at(v):
        return -float(characteristic_roots(system, v)[0].real)

    margin, worst = _refine_min(margin_at, xi[k])
    if margins[k] < margin:
        margin, worst = float(margins[k]), xi[k]
    if abs(margin) < ROOT_TOL:
        margin = 0.0
    worst_root = complex(characteristic_roots(system, worst)[0])
    notes = ("n = 1 is outside the n >= 2 setting; report is for testing only",) if system.n == 1 else ()
    return ParabolicityReport(
        is_parabolic=margin > 0,
        delta_hat=max(margin, 0.0),
        margin=margin,
        worst_xi=np.asarray(worst),
        worst_root=worst_root,
        samples_used=len(xi),
        notes=notes,
    )


@dataclass(frozen=True)
class EllipticityReport:
    """Minimum of ``det E(xi)`` over the unit sphere under both sign conventions.

    ``K_hat`` uses ``E(xi) = sum A_alpha xi^alpha``; ``K_hat_signed`` uses the symbol
    of ``E(D)`` itself, i.e. ``(-1)^{bm} det E(xi)``.  ``convention`` says which
    one decides ``is_strongly_elliptic``.
    """

    is_strongly_elliptic: bool
    K_hat: float
    K_hat_signed: float
    convention: str
    worst_xi: np.ndarray


def check_strong_ellipticity(system: ParabolicSystem, n_samples: int | None = None,
                             convention: str = "det") -> EllipticityReport:
    if convention not in ("det", "signed"):
        raise ValueError("convention must be 'det' or 'signed'")
    n_samples = n_samples or _default_samples(system.n)
    xi = sphere_samples(system.n, n_samples)
    plain = (-1) ** system.b * symbol_matrices(system, xi)
    dets = np.linalg.det(plain)
    sign = (-1) ** (system.b * system.m)

    def det_at(v, s=1.0):
        return s * float(np.linalg.det((-1) ** system.b * evaluate_symbol(system, v)))

    k = int(np.argmin(dets))
    K, worst = _refine_min(det_at, xi[k])
    K = min(K, float(dets[k]))
    ks = int(np.argmin(sign * dets))
    K_signed, worst_s = _refine_min(lambda v: det_at(v, sign), xi[ks])
    K_signed = min(K_signed, float(sign * dets[ks]))
    chosen = K if convention == "det" else K_signed
    if abs(chosen) < ROOT_TOL:
        chosen = 0.0
    return EllipticityReport(
        is_strongly_elliptic=chosen > 0,
        K_hat=K,
        K_hat_signed=K_signed,
        convention=convention,
        worst_xi=np.asarray(worst if convention == "det" else worst_s),
    )
