"""Regularity classifier on the ``(p, lambda)`` plane.

For a solution whose operator image lies in ``L^{p,lambda}``, the derivative ``D^s u``
(``0 <= s <= 2b-1``) lands in a Morrey, BMO/VMO or Hoelder class depending on where
``p`` sits relative to the thresholds

    tau_s = (n + 2b - lambda) / (2b - s),   tau_{s+1} = (n + 2b - lambda) / (2b - s - 1)

(``tau_{2b} = +inf``).  Geometrically ``p = tau_s`` is the line through the apex
``(0, n+2b)``, ``A_s = (1, n+s)`` and ``B_s = ((n+2b)/(2b-s), 0)``.

Rational inputs (``int``, ``Fraction`` or decimal strings) are handled exactly; float
inputs that land within ``1e-12`` of a threshold are reported as ``Boundary``.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from fractions import Fraction
from numbers import Rational
from pathlib import Path

FLOAT_BAND = 1e-12


class QueryError(ValueError):
    pass


def as_number(x):
    """``Fraction`` for ints, fractions and numeric strings; ``float`` otherwise."""
    if isinstance(x, bool):
        raise QueryError("booleans are not numbers here")
    if isinstance(x, Rational):
        return Fraction(x)
    if isinstance(x, str):
        try:
            return Fraction(x.strip())
        except (ValueError, ZeroDivisionError):
            raise QueryError(f"not a number: {x!r}") from None
    x = float(x)
    if not math.isfinite(x):
        raise QueryError("inputs must be finite")
    return x


def _exact(*vals) -> bool:
    return all(isinstance(v, Fraction) for v in vals)


def _cmp(a, b) -> int:
    """Three-way comparison; floats within the band compare equal."""
    if _exact(a, b):
        return (a > b) - (a < b)
    d = float(a) - float(b)
    if abs(d) <= FLOAT_BAND * max(1.0, abs(float(b))):
        return 0
    return 1 if d > 0 else -1


@dataclass(frozen=True)
class RegularityQuery:
    n: int
    b: int
    s: int
    p: object
    lam: object = Fraction(0)

    def __post_init__(self):
        for name in ("n", "b", "s"):
            v = getattr(self, name)
            if isinstance(v, bool) or int(v) != v:
                raise QueryError(f"{name} must be an integer, got {v!r}")
            object.__setattr__(self, name, int(v))
        object.__setattr__(self, "p", as_number(self.p))
        object.__setattr__(self, "lam", as_number(self.lam))
        if self.n < 2:
            raise QueryError(f"n must be >= 2, got {self.n}")
        if self.b < 1:
            raise QueryError(f"b must be >= 1, got {self.b}")
        if not 0 <= self.s <= 2 * self.b - 1:
            raise QueryError(f"s must lie in 0..{2 * self.b - 1}, got {self.s}")
        if not self.p > 1:
            raise QueryError(f"p must exceed 1, got {self.p}")
        if not 0 <= self.lam < self.n + 2 * self.b:
            raise QueryError(f"lambda must lie in [0, n+2b) = [0, {self.n + 2 * self.b}), got {self.lam}")

    @property
    def exact(self) -> bool:
        return _exact(self.p, self.lam)


def tau(n: int, b: int, s: int, lam=0):
    """``(n + 2b - lambda) / (2b - s)``; ``inf`` for ``s = 2b``."""
    if s >= 2 * b:
        return math.inf
    lam = as_number(lam)
    top = n + 2 * b - lam
    return top / (2 * b - s) if isinstance(top, Fraction) else float(top) / (2 * b - s)


@dataclass(frozen=True)
class RegularityClass:
    """Verdict for ``D^s u``.

    ``kind`` is one of ``Morrey``, ``BMO``, ``VMO``, ``Holder``, ``Boundary``.
    ``exponent`` is the Morrey exponent ``(2b-s)p + lambda``; ``sigma`` the Hoelder
    exponent; ``redirect_s`` names the derivative order whose window contains ``p``
    when the query falls past ``tau_{s+1}``.
    """

    kind: str
    p: object = None
    exponent: object = None
    sigma: object = None
    essentially_bounded: bool = False
    threshold: str | None = None
    redirect_s: int | None = None
    note: str = ""

    def describe(self) -> str:
        if self.kind == "Morrey":
            text = f"Morrey L^(p={self.p}, {self.exponent})"
        elif self.kind == "Holder":
            text = f"Holder sigma={self.sigma}"
        elif self.kind == "Boundary":
            text = f"Boundary ({self.threshold})"
            if self.redirect_s is not None:
                text += f"; see s={self.redirect_s}"
        else:
            text = self.kind
        if self.essentially_bounded:
            text += "; essentially bounded"
        return text

    def as_row(self) -> dict:
        def fmt(v):
            return "" if v is None else str(v)

        return {"kind": self.kind, "p": fmt(self.p), "exponent": fmt(self.exponent), "sigma": fmt(self.sigma),
                "essentially_bounded": int(self.essentially_bounded), "threshold": fmt(self.threshold),
                "redirect_s": fmt(self.redirect_s), "note": self.note}


def window_index(n: int, b: int, p, lam) -> tuple[str, int]:
    """Where ``p`` sits among the thresholds: ``("below", 0)``, ``("on", s)`` or ``("between", s)``.

    ``("between", s)`` means ``tau_s < p < tau_{s+1}`` (``s = 2b-1`` is unbounded above).
    """
    p, lam = as_number(p), as_number(lam)
    top = n + 2 * b - lam
    # tau_s increases with s, so scan from the largest threshold down
    for s in range(2 * b - 1, -1, -1):
        c = _sign((2 * b - s) * p - top, top)
        if c == 0:
            return "on", s
        if c > 0:
            return "between", s
    return "below", 0


def _float_band_hit(q: RegularityQuery, s: int) -> bool:
    return not q.exact and float(q.p) != float(tau(q.n, q.b, s, q.lam))


def _sign(x, scale) -> int:
    """Sign of ``x``; floats within ``FLOAT_BAND * scale`` of zero count as zero."""
    if isinstance(x, Fraction):
        return (x > 0) - (x < 0)
    if abs(x) <= FLOAT_BAND * max(1.0, abs(float(scale))):
        return 0
    return 1 if x > 0 else -1


def classify(q: RegularityQuery) -> RegularityClass:
    n, b, s, p, lam = q.n, q.b, q.s, q.p, q.lam
    top = n + 2 * b - lam  # p = tau_s  <=>  (2b - s) p = top
    lam_pos = lam > 0
    bounded = s == 0 and not lam_pos and 2 * b * p > n + 2 * b
    c = _sign((2 * b - s) * p - top, top)
    if c < 0:
        return RegularityClass("Morrey", p=p, exponent=(2 * b - s) * p + lam, essentially_bounded=bounded)
    if c == 0:
        if _float_band_hit(q, s):
            return RegularityClass("Boundary", p=p, threshold=f"p within {FLOAT_BAND:g} of tau_{s}",
                                   essentially_bounded=bounded,
                                   note="inexact input on the BMO borderline")
        return RegularityClass("BMO" if lam_pos else "VMO", p=p, essentially_bounded=bounded)
    c1 = -1 if s == 2 * b - 1 else _sign((2 * b - s - 1) * p - top, top)
    if c1 < 0:
        return RegularityClass("Holder", p=p, sigma=2 * b - s - top / p, essentially_bounded=bounded)
    if c1 == 0 and _float_band_hit(q, s + 1):
        return RegularityClass("Boundary", p=p, threshold=f"p within {FLOAT_BAND:g} of tau_{s + 1}",
                               essentially_bounded=bounded, note="inexact input on the next borderline")
    _, k = window_index(n, b, p, lam)
    return RegularityClass("Boundary", p=p, threshold=f"p >= tau_{s + 1}", redirect_s=k,
                           essentially_bounded=bounded,
                           note=f"D^{s + 1} u already has a regularity class; the window containing p is s={k}")


# -- geometry ------------------------------------------------------------------------------


def region_vertices(n: int, b: int, s: int) -> dict:
    """``B_s``, ``A_s`` and the apex, exactly; asserts the three are collinear."""
    if not 0 <= s <= 2 * b - 1:
        raise QueryError(f"s must lie in 0..{2 * b - 1}")
    B = (Fraction(n + 2 * b, 2 * b - s), Fraction(0))
    A = (Fraction(1), Fraction(n + s))
    apex = (Fraction(0), Fraction(n + 2 * b))
    det = (A[0] - apex[0]) * (B[1] - apex[1]) - (A[1] - apex[1]) * (B[0] - apex[0])
    if det != 0:
        raise AssertionError(f"apex, A_{s}, B_{s} not collinear (det={det})")
    return {"B": B, "A": A, "apex": apex}


def collinearity_det(n: int, b: int, s: int) -> Fraction:
    v = region_vertices(n, b, s)
    A, B, O = v["A"], v["B"], v["apex"]
    return (A[0] - O[0]) * (B[1] - O[1]) - (A[1] - O[1]) * (B[0] - O[0])


@dataclass(frozen=True)
class Region:
    """``triangle`` (below every threshold), ``segment`` ``s``, ``tetragon`` ``s`` or ``unbounded``."""

    label: str
    s: int | None
    sigma: object = None  # |C A_s| for tetragon and unbounded points

    def implied(self, s: int, lam) -> str:
        """Classifier kind implied for derivative order ``s``."""
        if self.label == "triangle":
            return "Morrey"
        k = self.s
        if s > k:
            return "Morrey"
        if s < k:
            return "Boundary"
        if self.label == "segment":
            return "BMO" if _cmp(lam, 0) > 0 else "VMO"
        return "Holder"


def cut_length(n: int, b: int, s: int, p, lam):
    """``|C A_s|``: ``C`` is where the line from the apex through ``(p, lambda)`` meets ``p = 1``."""
    p, lam = as_number(p), as_number(lam)
    lam_c = n + 2 * b - (n + 2 * b - lam) / p
    return lam_c - (n + s)


def region_membership(point, n: int, b: int) -> Region:
    """Figure-style region containing ``(p, lambda)``, ``p > 1``, ``0 < lambda < n+2b``."""
    p, lam = (as_number(v) for v in point)
    if not p > 1 or not 0 < lam < n + 2 * b:
        raise QueryError(f"point ({p}, {lam}) outside p > 1, 0 < lambda < {n + 2 * b}")
    # the line through the apex and B_s is lambda = n + 2b - (2b - s) p
    for s in range(2 * b):
        line = n + 2 * b - (2 * b - s) * p
        c = _cmp(lam, line)
        if c < 0:
            # strictly below the s-th line
            if s == 0:
                return Region("triangle", None)
            return Region("tetragon", s - 1, cut_length(n, b, s - 1, p, lam))
        if c == 0:
            return Region("segment", s)
    return Region("unbounded", 2 * b - 1, cut_length(n, b, 2 * b - 1, p, lam))


# -- diagram -------------------------------------------------------------------------------


def diagram_rows(n: int, b: int) -> tuple[list[dict], list[dict]]:
    """Vertex rows ``{label, p, lambda, provenance}`` and edge rows ``{label, from, to, kind}``."""
    verts = [{"label": "O", "p": Fraction(0), "lambda": Fraction(0), "provenance": "origin"},
             {"label": "B", "p": Fraction(1), "lambda": Fraction(0), "provenance": "(1, 0): p = 1 on the p-axis"},
             {"label": "apex", "p": Fraction(0), "lambda": Fraction(n + 2 * b), "provenance": "(0, n+2b)"}]
    edges = []
    for s in range(2 * b):
        v = region_vertices(n, b, s)
        verts.append({"label": f"B{s}", "p": v["B"][0], "lambda": v["B"][1],
                      "provenance": f"((n+2b)/(2b-s), 0) with s={s}"})
        verts.append({"label": f"A{s}", "p": v["A"][0], "lambda": v["A"][1], "provenance": f"(1, n+s) with s={s}"})
        edges.append({"label": f"A{s}B{s}", "from": f"A{s}", "to": f"B{s}", "kind": f"segment p = tau_{s}"})
    edges.append({"label": "BB0", "from": "B", "to": "B0", "kind": "triangle BB0A0"})
    edges.append({"label": "BA0", "from": "B", "to": "A0", "kind": "triangle BB0A0"})
    for s in range(2 * b - 1):
        edges.append({"label": f"B{s}B{s + 1}", "from": f"B{s}", "to": f"B{s + 1}", "kind": f"tetragon R{s}"})
        edges.append({"label": f"A{s}A{s + 1}", "from": f"A{s}", "to": f"A{s + 1}", "kind": f"tetragon R{s}"})
    return verts, edges


def _svg(n: int, b: int, verts: list[dict]) -> str:
    pos = {v["label"]: (float(v["p"]), float(v["lambda"])) for v in verts}
    p_max = 1.25 * pos[f"B{2 * b - 1}"][0]
    l_max = 1.08 * (n + 2 * b)
    W, H, pad = 640.0, 480.0, 48.0

    def xy(p, lam):
        return pad + (W - 2 * pad) * p / p_max, H - pad - (H - 2 * pad) * lam / l_max

    def pts(labels):
        return " ".join("{:.3f},{:.3f}".format(*xy(*pos[k])) for k in labels)

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{W:g}" height="{H:g}" viewBox="0 0 {W:g} {H:g}">',
           f"<title>(p, lambda) regularity regions, n={n}, b={b}</title>",
           '<rect width="100%" height="100%" fill="white"/>']
    palette = ["#dbe9f6", "#fde2c8", "#d7f0d2", "#eadcf3", "#f6f2c4", "#f3d4dc"]
    out.append(f'<polygon id="region-triangle" class="region" points="{pts(["B", "B0", "A0"])}" '
               f'fill="{palette[0]}" stroke="none"/>')
    for s in range(2 * b - 1):
        out.append(f'<polygon id="region-R{s}" class="region" points="{pts([f"B{s}", f"B{s + 1}", f"A{s + 1}", f"A{s}"])}" '
                   f'fill="{palette[(s + 1) % len(palette)]}" stroke="none"/>')
    last = 2 * b - 1
    x_edge = p_max
    lam_at_edge = max(0.0, (n + 2 * b) - (2 * b - last) * x_edge)
    corner = [xy(*pos[f"B{last}"]), xy(x_edge, 0.0), xy(x_edge, l_max), xy(1.0, l_max), xy(*pos[f"A{last}"])]
    if lam_at_edge > 0:
        corner.insert(1, xy(x_edge, lam_at_edge))
    out.append(f'<polygon id="region-R{last}" class="region unbounded" points="'
               + " ".join(f"{a:.3f},{c:.3f}" for a, c in corner) + f'" fill="{palette[(last + 1) % len(palette)]}" '
               'fill-opacity="0.6" stroke="none"/>')
    x0, y0 = xy(0, 0)
    x1, _ = xy(p_max, 0)
    _, y1 = xy(0, l_max)
    out.append(f'<line id="axis-p" x1="{x0:.3f}" y1="{y0:.3f}" x2="{x1:.3f}" y2="{y0:.3f}" stroke="black"/>')
    out.append(f'<line id="axis-lambda" x1="{x0:.3f}" y1="{y0:.3f}" x2="{x0:.3f}" y2="{y1:.3f}" stroke="black"/>')
    out.append(f'<text x="{x1 - 8:.3f}" y="{y0 + 20:.3f}" font-size="14">p</text>')
    out.append(f'<text x="{x0 - 30:.3f}" y="{y1 + 4:.3f}" font-size="14">&#955;</text>')
    bx, by = xy(1.0, 0.0)
    _, top = xy(1.0, l_max)
    out.append(f'<line id="line-p1" x1="{bx:.3f}" y1="{by:.3f}" x2="{bx:.3f}" y2="{top:.3f}" stroke="gray" '
               'stroke-dasharray="4 3"/>')
    for s in range(2 * b):
        (ax, ay), (bx_, by_) = xy(*pos[f"A{s}"]), xy(*pos[f"B{s}"])
        (ox, oy) = xy(*pos["apex"])
        out.append(f'<line id="guide-{s}" x1="{ox:.3f}" y1="{oy:.3f}" x2="{ax:.3f}" y2="{ay:.3f}" stroke="gray" '
                   'stroke-dasharray="2 3"/>')
        out.append(f'<line id="segment-A{s}B{s}" class="segment" x1="{ax:.3f}" y1="{ay:.3f}" x2="{bx_:.3f}" '
                   f'y2="{by_:.3f}" stroke="black" stroke-width="1.5"/>')
    for v in verts:
        if v["label"] == "O":
            continue
        x, y = xy(float(v["p"]), float(v["lambda"]))
        out.append(f'<circle id="vertex-{v["label"]}" class="vertex" cx="{x:.3f}" cy="{y:.3f}" r="3" '
                   f'data-p="{v["p"]}" data-lambda="{v["lambda"]}"/>')
        out.append(f'<text class="label" x="{x + 5:.3f}" y="{y - 5:.3f}" font-size="12">{v["label"]}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def emit_diagram(n: int, b: int, path) -> tuple[Path, Path]:
    """Write ``<path>.svg`` plus ``<path>.csv`` (vertices) and ``<path>_edges.csv``.

    Vertices in the SVG are ``<circle id="vertex-LABEL" data-p=... data-lambda=...>``;
    regions are polygons ``region-triangle`` and ``region-R<s>``.
    """
    if n < 2 or b < 1:
        raise QueryError("need n >= 2 and b >= 1")
    path = Path(path)
    stem = path.with_suffix("") if path.suffix == ".svg" else path
    svg_path = stem.with_suffix(".svg")
    csv_path = stem.with_suffix(".csv")
    edge_path = stem.parent / (stem.name + "_edges.csv")
    verts, edges = diagram_rows(n, b)
    try:
        svg_path.write_text(_svg(n, b, verts))
        with open(csv_path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=["label", "p", "lambda", "provenance"], lineterminator="\n")
            w.writeheader()
            for v in verts:
                w.writerow({k: str(v[k]) for k in w.fieldnames})
        with open(edge_path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=["label", "from", "to", "kind"], lineterminator="\n")
            w.writeheader()
            w.writerows(edges)
    except OSError as exc:
        raise QueryError(f"cannot write diagram to {path}: {exc}") from exc
    return svg_path, csv_path
