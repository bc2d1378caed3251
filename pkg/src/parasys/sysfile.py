"""System specification files.

A system file is YAML with this schema::

    name: optional label
    n: 2            # spatial dimension
    b: 1            # half-order
    m: 2            # number of components
    principal:      # one entry per multi-index of order 2b
      - alpha: [2, 0]
        matrix: [[1, 0], [0, -1]]
      - alpha: [0, 2]
        matrix: [[1, 0], [0, -1]]
    lower_order: [] # optional, same entry shape, stored but unused

Entries repeating the same ``alpha`` are summed.  Every error message carries the
1-based line number and the offending field.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np
import yaml

from .symbol import ParabolicSystem, SymbolError


class SpecError(ValueError):
    """Malformed system file; ``line`` is 1-based (0 when unknown)."""

    def __init__(self, message: str, line: int = 0, field: str = ""):
        self.line = line
        self.field = field
        loc = f"line {line}" if line else "unknown line"
        super().__init__(f"{loc}, field '{field}': {message}" if field else f"{loc}: {message}")


def _line(node) -> int:
    return node.start_mark.line + 1


def _mapping(node, field: str) -> dict:
    if not isinstance(node, yaml.MappingNode):
        raise SpecError("expected a mapping", _line(node), field)
    out = {}
    for k, v in node.value:
        out[k.value] = (k, v)
    return out


def _int(node, field: str, minimum: int) -> int:
    if not isinstance(node, yaml.ScalarNode):
        raise SpecError("expected an integer", _line(node), field)
    try:
        val = int(node.value)
    except ValueError:
        raise SpecError(f"expected an integer, got {node.value!r}", _line(node), field) from None
    if val < minimum:
        raise SpecError(f"must be >= {minimum}, got {val}", _line(node), field)
    return val


def _real(node, field: str) -> float:
    if not isinstance(node, yaml.ScalarNode):
        raise SpecError("expected a number", _line(node), field)
    try:
        val = float(node.value)
    except ValueError:
        raise SpecError(f"expected a number, got {node.value!r}", _line(node), field) from None
    if not np.isfinite(val):
        raise SpecError("entries must be finite", _line(node), field)
    return val


def _seq(node, field: str) -> list:
    if not isinstance(node, yaml.SequenceNode):
        raise SpecError("expected a list", _line(node), field)
    return node.value


def _entries(node, field: str, n: int, m: int) -> dict:
    out: dict = {}
    for i, item in enumerate(_seq(node, field)):
        here = f"{field}[{i}]"
        entry = _mapping(item, here)
        for key in ("alpha", "matrix"):
            if key not in entry:
                raise SpecError(f"missing '{key}'", _line(item), here)
        a_node = entry["alpha"][1]
        alpha = tuple(_int(c, f"{here}.alpha", 0) for c in _seq(a_node, f"{here}.alpha"))
        if len(alpha) != n:
            raise SpecError(f"multi-index has length {len(alpha)}, expected n={n}", _line(a_node), f"{here}.alpha")
        mat_node = entry["matrix"][1]
        rows = _seq(mat_node, f"{here}.matrix")
        if len(rows) != m:
            raise SpecError(f"matrix has {len(rows)} rows, expected m={m}", _line(mat_node), f"{here}.matrix")
        mat = []
        for r, row in enumerate(rows):
            vals = [_real(c, f"{here}.matrix[{r}]") for c in _seq(row, f"{here}.matrix[{r}]")]
            if len(vals) != m:
                raise SpecError(f"row has {len(vals)} entries, expected m={m}", _line(row), f"{here}.matrix[{r}]")
            mat.append(vals)
        out[alpha] = out.get(alpha, 0) + np.array(mat)
        out.setdefault(("__line__", alpha), _line(a_node))
    return out


def parse_system(text: str) -> ParabolicSystem:
    """Parse YAML text into a :class:`ParabolicSystem`."""
    try:
        root = yaml.compose(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise SpecError(f"YAML syntax error: {getattr(exc, 'problem', exc)}",
                        mark.line + 1 if mark else 0) from None
    if root is None:
        raise SpecError("empty system file", 1)
    top = _mapping(root, "<root>")
    for key in ("n", "b", "m", "principal"):
        if key not in top:
            raise SpecError(f"missing required field '{key}'", _line(root), key)
    known = {"n", "b", "m", "principal", "lower_order", "name"}
    for key, (knode, _) in top.items():
        if key not in known:
            raise SpecError("unknown field", _line(knode), key)
    n = _int(top["n"][1], "n", 1)
    b = _int(top["b"][1], "b", 1)
    m = _int(top["m"][1], "m", 1)
    principal = _entries(top["principal"][1], "principal", n, m)
    lower = _entries(top["lower_order"][1], "lower_order", n, m) if "lower_order" in top else {}
    lines = {k[1]: v for k, v in principal.items() if k[0] == "__line__"}
    principal = {k: v for k, v in principal.items() if k[0] != "__line__"}
    lower = {k: v for k, v in lower.items() if k[0] != "__line__"}
    for alpha in principal:
        if sum(alpha) != 2 * b:
            raise SpecError(f"principal multi-index {list(alpha)} has order {sum(alpha)}, expected 2b={2 * b}",
                            lines[alpha], "principal.alpha")
    try:
        return ParabolicSystem(n=n, b=b, m=m, principal=principal, lower_order=lower)
    except SymbolError as exc:
        raise SpecError(str(exc), _line(top["principal"][1]), "principal") from None


def load_system(path) -> ParabolicSystem:
    path = Path(path)
    return parse_system(path.read_text())


def dump_system(system: ParabolicSystem, name: str | None = None) -> str:
    """YAML text that :func:`parse_system` maps back to ``system``."""
    doc = {}
    if name:
        doc["name"] = name
    doc.update(n=system.n, b=system.b, m=system.m)
    doc["principal"] = [{"alpha": list(a), "matrix": np.asarray(A).tolist()}
                        for a, A in sorted(system.principal.items(), reverse=True)]
    if system.lower_order:
        doc["lower_order"] = [{"alpha": list(a), "matrix": np.asarray(A).tolist()}
                              for a, A in sorted(system.lower_order.items(), reverse=True)]
    return yaml.safe_dump(doc, sort_keys=False, default_flow_style=None)
