"""GridFunction import/export.

Binary layout (all little-endian)::

    bytes 0..7    magic b"PSGRID01"
    bytes 8..11   uint32 header length H
    next H bytes  UTF-8 JSON header: grid fields, "m", "layout", optional "meta"
    remainder     float64 values, C order over (t, x_1, ..., x_n, component)

The CSV form starts with ``# key: value`` lines (JSON-encoded values), then a
column header ``t,x1,..,xn,u0,..,u{m-1}`` and one row per grid node in the same
time-major order.
"""
from __future__ import annotations

import csv
import io
import json
import struct
from pathlib import Path

import numpy as np

from .field import GridFunction, GridSpec

MAGIC = b"PSGRID01"
LAYOUT = "t-major,x1..xn,component;float64-le"


class GridFormatError(ValueError):
    pass


def _header(u: GridFunction, meta: dict | None) -> dict:
    h = u.spec.to_header()
    h["m"] = u.m
    h["layout"] = LAYOUT
    if meta:
        h["meta"] = meta
    return h


def write_binary(u: GridFunction, path, meta: dict | None = None) -> None:
    head = json.dumps(_header(u, meta), sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(head)))
        fh.write(head)
        fh.write(np.ascontiguousarray(u.values, dtype="<f8").tobytes())


def read_binary(path) -> tuple[GridFunction, dict]:
    data = Path(path).read_bytes()
    if data[:8] != MAGIC:
        raise GridFormatError(f"{path}: not a grid file (bad magic)")
    (hlen,) = struct.unpack("<I", data[8:12])
    try:
        head = json.loads(data[12 : 12 + hlen].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise GridFormatError(f"{path}: corrupt header ({exc})") from exc
    spec = GridSpec.from_header(head)
    shape = spec.shape + (int(head["m"]),)
    payload = data[12 + hlen :]
    if len(payload) != 8 * int(np.prod(shape)):
        raise GridFormatError(f"{path}: expected {np.prod(shape)} values, found {len(payload) // 8}")
    vals = np.frombuffer(payload, dtype="<f8").reshape(shape)
    return GridFunction(spec, vals), head.get("meta", {})


def write_csv(u: GridFunction, path, meta: dict | None = None) -> None:
    head = _header(u, meta)
    spec = u.spec
    grids = np.meshgrid(spec.times, *spec.axes(), indexing="ij")
    cols = [g.ravel() for g in grids] + [u.values[..., k].ravel() for k in range(u.m)]
    buf = io.StringIO()
    for k in sorted(head):
        buf.write(f"# {k}: {json.dumps(head[k])}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t"] + [f"x{i + 1}" for i in range(spec.n)] + [f"u{k}" for k in range(u.m)])
    for row in zip(*cols):
        w.writerow([repr(float(v)) for v in row])
    Path(path).write_text(buf.getvalue())


def read_csv(path) -> tuple[GridFunction, dict]:
    head = {}
    body = []
    for line in Path(path).read_text().splitlines():
        if line.startswith("#"):
            key, _, val = line[1:].partition(":")
            head[key.strip()] = json.loads(val)
        elif line.strip():
            body.append(line)
    try:
        spec = GridSpec.from_header(head)
        m = int(head["m"])
    except KeyError as exc:
        raise GridFormatError(f"{path}: header missing {exc}") from exc
    rows = list(csv.reader(body))[1:]
    arr = np.array(rows, dtype=float)
    if arr.shape != (int(np.prod(spec.shape)), spec.n + 1 + m):
        raise GridFormatError(f"{path}: table shape {arr.shape} inconsistent with header")
    vals = arr[:, spec.n + 1 :].reshape(spec.shape + (m,))
    return GridFunction(spec, vals), head.get("meta", {})


def read_grid(path) -> tuple[GridFunction, dict]:
    path = Path(path)
    with open(path, "rb") as fh:
        magic = fh.read(8)
    return read_binary(path) if magic == MAGIC else read_csv(path)


def write_grid(u: GridFunction, path, meta: dict | None = None) -> None:
    if str(path).endswith(".csv"):
        write_csv(u, path, meta)
    else:
        write_binary(u, path, meta)
