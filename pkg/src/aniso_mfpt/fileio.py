"""Readers and writers for the on-disk formats: segment CSV, PGM rasters and field CSV."""

from __future__ import annotations

import csv
import io
import math
import re
from typing import Iterable, Sequence

import numpy as np

from .env import GridSpec, SegmentSet, field_to_raster


def fmt(value: float) -> str:
    """Shortest round-trip text for a float; infinities as ``inf``/``-inf``."""
    v = float(value)
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return repr(v)


# --------------------------------------------------------------------------
# CSV
# --------------------------------------------------------------------------

def csv_text(header: Sequence[str], rows: Iterable[Sequence], comment: str | None = None) -> str:
    buf = io.StringIO()
    if comment:
        buf.write(f"# {comment}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt(v) if isinstance(v, (float, np.floating)) else v for v in row])
    return buf.getvalue()


def _grid_rows(grid: GridSpec, *columns: np.ndarray):
    # row-major with x1 as the outer index
    x1, x2 = grid.x1, grid.x2
    cols = [np.asarray(c, dtype=float) for c in columns]
    for j in range(grid.N1):
        for k in range(grid.N2):
            yield (float(x1[j]), float(x2[k]), *(float(c[j, k]) for c in cols))


def scalar_field_csv(grid: GridSpec, values: np.ndarray, name: str = "value", comment: str | None = None) -> str:
    return csv_text(["x1", "x2", name], _grid_rows(grid, values), comment)


def direction_field_csv(grid: GridSpec, gamma: np.ndarray, comment: str | None = None) -> str:
    g = np.asarray(gamma, dtype=float)
    return csv_text(["x1", "x2", "g1", "g2"], _grid_rows(grid, g[..., 0], g[..., 1]), comment)


def read_scalar_field_csv(text: str) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Columns (x1, x2, value) of a scalar field CSV, comment lines skipped."""
    lines = [ln for ln in text.splitlines() if ln and not ln.startswith("#")]
    rows = list(csv.reader(lines[1:]))
    arr = np.array([[float(v) for v in r[:3]] for r in rows]) if rows else np.zeros((0, 3))
    return arr[:, 0], arr[:, 1], arr[:, 2]


# --------------------------------------------------------------------------
# Segments
# --------------------------------------------------------------------------

def parse_segments(text: str) -> SegmentSet:
    """Segments from CSV text ``x1a,x2a,x1b,x2b``; a header line and ``#`` comments are allowed."""
    segs = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        s = line.strip()
        if not s or s.startswith("#"):
            continue
        parts = [p.strip() for p in s.split(",")]
        try:
            vals = [float(p) for p in parts]
        except ValueError:
            if not segs and lineno == _first_content_line(text):
                continue  # header
            raise ValueError(f"segment line {lineno}: expected four numbers, got {s!r}") from None
        if len(vals) != 4:
            raise ValueError(f"segment line {lineno}: expected four numbers, got {len(vals)}")
        segs.append(((vals[0], vals[1]), (vals[2], vals[3])))
    return SegmentSet(segs)


def _first_content_line(text: str) -> int:
    for i, line in enumerate(text.splitlines(), start=1):
        s = line.strip()
        if s and not s.startswith("#"):
            return i
    return 0


def segments_csv(segs: SegmentSet) -> str:
    rows = [(float(a[0]), float(a[1]), float(b[0]), float(b[1])) for a, b in segs.endpoints]
    return csv_text(["x1a", "x2a", "x1b", "x2b"], rows)


# --------------------------------------------------------------------------
# PGM (binary P5)
# --------------------------------------------------------------------------

_PGM_TOKEN = re.compile(rb"(#[^\n]*\n)|(\s+)|(\S+)")


def parse_pgm(data: bytes) -> np.ndarray:
    """Image rows (top row first) of a binary P5 PGM; uint8 or uint16 by maxval."""
    tokens: list[bytes] = []
    pos = 0
    while len(tokens) < 4:
        m = _PGM_TOKEN.match(data, pos)
        if m is None:
            raise ValueError("truncated PGM header")
        pos = m.end()
        if m.group(3):
            tokens.append(m.group(3))
    if tokens[0] != b"P5":
        raise ValueError(f"not a binary PGM (magic {tokens[0]!r}, expected b'P5')")
    try:
        width, height, maxval = (int(t) for t in tokens[1:4])
    except ValueError:
        raise ValueError("malformed PGM header") from None
    if width <= 0 or height <= 0 or not 0 < maxval < 65536:
        raise ValueError(f"invalid PGM dimensions or maxval: {width}x{height}, {maxval}")
    # exactly one whitespace byte separates the header from the pixels
    if pos >= len(data) or not data[pos:pos + 1].isspace():
        raise ValueError("truncated PGM header")
    start = pos + 1
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    need = width * height * dtype.itemsize
    body = data[start:start + need]
    if len(body) != need:
        raise ValueError(f"PGM pixel data truncated: need {need} bytes, have {len(body)}")
    return np.frombuffer(body, dtype=dtype).reshape(height, width).astype(dtype.newbyteorder("="))


def pgm_bytes(image: np.ndarray, maxval: int | None = None) -> bytes:
    img = np.asarray(image)
    if img.ndim != 2:
        raise ValueError("PGM images are two-dimensional")
    if maxval is None:
        maxval = 255 if img.dtype == np.uint8 else 65535
    dtype = ">u2" if maxval > 255 else "u1"
    header = f"P5\n{img.shape[1]} {img.shape[0]}\n{maxval}\n".encode()
    return header + np.ascontiguousarray(img.astype(dtype)).tobytes()


def heatmap(values: np.ndarray) -> tuple[bytes, str]:
    """16-bit PGM heatmap of a grid field and the sidecar text recording its value range.

    Values map linearly from [min, max] to [0, 65535]; a constant field maps to 0.
    Non-finite values are excluded from the range and drawn as 65535.
    """
    v = np.asarray(values, dtype=float)
    finite = np.isfinite(v)
    lo = float(v[finite].min()) if finite.any() else 0.0
    hi = float(v[finite].max()) if finite.any() else 0.0
    span = hi - lo
    scaled = np.zeros_like(v) if span == 0 else (v - lo) / span * 65535.0
    scaled = np.where(finite, scaled, 65535.0)
    img = field_to_raster(np.rint(np.clip(scaled, 0, 65535)).astype(np.uint16))
    sidecar = f"min {fmt(lo)}\nmax {fmt(hi)}\n"
    return pgm_bytes(img, 65535), sidecar
