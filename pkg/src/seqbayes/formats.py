"""Language-neutral file formats: 16-bit PGM, raw float64 + JSON header, CSV.

Raw files carry the exact float64 bytes (little-endian) with a ``.json``
sidecar recording shape, memory order, and dtype, so any language can read
them back losslessly.  PGM images are display companions: values are
affinely mapped onto the full 16-bit range (the scale is recorded in the
sidecar of the matching raw file, which remains the source of truth).
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

__all__ = [
    "write_pgm16",
    "write_raw",
    "read_raw",
    "write_csv",
    "format_sig",
]


def write_pgm16(path, grid: np.ndarray) -> None:
    """Write a 2-D array as a 16-bit binary PGM (display scaling)."""
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 2:
        raise ValueError("PGM export needs a 2-D array")
    lo, hi = float(grid.min()), float(grid.max())
    if hi > lo:
        scaled = np.round((grid - lo) / (hi - lo) * 65535.0)
    else:
        scaled = np.zeros_like(grid)
    data = scaled.astype(">u2")
    height, width = grid.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{width} {height}\n65535\n".encode("ascii"))
        fh.write(data.tobytes())


def read_pgm16(path) -> np.ndarray:
    """Read a binary 16-bit PGM written by :func:`write_pgm16`."""
    with open(path, "rb") as fh:
        magic = fh.readline().strip()
        if magic != b"P5":
            raise ValueError(f"not a binary PGM file: {path}")
        width, height = (int(t) for t in fh.readline().split())
        maxval = int(fh.readline())
        if maxval != 65535:
            raise ValueError("expected a 16-bit PGM")
        data = np.frombuffer(fh.read(width * height * 2), dtype=">u2")
    return data.reshape(height, width).astype(float)


def write_raw(path, array: np.ndarray, order: str = "F", extra: dict | None = None) -> None:
    """Write an array as little-endian float64 bytes plus a JSON sidecar.

    The bytes are laid out in the given memory ``order``; the sidecar at
    ``<path>.json`` records shape, order, dtype, and any ``extra`` fields.
    """
    array = np.asarray(array, dtype="<f8")
    header = {"shape": list(array.shape), "order": order, "dtype": "<f8"}
    if extra:
        header.update(extra)
    with open(path, "wb") as fh:
        fh.write(array.ravel(order=order).tobytes())
    Path(str(path) + ".json").write_text(json.dumps(header, indent=2, sort_keys=True))


def read_raw(path) -> tuple[np.ndarray, dict]:
    """Read back a raw float64 file and its JSON header."""
    header = json.loads(Path(str(path) + ".json").read_text())
    flat = np.fromfile(path, dtype=header["dtype"])
    array = flat.reshape(header["shape"], order=header.get("order", "C"))
    return array, header


def format_sig(value) -> str:
    """Fixed 12-significant-digit formatting for diffable metric tables."""
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if value is None:
        return ""
    return format(float(value), ".12g")


def write_csv(path, columns: list, rows: list) -> None:
    """Write rows of values as CSV with 12-significant-digit numbers."""
    lines = [",".join(columns)]
    for row in rows:
        lines.append(",".join(v if isinstance(v, str) else format_sig(v) for v in row))
    Path(path).write_text("\n".join(lines) + "\n")
