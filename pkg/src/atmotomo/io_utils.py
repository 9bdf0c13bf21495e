"""File formats: binary field containers, CSV tables, PGM images, and run
manifests.

The binary container is a fixed little-endian layout with an 8-byte magic,
a kind byte, and per-block grid headers; layer stacks and data vectors
round-trip exactly (float64 payloads, uint8 masks). All writers go through
an atomic temp-file replace so partially written artifacts never appear
under the final name.
"""

from __future__ import annotations

import hashlib
import os
import struct
import tempfile
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np
from numpy.typing import NDArray

from .field import DataVector, Grid2D, LayerStack

MAGIC = b"ATMFLD01"
_KIND_STACK = 0
_KIND_DATA = 1

_HEAD = struct.Struct("<8sBI")          # magic, kind, block count
_GRID = struct.Struct("<IIddd")         # nx, ny, origin_x, origin_y, spacing
_WEIGHT = struct.Struct("<d")


def atomic_write_bytes(path: str, data: bytes) -> None:
    """Write bytes to ``path`` via a same-directory temp file + rename."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path: str, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


# ---------------------------------------------------------------------------
# binary field containers


def _pack_grid(grid: Grid2D) -> bytes:
    return _GRID.pack(grid.nx, grid.ny, grid.origin_x, grid.origin_y,
                      grid.spacing)


def _unpack_grid(buf: memoryview, off: int) -> tuple[Grid2D, int]:
    nx, ny, ox, oy, s = _GRID.unpack_from(buf, off)
    return Grid2D(ox, oy, s, int(nx), int(ny)), off + _GRID.size


def _take(buf: memoryview, off: int, dtype, count: int):
    arr = np.frombuffer(buf, dtype=dtype, count=count, offset=off)
    return arr, off + arr.nbytes


def save_stack(path: str, stack: LayerStack) -> None:
    """Serialize a layer stack (grids, weights, values, masks)."""
    parts = [_HEAD.pack(MAGIC, _KIND_STACK, stack.num_layers)]
    for grid, vals, mask, w in zip(stack.grids, stack.values, stack.masks,
                                   stack.weights):
        parts.append(_pack_grid(grid))
        parts.append(_WEIGHT.pack(float(w)))
        parts.append(np.ascontiguousarray(vals, dtype="<f8").tobytes())
        parts.append(np.ascontiguousarray(mask, dtype=np.uint8).tobytes())
    atomic_write_bytes(path, b"".join(parts))


def save_data(path: str, data: DataVector) -> None:
    """Serialize a data vector (pupil grid, mask, one plane per direction)."""
    parts = [_HEAD.pack(MAGIC, _KIND_DATA, data.num_directions),
             _pack_grid(data.grid),
             np.ascontiguousarray(data.mask, dtype=np.uint8).tobytes(),
             np.ascontiguousarray(data.values, dtype="<f8").tobytes()]
    atomic_write_bytes(path, b"".join(parts))


def _read_header(buf: memoryview, expect_kind: int, path: str) -> int:
    if len(buf) < _HEAD.size:
        raise ValueError(f"{path}: truncated field container")
    magic, kind, count = _HEAD.unpack_from(buf, 0)
    if magic != MAGIC:
        raise ValueError(f"{path}: not a field container (bad magic)")
    if kind != expect_kind:
        raise ValueError(f"{path}: wrong container kind {kind}")
    return int(count)


def load_stack(path: str) -> LayerStack:
    buf = memoryview(open(path, "rb").read())
    L = _read_header(buf, _KIND_STACK, path)
    off = _HEAD.size
    grids, values, masks, weights = [], [], [], []
    for _ in range(L):
        grid, off = _unpack_grid(buf, off)
        (w,) = _WEIGHT.unpack_from(buf, off)
        off += _WEIGHT.size
        vals, off = _take(buf, off, "<f8", grid.size)
        mask, off = _take(buf, off, np.uint8, grid.size)
        grids.append(grid)
        values.append(vals.reshape(grid.shape).copy())
        masks.append(mask.reshape(grid.shape).astype(bool))
        weights.append(w)
    if off != len(buf):
        raise ValueError(f"{path}: trailing bytes in field container")
    return LayerStack(tuple(grids), values, tuple(masks), np.array(weights))


def load_data(path: str) -> DataVector:
    buf = memoryview(open(path, "rb").read())
    G = _read_header(buf, _KIND_DATA, path)
    off = _HEAD.size
    grid, off = _unpack_grid(buf, off)
    mask, off = _take(buf, off, np.uint8, grid.size)
    vals, off = _take(buf, off, "<f8", G * grid.size)
    if off != len(buf):
        raise ValueError(f"{path}: trailing bytes in field container")
    return DataVector(grid, vals.reshape((G,) + grid.shape).copy(),
                      mask.reshape(grid.shape).astype(bool))


# ---------------------------------------------------------------------------
# CSV and PGM


def write_csv(path: str, header: Sequence[str],
              rows: Iterable[Sequence]) -> None:
    """Plain CSV with a header row; floats are written with repr precision."""
    def fmt(v):
        if isinstance(v, float):
            return format(v, ".17g")
        return str(v)

    lines = [",".join(header)]
    lines += [",".join(fmt(v) for v in row) for row in rows]
    atomic_write_text(path, "\n".join(lines) + "\n")


def field_csv(path: str, grid: Grid2D, values: NDArray,
              mask: Optional[NDArray] = None) -> None:
    """Node table of a scalar field: x_m, y_m, value, in_mask."""
    pts = grid.node_points()
    flat = np.asarray(values).ravel()
    inmask = (np.ones(grid.size, dtype=bool) if mask is None
              else np.asarray(mask, dtype=bool).ravel())
    rows = ((pts[i, 0], pts[i, 1], float(flat[i]), int(inmask[i]))
            for i in range(grid.size))
    write_csv(path, ("x_m", "y_m", "value", "in_mask"), rows)


def write_pgm(path: str, values: NDArray, vmin: Optional[float] = None,
              vmax: Optional[float] = None) -> None:
    """8-bit binary PGM of a (ny, nx) array, y axis pointing up.

    Values are mapped linearly from [vmin, vmax] (data range by default)
    to 0..255; a constant array maps to 0.
    """
    arr = np.asarray(values, dtype=float)
    if arr.ndim != 2:
        raise ValueError("PGM export needs a 2-d array")
    lo = float(np.min(arr)) if vmin is None else float(vmin)
    hi = float(np.max(arr)) if vmax is None else float(vmax)
    if hi > lo:
        scaled = (arr - lo) / (hi - lo)
    else:
        scaled = np.zeros_like(arr)
    pix = np.clip(np.round(scaled * 255.0), 0, 255).astype(np.uint8)
    pix = pix[::-1, :]  # row 0 of the image is the top (largest y)
    header = f"P5\n{arr.shape[1]} {arr.shape[0]}\n255\n".encode("ascii")
    atomic_write_bytes(path, header + pix.tobytes())


# ---------------------------------------------------------------------------
# manifests


def config_digest(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def write_manifest(path: str, entries: Mapping[str, object]) -> None:
    """key=value manifest; deliberately carries no timestamps so reruns of
    the same config and seed produce identical bytes."""
    lines = [f"{k}={v}" for k, v in entries.items()]
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_manifest(path: str) -> dict[str, str]:
    out: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            key, _, value = line.partition("=")
            out[key] = value
    return out
