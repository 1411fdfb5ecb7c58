"""Reading and writing binary shapes: PGM (P2/P5) for 2D, VOX3 text for 3D.

VOX3 layout::

    VOX3 nx ny nz
    <nx*ny*nz whitespace-separated 0/1 values, x fastest, then y, then z>

``1`` is Black (occupied). In PGM files dark pixels are Black.
"""
from __future__ import annotations

import os
import re
import tempfile
from pathlib import Path

import numpy as np

from .tree_map import BinaryImage

MAX_SIDE = 1 << 14


class ShapeFormatError(ValueError):
    pass


def atomic_write(path, data: bytes | str) -> None:
    """Write to a sibling temp file, then rename over ``path``."""
    path = Path(path)
    if isinstance(data, str):
        data = data.encode()
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _pgm_tokens(raw: bytes, count: int) -> tuple[list[bytes], int]:
    """First ``count`` header tokens (comments skipped) and the offset after them."""
    tokens = []
    pos = 0
    pat = re.compile(rb"\s*(?:#[^\n]*\n\s*)*(\S+)")
    for _ in range(count):
        m = pat.match(raw, pos)
        if m is None:
            raise ShapeFormatError("truncated PGM header")
        tokens.append(m.group(1))
        pos = m.end()
    return tokens, pos


def read_pgm(raw: bytes) -> tuple[np.ndarray, int]:
    """Parse P2/P5 into an int array indexed [row, col] plus the max value."""
    tokens, pos = _pgm_tokens(raw, 4)
    magic = tokens[0]
    if magic not in (b"P2", b"P5"):
        raise ShapeFormatError(f"not a PGM file (magic {magic!r})")
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError as exc:
        raise ShapeFormatError(f"malformed PGM header: {exc}") from None
    if not (0 < width <= MAX_SIDE and 0 < height <= MAX_SIDE):
        raise ShapeFormatError(f"PGM size {width}x{height} out of range")
    if not 0 < maxval < 65536:
        raise ShapeFormatError(f"PGM maxval {maxval} out of range")
    n = width * height
    if magic == b"P2":
        values = raw[pos:].split()
        if len(values) < n:
            raise ShapeFormatError(f"expected {n} pixels, found {len(values)}")
        data = np.array([int(v) for v in values[:n]], dtype=np.int64)
    else:
        pos += 1  # single whitespace byte after maxval
        dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
        body = raw[pos : pos + n * dtype.itemsize]
        if len(body) < n * dtype.itemsize:
            raise ShapeFormatError("truncated PGM raster")
        data = np.frombuffer(body, dtype=dtype).astype(np.int64)
    if data.min() < 0 or data.max() > maxval:
        raise ShapeFormatError("PGM pixel exceeds maxval")
    return data.reshape(height, width), maxval


def write_pgm(image: BinaryImage, path) -> None:
    """Binary P5 with Black as 0 and White as 255."""
    if image.dim != 2:
        raise ValueError("PGM holds 2D images only")
    rows = np.where(image.grid.T == 1, 0, 255).astype(np.uint8)
    header = f"P5\n{image.side} {image.side}\n255\n".encode()
    atomic_write(path, header + rows.tobytes())


def read_vox(text: str) -> np.ndarray:
    """Parse VOX3 text into a 0/1 array indexed [x, y, z]."""
    parts = text.split()
    if len(parts) < 4 or parts[0] != "VOX3":
        raise ShapeFormatError("missing 'VOX3 nx ny nz' header")
    try:
        nx, ny, nz = (int(v) for v in parts[1:4])
    except ValueError:
        raise ShapeFormatError("malformed VOX3 dimensions") from None
    if not all(0 < v <= MAX_SIDE for v in (nx, ny, nz)) or nx * ny * nz > 1 << 30:
        raise ShapeFormatError(f"VOX3 size {nx}x{ny}x{nz} out of range")
    body = parts[4:]
    if len(body) != nx * ny * nz:
        raise ShapeFormatError(f"expected {nx * ny * nz} voxels, found {len(body)}")
    bad = set(body) - {"0", "1"}
    if bad:
        raise ShapeFormatError(f"non-binary voxel values: {sorted(bad)[:5]}")
    flat = np.array(body) == "1"
    return flat.reshape(nz, ny, nx).T.astype(np.uint8)


def write_vox(image: BinaryImage, path) -> None:
    if image.dim != 3:
        raise ValueError("VOX3 holds 3D images only")
    s = image.side
    lines = [f"VOX3 {s} {s} {s}"]
    rows = image.voxels.reshape(-1, s)
    lines += [" ".join("1" if v else "0" for v in row) for row in rows]
    atomic_write(path, "\n".join(lines) + "\n")


def next_pow2(n: int) -> int:
    return max(2, 1 << (int(n) - 1).bit_length())


def pad_to_pow2(grid: np.ndarray) -> BinaryImage:
    """Center ``grid`` (indexed [x, y(, z)]) in a White square/cube of power-of-two side."""
    grid = np.asarray(grid, dtype=np.uint8)
    side = next_pow2(max(grid.shape))
    out = np.zeros((side,) * grid.ndim, dtype=np.uint8)
    where = tuple(slice((side - n) // 2, (side - n) // 2 + n) for n in grid.shape)
    out[where] = grid
    return BinaryImage.from_grid(out)


def load_shape(path, dim: int | None = None) -> BinaryImage:
    """Load a PGM (2D) or VOX3 (3D) shape file, padded to a power-of-two side."""
    path = Path(path)
    raw = path.read_bytes()
    if raw.startswith(b"VOX3"):
        grid = read_vox(raw.decode("ascii", errors="replace"))
    elif raw[:2] in (b"P2", b"P5"):
        rows, maxval = read_pgm(raw)
        # rows are [y, x]; darker than half the max value is Black
        grid = (rows.T < maxval / 2).astype(np.uint8)
    else:
        raise ShapeFormatError(f"{path}: unrecognized shape format")
    if dim is not None and grid.ndim != dim:
        raise ShapeFormatError(f"{path}: expected a {dim}D shape, got {grid.ndim}D")
    return pad_to_pow2(grid)
