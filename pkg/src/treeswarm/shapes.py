"""Procedural target shapes, rasterized at any power-of-two resolution.

Shapes are defined on the unit square/cube by sampling pixel centers, so the
same shape can be produced at every tree depth. 2D images use image
convention (y grows downward) so letters read upright in a PGM viewer.
"""
from __future__ import annotations

import numpy as np

from .tree_map import BinaryImage


def _grid(side: int, dim: int):
    u = (np.arange(side) + 0.5) / side
    return np.meshgrid(*([u] * dim), indexing="ij")


def _rect(x, y, x0, x1, y0, y1):
    return (x >= x0) & (x <= x1) & (y >= y0) & (y <= y1)


def _stroke(x, y, a, b, width):
    """Thick segment from point a to point b."""
    ax, ay = a
    bx, by = b
    dx, dy = bx - ax, by - ay
    t = np.clip(((x - ax) * dx + (y - ay) * dy) / (dx * dx + dy * dy), 0, 1)
    return (x - ax - t * dx) ** 2 + (y - ay - t * dy) ** 2 <= (width / 2) ** 2


def _annulus(x, y, cx, cy, r0, r1):
    r2 = (x - cx) ** 2 + (y - cy) ** 2
    return (r2 >= r0 * r0) & (r2 <= r1 * r1)


def letter_l(x, y):
    # edges kept off dyadic fractions so coarse grids gain nothing by luck
    return _rect(x, y, 0.213, 0.417, 0.093, 0.907) | _rect(x, y, 0.213, 0.78, 0.71, 0.907)


def letter_a(x, y):
    legs = _stroke(x, y, (0.5, 0.14), (0.2, 0.88), 0.2) | _stroke(x, y, (0.5, 0.14), (0.8, 0.88), 0.2)
    bar = _rect(x, y, 0.3, 0.7, 0.56, 0.7)
    return legs | bar


def letter_r(x, y):
    stem = _rect(x, y, 0.2, 0.4, 0.1, 0.9)
    bowl = _annulus(x, y, 0.52, 0.33, 0.07, 0.23) & (x >= 0.52)
    bars = _rect(x, y, 0.2, 0.52, 0.1, 0.26) | _rect(x, y, 0.2, 0.52, 0.4, 0.56)
    leg = _stroke(x, y, (0.5, 0.5), (0.76, 0.86), 0.2)
    return stem | bowl | bars | leg


def ring(x, y):
    return _annulus(x, y, 0.5, 0.5, 0.22, 0.42)


def disk(x, y):
    return (x - 0.5) ** 2 + (y - 0.5) ** 2 <= 0.42**2


def hollow_pyramid(x, y, z, wall: float = 0.2):
    """Square pyramid shell with a floor; z points up.

    ``wall`` is the horizontal wall thickness in unit-cube lengths. At the
    default, even a 50-robot embedding gives walls wider than one robot's
    avoidance diameter.
    """
    base, apex, half = 0.1, 0.9, 0.4
    h = half * (apex - z) / (apex - base)
    r = np.maximum(np.abs(x - 0.5), np.abs(y - 0.5))
    solid = (r <= h) & (z >= base) & (z <= apex)
    cavity = (r <= h - wall) & (z >= base + wall)
    return solid & ~cavity


def helix(x, y, z, turns: float = 1.5, radius: float = 0.28, tube: float = 0.09):
    t = np.linspace(0.0, 1.0, 512)
    curve = np.stack(
        [0.5 + radius * np.cos(2 * np.pi * turns * t), 0.5 + radius * np.sin(2 * np.pi * turns * t), 0.12 + 0.76 * t],
        axis=1,
    )
    from scipy.spatial import cKDTree

    pts = np.stack([x.ravel(), y.ravel(), z.ravel()], axis=1)
    dist, _ = cKDTree(curve).query(pts, distance_upper_bound=tube)
    return (dist <= tube).reshape(x.shape)


SHAPES_2D = {"R": letter_r, "A": letter_a, "L": letter_l, "ring": ring, "disk": disk}
SHAPES_3D = {"pyramid": hollow_pyramid, "helix": helix}
LETTERS = ("R", "A", "L")


def make_shape(name: str, side: int) -> BinaryImage:
    """Rasterize a named stand-in shape at ``side`` pixels per axis."""
    if name in SHAPES_2D:
        mask = SHAPES_2D[name](*_grid(side, 2))
    elif name in SHAPES_3D:
        mask = SHAPES_3D[name](*_grid(side, 3))
    else:
        raise KeyError(f"unknown shape {name!r}; choose from {sorted(SHAPES_2D) + sorted(SHAPES_3D)}")
    return BinaryImage.from_grid(mask.astype(np.uint8))


def shape_dim(name: str) -> int:
    if name in SHAPES_2D:
        return 2
    if name in SHAPES_3D:
        return 3
    raise KeyError(f"unknown shape {name!r}")
