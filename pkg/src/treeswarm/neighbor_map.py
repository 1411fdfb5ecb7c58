"""Dense depth-``d_map`` grid that restores spatial adjacency for sensing.

Each cell links either to the leaf covering it (a leaf at exactly
``d_map``, or a larger shallower one) or to the internal node occupying it,
whose subtree is walked on demand during a query.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum
from functools import cached_property

import numpy as np

from . import _kernels
from .tree_map import EmbeddedMap, paint


class CellKind(IntEnum):
    LEAF_OVERLAP = 1  # leaf exactly at d_map
    PARENT_OVERLAP = 2  # internal node at d_map, expanded on demand
    INSIDE_LARGER_LEAF = 3  # leaf shallower than d_map


@dataclass(frozen=True, eq=False)
class NeighborMap:
    emap: EmbeddedMap
    d_map: int
    kind: np.ndarray  # int8 grid indexed [x, y(, z)]
    link: np.ndarray  # int32 grid of node ids

    @property
    def n_cells(self) -> int:
        return 2**self.d_map

    @property
    def cell_size(self) -> float:
        return self.emap.root_size / self.n_cells

    @cached_property
    def _flat_link(self) -> np.ndarray:
        return np.ascontiguousarray(self.link, dtype=np.int64).ravel()


def default_d_map(d_max: int) -> int:
    return max(d_max - 2, 0)


def build(emap: EmbeddedMap, d_map: int | None = None) -> NeighborMap:
    tree = emap.tree
    if d_map is None:
        d_map = default_d_map(tree.d_max)
    if not 0 <= d_map <= tree.d_max:
        raise ValueError(f"d_map must lie in [0, {tree.d_max}], got {d_map}")

    link = paint(tree, np.arange(tree.n_nodes), d_map)
    kind = np.zeros(link.shape, dtype=np.int8)
    covered = link >= 0
    leaf_depth = tree.depth[np.maximum(link, 0)]
    kind[covered & (leaf_depth == d_map)] = CellKind.LEAF_OVERLAP
    kind[covered & (leaf_depth < d_map)] = CellKind.INSIDE_LARGER_LEAF

    internal = np.flatnonzero((tree.color < 0) & (tree.depth == d_map))
    if internal.size:
        where = tuple(tree.coords[internal].T)
        link[where] = internal
        kind[where] = CellKind.PARENT_OVERLAP
    assert np.all(link >= 0)
    return NeighborMap(emap, d_map, kind, link.astype(np.int32))


def subtree_leaves(emap: EmbeddedMap, nodes: np.ndarray) -> np.ndarray:
    """All leaves under ``nodes`` (leaves map to themselves)."""
    tree = emap.tree
    frontier = np.asarray(nodes, dtype=np.int64)
    out = []
    while frontier.size:
        leaf = tree.color[frontier] >= 0
        out.append(frontier[leaf])
        frontier = tree.children[frontier[~leaf]].ravel().astype(np.int64)
    return np.concatenate(out) if out else np.empty(0, dtype=np.int64)


def box_ball_distance(lo: np.ndarray, hi: np.ndarray, p: np.ndarray) -> np.ndarray:
    """Euclidean distance from ``p`` to each axis-aligned box (0 if inside)."""
    gap = np.maximum(lo - p, 0.0) + np.maximum(p - hi, 0.0)
    return np.sqrt(np.sum(gap * gap, axis=-1))


def sense_black_leaves(nmap: NeighborMap, p, r_sense: float) -> np.ndarray:
    """Sorted ids of Black leaves whose boxes intersect the closed ball B(p, r_sense).

    Only grid cells touching the ball are visited; parent-overlap cells are
    expanded through the tree without storing anything.
    """
    emap = nmap.emap
    tree = emap.tree
    return _kernels.sense(
        nmap._flat_link,
        nmap.n_cells,
        nmap.cell_size,
        emap.origin,
        np.asarray(p, dtype=float),
        float(r_sense),
        tree.children,
        tree.color,
        emap.centers,
        emap.sizes,
    )
