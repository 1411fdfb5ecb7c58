"""Per-robot velocity command: forming toward the shape plus pairwise avoidance.

Everything here is a pure function of one robot's position, the positions of
robots within its sensing radius, and read-only map queries.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .neighbor_map import NeighborMap, sense_black_leaves
from .tree_map import BLACK, EmbeddedMap, locate_leaf

EPS = 1e-9


@dataclass(frozen=True)
class ControlParams:
    kappa1: float = 20.0
    kappa2: float = 25.0
    r_avoid: float = 0.6
    r_sense: float = 1.5
    alpha: tuple[float, ...] = (0.0, 0.0)
    v_max: float = 10.0

    def __post_init__(self):
        for name in ("kappa1", "kappa2", "r_avoid", "r_sense", "v_max"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        object.__setattr__(self, "alpha", tuple(float(a) for a in self.alpha))
        if any(a < 0 for a in self.alpha):
            raise ValueError("alpha components must be >= 0")

    @property
    def dim(self) -> int:
        return len(self.alpha)

    @property
    def alpha_z(self) -> float:
        return self.alpha[-1] if self.dim == 3 else 0.0

    @classmethod
    def defaults(cls, dim: int) -> "ControlParams":
        """Gains and radii used for the 2D and 3D simulation studies."""
        if dim == 2:
            return cls()
        if dim == 3:
            return cls(r_avoid=0.5, r_sense=0.8, alpha=(0.0, 0.0, 0.5))
        raise ValueError(f"dimension must be 2 or 3, got {dim}")


@dataclass(frozen=True, eq=False)
class Candidates:
    """A batch of candidate cells: centers, per-axis sizes, optional node ids."""

    centers: np.ndarray
    sizes: np.ndarray
    ids: np.ndarray = field(default=None)

    def __len__(self) -> int:
        return len(self.centers)

    @property
    def measure(self) -> np.ndarray:
        return np.prod(self.sizes, axis=1)

    @classmethod
    def from_nodes(cls, emap: EmbeddedMap, ids) -> "Candidates":
        ids = np.asarray(ids, dtype=np.int64)
        return cls(emap.centers[ids], emap.sizes[ids], ids)

    @classmethod
    def empty(cls, dim: int) -> "Candidates":
        z = np.empty((0, dim))
        return cls(z, z.copy(), np.empty(0, dtype=np.int64))


def phi(x):
    """Raised-cosine falloff: 1 at x <= 0, 0 at x >= 1."""
    x = np.asarray(x, dtype=float)
    out = np.where(x <= 0, 1.0, np.where(x >= 1, 0.0, 0.5 * (1 + np.cos(np.pi * np.clip(x, 0, 1)))))
    return float(out) if out.ndim == 0 else out


def mu(s):
    """Repulsion profile 1/s - 1 inside the contact range, 0 beyond it."""
    s = np.maximum(np.asarray(s, dtype=float), EPS)
    out = np.where(s <= 1, 1.0 / s - 1.0, 0.0)
    return float(out) if out.ndim == 0 else out


def eta(p_i, sensed: Candidates) -> float:
    """Scaled inf-norm distance to the nearest sensed Black leaf.

    Values <= 1 mean ``p_i`` lies in that leaf's closed box; ``inf`` when
    nothing was sensed.
    """
    if len(sensed) == 0:
        return math.inf
    rel = 2.0 * (sensed.centers - np.asarray(p_i, dtype=float)) / sensed.sizes
    return float(np.min(np.max(np.abs(rel), axis=1)))


def tree_search_candidate(emap: EmbeddedMap, p_i) -> Candidates:
    """One Black leaf found by descending the tree.

    Inside the map the descent starts at the parent of the robot's leaf and
    follows the most attractive child. Outside it starts at the root and
    follows the nearest child with any Black content. Ties go to the nearer
    center, then to the lower child index.
    """
    if emap.beta[0] <= 0:
        raise ValueError("map has no black leaves")
    p = np.asarray(p_i, dtype=float)
    tree = emap.tree
    leaf = locate_leaf(emap, p)
    if leaf is None:
        node = _kernels.tree_search(tree.children, tree.color, emap.beta, emap.centers, 0, False, p)
    else:
        start = int(tree.parent[leaf])
        node = _kernels.tree_search(tree.children, tree.color, emap.beta, emap.centers, start, True, p)
    assert tree.color[node] == BLACK
    return Candidates.from_nodes(emap, [node])


def virtual_candidates(
    emap: EmbeddedMap,
    p_i,
    sensed,
    neighbors,
    params: ControlParams,
) -> Candidates:
    """Free Black cells of the finest grid within ``r_sense`` of the robot.

    A cell is Black if its center lies in one of the ``sensed`` leaves and
    free unless a neighbor sits closer than ``r_avoid / 2`` to that center.
    Nothing is stored on the map.
    """
    tree = emap.tree
    dim = tree.dim
    p = np.asarray(p_i, dtype=float)
    sensed = np.asarray(sensed, dtype=np.int64)
    if sensed.size == 0:
        return Candidates.empty(dim)
    c = emap.c_pixel
    n = 2**tree.d_max
    reach = math.ceil(params.r_sense / c)
    lo, shape = [], []
    for x, o in zip(p.tolist(), emap._origin_list):
        q = math.floor((x - o) / c)
        a, b = max(q - reach, 0), min(q + reach + 1, n)
        if b <= a:
            return Candidates.empty(dim)
        lo.append(a)
        shape.append(b - a)

    nb = np.asarray(neighbors, dtype=float).reshape(-1, dim)
    centers = _kernels.virtual_centers(
        emap.origin,
        c,
        np.array(lo, dtype=np.int64),
        np.array(shape, dtype=np.int64),
        p,
        float(params.r_sense),
        tree.coords,
        tree.depth,
        tree.d_max,
        np.unique(sensed),
        nb,
        params.r_avoid / 2,
    )
    return Candidates(centers, np.full_like(centers, c))


def _norms(x: np.ndarray) -> np.ndarray:
    return np.sqrt(np.einsum("ij,ij->i", x, x))


def _weighted_pull(p: np.ndarray, cand: Candidates, weights: np.ndarray, kappa1: float) -> np.ndarray:
    total = float(np.sum(weights))
    if len(cand) == 0 or total <= EPS:
        return np.zeros_like(p)
    return kappa1 * (weights @ (cand.centers - p)) / total


def _forming(emap, nmap, p, neighbors, params) -> tuple[np.ndarray, float]:
    if not emap.contains(p):
        cand = tree_search_candidate(emap, p)
        w = cand.measure / np.maximum(_norms(cand.centers - p), EPS)
        return _weighted_pull(p, cand, w, params.kappa1), math.inf

    sensed_ids = sense_black_leaves(nmap, p, params.r_sense)
    e = _kernels.eta(emap.centers, emap.sizes, sensed_ids, p)
    if e > 1:
        tree_ids = tree_search_candidate(emap, p).ids
        cand = Candidates.from_nodes(emap, np.union1d(tree_ids, sensed_ids))
        w = cand.measure / np.maximum(_norms(cand.centers - p), EPS)
        return _weighted_pull(p, cand, w, params.kappa1), e
    # fused equivalent of virtual_candidates + phi weights + _weighted_pull
    tree = emap.tree
    nb = np.asarray(neighbors, dtype=float).reshape(-1, tree.dim)
    v = _kernels.virtual_pull(
        emap.origin, emap.c_pixel, 2**tree.d_max, p, float(params.r_sense), tree.coords, tree.depth,
        tree.d_max, sensed_ids, nb, params.r_avoid / 2, params.kappa1, EPS,
    )
    return v, e


def forming_velocity(emap: EmbeddedMap, nmap: NeighborMap, p_i, neighbors, params: ControlParams) -> np.ndarray:
    return _forming(emap, nmap, np.asarray(p_i, dtype=float), neighbors, params)[0]


def _pair_direction(a: int, b: int, dim: int) -> np.ndarray:
    """Unit vector fixed by the ordered id pair; robot ``min(a, b)`` gets its negative."""
    lo, hi = (a, b) if a < b else (b, a)
    u = np.random.default_rng([lo & 0xFFFFFFFF, hi & 0xFFFFFFFF]).normal(size=dim)
    u /= np.linalg.norm(u)
    return -u if a < b else u


def avoiding_velocity(p_i, neighbors, params: ControlParams, self_id: int = -1, neighbor_ids=None) -> np.ndarray:
    """Sum of repulsions from neighbors inside the (downwash-stretched) contact range.

    Displacements are divided per axis by ``1 + alpha`` before measuring the
    contact distance, so the avoidance region is taller than it is wide.
    """
    p = np.asarray(p_i, dtype=float)
    nb = np.asarray(neighbors, dtype=float).reshape(-1, len(p))
    if len(nb) == 0:
        return np.zeros_like(p)
    d = p - nb
    close = _norms(d) < EPS
    if close.any():
        ids = np.arange(len(nb)) if neighbor_ids is None else np.asarray(neighbor_ids)
        for j in np.flatnonzero(close):
            d[j] = EPS * _pair_direction(int(self_id), int(ids[j]), len(p))
    inv_scale = 1.0 / (1.0 + np.asarray(params.alpha))
    return _kernels.avoid(d, inv_scale, params.r_avoid, params.kappa2, EPS)


def clip_norm(v: np.ndarray, v_max: float) -> np.ndarray:
    n = float(np.linalg.norm(v))
    return v * (v_max / n) if n > v_max else v


def command(emap, nmap, p_i, neighbors, params: ControlParams, self_id: int = -1, neighbor_ids=None):
    """Clipped velocity command together with the robot's proximity value."""
    p = np.asarray(p_i, dtype=float)
    v_form, e = _forming(emap, nmap, p, neighbors, params)
    v = v_form + avoiding_velocity(p, neighbors, params, self_id, neighbor_ids)
    return clip_norm(v, params.v_max), e


def control(emap: EmbeddedMap, nmap: NeighborMap, p_i, neighbors, params: ControlParams, self_id: int = -1, neighbor_ids=None) -> np.ndarray:
    return command(emap, nmap, p_i, neighbors, params, self_id, neighbor_ids)[0]
