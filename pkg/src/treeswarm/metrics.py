"""Memory, entering and uniformity metrics over maps and swarm snapshots."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy.spatial import cKDTree

from .controller import Candidates, ControlParams, eta
from .neighbor_map import NeighborMap, sense_black_leaves
from .tree_map import EmbeddedMap, TreeMap, full_grid_bytes, memory_bytes


@dataclass(frozen=True)
class MemoryReport:
    m_tree: float
    m_full_grid: float
    reduction_ratio: float


def memory_report(tree: TreeMap, side: int | None = None) -> MemoryReport:
    """Tree-map bytes against a dense float grid at the same resolution."""
    side = 2**tree.d_max if side is None else side
    m_tree = memory_bytes(tree)
    m_grid = full_grid_bytes(side, tree.dim)
    return MemoryReport(m_tree, m_grid, m_grid / m_tree)


def robot_etas(positions, emap: EmbeddedMap, nmap: NeighborMap, params: ControlParams) -> np.ndarray:
    positions = np.asarray(positions, dtype=float)
    out = np.empty(len(positions))
    for i, p in enumerate(positions):
        out[i] = eta(p, Candidates.from_nodes(emap, sense_black_leaves(nmap, p, params.r_sense)))
    return out


def entering_rate(positions, emap: EmbeddedMap, nmap: NeighborMap, params: ControlParams) -> float:
    """Percentage of robots with proximity <= 1, i.e. inside a Black leaf."""
    etas = robot_etas(positions, emap, nmap, params)
    return 100.0 * np.count_nonzero(etas <= 1) / len(etas)


def entering_time(rates, steps=None) -> int | None:
    """First step at which the rate reaches 100%; None if it never does.

    ``rates[k]`` belongs to step ``steps[k]`` (default: step ``k``). Later
    dips below 100% do not move the result.
    """
    hit = np.flatnonzero(np.asarray(rates, dtype=float) >= 100.0)
    if not hit.size:
        return None
    return int(hit[0]) if steps is None else int(steps[hit[0]])


def min_neighbor_distances(positions, r_sense: float) -> np.ndarray:
    """Distance to the nearest other robot, NaN where none is within ``r_sense``."""
    positions = np.asarray(positions, dtype=float)
    if len(positions) < 2:
        return np.full(len(positions), np.nan)
    d, _ = cKDTree(positions).query(positions, k=2)
    r = d[:, 1]
    return np.where(r <= r_sense, r, np.nan)


def uniformity(positions, r_sense: float) -> float:
    """Sum of squared deviations of per-robot nearest-neighbor distances.

    Robots with no neighbor in range are left out.
    """
    r = min_neighbor_distances(positions, r_sense)
    r = r[~np.isnan(r)]
    if r.size == 0:
        return 0.0
    return float(np.sum((r - r.mean()) ** 2))


def final_uniformity(m3: float, n_robot: int) -> float:
    """-log10(M3 / n); larger is more uniform, ``inf`` for identical spacing."""
    if m3 <= 0:
        return math.inf
    return -math.log10(m3 / n_robot)


@dataclass
class MetricsReport:
    m_tree: float
    m_full_grid: float
    reduction_ratio: float
    entering_time: int | None
    final_entering_rate: float
    final_m3: float
    final_uniformity: float
    n_excluded: int
    entering_rate: list[float]
    m3: list[float]

    def flat(self) -> dict:
        """Scalar fields only, suitable for a flat key-value document."""
        d = asdict(self)
        d.pop("entering_rate")
        d.pop("m3")
        return d


def summarize(tree: TreeMap, rates, m3_series, final_positions, r_sense: float, steps=None) -> MetricsReport:
    mem = memory_report(tree)
    final_positions = np.asarray(final_positions, dtype=float)
    m3_final = float(m3_series[-1])
    excluded = int(np.count_nonzero(np.isnan(min_neighbor_distances(final_positions, r_sense))))
    return MetricsReport(
        m_tree=mem.m_tree,
        m_full_grid=mem.m_full_grid,
        reduction_ratio=mem.reduction_ratio,
        entering_time=entering_time(rates, steps),
        final_entering_rate=float(rates[-1]),
        final_m3=m3_final,
        final_uniformity=final_uniformity(m3_final, len(final_positions)),
        n_excluded=excluded,
        entering_rate=[float(r) for r in rates],
        m3=[float(m) for m in m3_series],
    )
