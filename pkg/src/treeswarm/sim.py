"""Synchronous kinematic swarm simulation driven by the shape-assembly controller."""
from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from . import metrics
from .controller import ControlParams, command
from .neighbor_map import NeighborMap, build as build_neighbor_map
from .shape_io import load_shape
from .shapes import make_shape, shape_dim, SHAPES_2D, SHAPES_3D
from .tree_map import BinaryImage, EmbeddedMap, embed, encode, merge

log = logging.getLogger(__name__)

MAX_PLACEMENT_TRIES = 10_000


class PlacementError(RuntimeError):
    pass


@dataclass(frozen=True)
class SimConfig:
    shape: str  # built-in stand-in name or path to a PGM/VOX3 file
    dim: int = 2
    d_max: int = 7
    d_map: int | None = None
    n_robot: int = 200
    params: ControlParams = field(default_factory=ControlParams)
    dt: float = 0.01
    n_steps: int = 1000
    seed: int = 0
    # initial box; None places a root-sized box beside the map on the -x side
    init_min: tuple[float, ...] | None = None
    init_max: tuple[float, ...] | None = None
    record_every: int = 1

    def __post_init__(self):
        if self.dim not in (2, 3):
            raise ValueError(f"dim must be 2 or 3, got {self.dim}")
        if self.params.dim != self.dim:
            raise ValueError(f"alpha has {self.params.dim} components for a {self.dim}D run")
        if self.n_robot < 1:
            raise ValueError("n_robot must be >= 1")
        if self.n_steps < 1:
            raise ValueError("n_steps must be >= 1")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.record_every < 1:
            raise ValueError("record_every must be >= 1")
        if (self.init_min is None) != (self.init_max is None):
            raise ValueError("init_min and init_max must be given together")
        if self.init_min is not None:
            lo, hi = np.asarray(self.init_min, float), np.asarray(self.init_max, float)
            if lo.shape != (self.dim,) or hi.shape != (self.dim,) or np.any(hi <= lo):
                raise ValueError("initial box must be non-degenerate with one bound per axis")

    @classmethod
    def defaults(cls, dim: int, shape: str | None = None, **overrides) -> "SimConfig":
        """Study settings: 2D at depth 7 for 1000 steps, 3D at depth 6 for 500."""
        if dim == 2:
            base = cls(shape=shape or "R", dim=2, d_max=7, n_steps=1000, params=ControlParams.defaults(2))
        else:
            base = cls(shape=shape or "pyramid", dim=3, d_max=6, n_steps=500, params=ControlParams.defaults(3))
        return replace(base, **overrides)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["params"] = asdict(self.params)
        return d

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]


@dataclass(frozen=True)
class WorldState:
    positions: np.ndarray
    step: int = 0
    dt: float = 0.01
    seed: int = 0

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=float)
        if pos.ndim != 2 or len(pos) < 1:
            raise ValueError("positions must be an (n_robot, dim) array")
        if not np.all(np.isfinite(pos)):
            raise FloatingPointError("non-finite robot position")
        object.__setattr__(self, "positions", pos)

    @property
    def n_robot(self) -> int:
        return len(self.positions)


@dataclass(eq=False)
class TrajectoryLog:
    header: dict
    steps: np.ndarray  # recorded step indices
    positions: np.ndarray  # (n_records, n_robot, dim)
    entering_rate: np.ndarray  # one value per state, steps 0..n_steps
    m3: np.ndarray
    emap: EmbeddedMap | None = field(default=None, repr=False)

    def report(self) -> metrics.MetricsReport:
        return metrics.summarize(
            self.emap.tree, self.entering_rate, self.m3, self.positions[-1], self.header["r_sense"]
        )


def load_target(config: SimConfig) -> BinaryImage:
    if config.shape in SHAPES_2D or config.shape in SHAPES_3D:
        if shape_dim(config.shape) != config.dim:
            raise ValueError(f"shape {config.shape!r} is not {config.dim}D")
        return make_shape(config.shape, 2**config.d_max)
    return load_shape(Path(config.shape), config.dim)


def build_maps(config: SimConfig) -> tuple[EmbeddedMap, NeighborMap]:
    """Encode, merge and embed the target centered on the world origin."""
    tree = merge(encode(load_target(config), config.d_max))
    emap = embed(tree, config.n_robot, config.params.r_avoid, config.params.alpha_z)
    return emap, build_neighbor_map(emap, config.d_map)


def initial_box(config: SimConfig, emap: EmbeddedMap | None = None) -> tuple[np.ndarray, np.ndarray]:
    if config.init_min is not None:
        return np.asarray(config.init_min, float), np.asarray(config.init_max, float)
    if emap is None:
        raise ValueError("automatic initial box needs the embedded map")
    shift = np.zeros(config.dim)
    shift[0] = -1.5 * emap.root_size
    return emap.origin + shift, emap.upper + shift


def init_world(config: SimConfig, emap: EmbeddedMap | None = None) -> WorldState:
    """Seeded uniform placement, rejecting draws closer than r_avoid/2 to a placed robot."""
    lo, hi = initial_box(config, emap)
    rng = np.random.default_rng(config.seed)
    min_d2 = (config.params.r_avoid / 2) ** 2
    placed = np.empty((config.n_robot, config.dim))
    for i in range(config.n_robot):
        for _ in range(MAX_PLACEMENT_TRIES):
            p = rng.uniform(lo, hi)
            if i == 0 or np.min(np.sum((placed[:i] - p) ** 2, axis=1)) >= min_d2:
                placed[i] = p
                break
        else:
            raise PlacementError(
                f"could not place robot {i} of {config.n_robot} after {MAX_PLACEMENT_TRIES} tries"
            )
    return WorldState(placed, 0, config.dt, config.seed)


def neighbor_lists(positions: np.ndarray, r_sense: float) -> list[np.ndarray]:
    """Sorted ids of the other robots within ``r_sense`` of each robot."""
    hits = cKDTree(positions).query_ball_point(positions, r_sense)
    return [np.array(sorted(j for j in h if j != i), dtype=np.int64) for i, h in enumerate(hits)]


def commands(world: WorldState, emap, nmap, params: ControlParams, executor=None):
    """Velocity and proximity value of every robot from one frozen snapshot."""
    pos = world.positions
    nbrs = neighbor_lists(pos, params.r_sense)

    def one(i):
        ids = nbrs[i]
        return command(emap, nmap, pos[i], pos[ids], params, i, ids)

    results = list(executor.map(one, range(len(pos)))) if executor else [one(i) for i in range(len(pos))]
    vel = np.array([r[0] for r in results])
    etas = np.array([r[1] for r in results])
    if not np.all(np.isfinite(vel)):
        raise FloatingPointError("controller produced a non-finite velocity")
    return vel, etas


def advance(world: WorldState, emap, nmap, params: ControlParams, executor=None):
    vel, etas = commands(world, emap, nmap, params, executor)
    nxt = WorldState(world.positions + vel * world.dt, world.step + 1, world.dt, world.seed)
    return nxt, vel, etas


def step(world: WorldState, emap, nmap, params: ControlParams, executor=None) -> WorldState:
    """Explicit Euler update of all robots at once."""
    return advance(world, emap, nmap, params, executor)[0]


def run(config: SimConfig, executor=None) -> TrajectoryLog:
    emap, nmap = build_maps(config)
    world = init_world(config, emap)
    params = config.params

    n = config.n_steps
    rates = np.empty(n + 1)
    m3 = np.empty(n + 1)
    steps = [0]
    frames = [world.positions]
    for t in range(n):
        m3[t] = metrics.uniformity(world.positions, params.r_sense)
        world, _, etas = advance(world, emap, nmap, params, executor)
        rates[t] = 100.0 * np.count_nonzero(etas <= 1) / config.n_robot
        if world.step % config.record_every == 0 or world.step == n:
            steps.append(world.step)
            frames.append(world.positions)
        if world.step % 100 == 0:
            log.debug("step %d: entering %.1f%%", world.step, rates[t])
    rates[n] = metrics.entering_rate(world.positions, emap, nmap, params)
    m3[n] = metrics.uniformity(world.positions, params.r_sense)

    header = {
        "n_robot": config.n_robot,
        "dim": config.dim,
        "dt": config.dt,
        "seed": config.seed,
        "config_hash": config.digest(),
        "r_sense": params.r_sense,
    }
    return TrajectoryLog(header, np.array(steps), np.stack(frames), rates, m3, emap)
