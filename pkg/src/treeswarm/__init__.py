"""Memory-efficient tree maps and a distributed controller for swarm shape assembly."""
from .controller import ControlParams, control
from .metrics import entering_rate, entering_time, final_uniformity, memory_report, uniformity
from .neighbor_map import NeighborMap, sense_black_leaves
from .sim import SimConfig, TrajectoryLog, WorldState, init_world, run, step
from .tree_map import BinaryImage, EmbeddedMap, TreeMap, embed, encode, locate_at_depth, locate_leaf, merge, rasterize

__all__ = [
    "BinaryImage",
    "ControlParams",
    "EmbeddedMap",
    "NeighborMap",
    "SimConfig",
    "TrajectoryLog",
    "TreeMap",
    "WorldState",
    "control",
    "embed",
    "encode",
    "entering_rate",
    "entering_time",
    "final_uniformity",
    "init_world",
    "locate_at_depth",
    "locate_leaf",
    "memory_report",
    "merge",
    "rasterize",
    "run",
    "sense_black_leaves",
    "step",
    "uniformity",
]
