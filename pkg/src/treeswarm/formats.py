"""On-disk formats: run configs, trajectory CSV, metrics JSON and tree dumps.

Run config
    Flat ``key = value`` text, one key per line, ``#`` starts a comment.
    Vector values (``alpha``, ``init_min``, ``init_max``) are comma
    separated. A bare preset name (``default2d`` / ``default3d``) can stand in
    for a file. Keys: shape, dim, d_max, d_map, n_robot, kappa1, kappa2,
    r_avoid, r_sense, alpha, v_max, dt, n_steps, seed, init_min, init_max,
    record_every. ``alpha`` may be a single number, taken as the vertical
    component in 3D.

Trajectory CSV
    ``#``-prefixed header lines (``key=value``), then the column row
    ``step,id,x,y[,z]`` and one row per robot per recorded step, ordered by
    (step, id). Step 0 (the seeded initial placement) is not written, so a
    run of ``n_steps`` with every step recorded has ``n_steps * n_robot``
    rows. Floats carry 9 significant digits.

Tree dump (little endian)
    ``b"SWTM"``, u8 version (1), u8 dim, u8 d_max, u32 node count, then per
    node an i32 parent followed by ``2**dim`` i32 child ids (-1 for leaves),
    then one color bit per node, LSB first (1 = Black leaf).
"""
from __future__ import annotations

import io
import json
import math
import struct
from dataclasses import fields, replace
from pathlib import Path

import numpy as np

from .controller import ControlParams
from .shape_io import atomic_write
from .sim import SimConfig, TrajectoryLog
from .tree_map import BLACK, INTERNAL, TreeMap, child_offsets

TREE_MAGIC = b"SWTM"
TREE_VERSION = 1
PRESETS = {"default2d": 2, "default3d": 3}


class ConfigError(ValueError):
    pass


class TreeFormatError(ValueError):
    pass


_PARAM_KEYS = {f.name for f in fields(ControlParams)}
_INT_KEYS = {"dim", "d_max", "d_map", "n_robot", "n_steps", "seed", "record_every"}
_FLOAT_KEYS = {"kappa1", "kappa2", "r_avoid", "r_sense", "v_max", "dt"}
_VECTOR_KEYS = {"alpha", "init_min", "init_max"}
CONFIG_KEYS = _INT_KEYS | _FLOAT_KEYS | _VECTOR_KEYS | {"shape"}


def parse_config_text(text: str, base_dir: Path | None = None) -> SimConfig:
    raw = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in CONFIG_KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in raw:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        raw[key] = value
    return config_from_mapping(raw, base_dir)


def _convert(key: str, value: str):
    try:
        if key in _INT_KEYS:
            return None if key == "d_map" and value.lower() in ("", "auto", "none") else int(value)
        if key in _FLOAT_KEYS:
            return float(value)
        if key in _VECTOR_KEYS:
            return tuple(float(v) for v in value.split(","))
    except ValueError:
        raise ConfigError(f"bad value for {key!r}: {value!r}") from None
    return value


def config_from_mapping(raw: dict, base_dir: Path | None = None) -> SimConfig:
    vals = {k: _convert(k, str(v)) for k, v in raw.items()}
    dim = vals.pop("dim", 2)
    if dim not in (2, 3):
        raise ConfigError(f"dim must be 2 or 3, got {dim}")
    base = SimConfig.defaults(dim)
    params = {k: vals.pop(k) for k in list(vals) if k in _PARAM_KEYS}
    if "alpha" in params:
        a = params["alpha"]
        if len(a) == 1:
            params["alpha"] = (0.0,) * (dim - 1) + a
    shape = vals.get("shape")
    if shape is not None and base_dir is not None and not Path(shape).is_absolute():
        candidate = base_dir / shape
        if candidate.exists():
            vals["shape"] = str(candidate)
    try:
        return replace(base, params=replace(base.params, **params), **vals)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def load_config(source: str) -> SimConfig:
    """Read a config file, or expand a preset name."""
    if source in PRESETS:
        return SimConfig.defaults(PRESETS[source])
    path = Path(source)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {source!r}: {exc.strerror}") from None
    return parse_config_text(text, path.parent)


def _fmt(v) -> str:
    if isinstance(v, (tuple, list)):
        return ",".join(_fmt(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return "auto" if v is None else str(v)


def config_to_text(config: SimConfig) -> str:
    d = config.to_dict()
    d.update(d.pop("params"))
    lines = ["# treeswarm run config"]
    for key in sorted(d):
        if key in ("init_min", "init_max") and d[key] is None:
            continue
        lines.append(f"{key} = {_fmt(d[key])}")
    return "\n".join(lines) + "\n"


AXES = "xyz"


def trajectory_csv(log: TrajectoryLog) -> str:
    out = io.StringIO()
    for key, value in log.header.items():
        out.write(f"# {key}={value}\n")
    dim = log.positions.shape[2]
    out.write(",".join(["step", "id", *AXES[:dim]]) + "\n")
    for step, frame in zip(log.steps.tolist(), log.positions):
        if step == 0:
            continue
        for i, row in enumerate(frame.tolist()):
            out.write(f"{step},{i}," + ",".join(f"{v:.9g}" for v in row) + "\n")
    return out.getvalue()


def read_trajectory_csv(path) -> tuple[dict, np.ndarray, np.ndarray]:
    """Header dict, recorded steps and (n_records, n_robot, dim) positions."""
    header = {}
    rows = []
    columns = None
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                key, _, value = line[1:].strip().partition("=")
                header[key.strip()] = value.strip()
            elif columns is None:
                columns = line.split(",")
            else:
                rows.append([float(v) for v in line.split(",")])
    if columns is None or columns[:2] != ["step", "id"]:
        raise ValueError(f"{path}: missing 'step,id,...' column row")
    data = np.array(rows, dtype=float).reshape(-1, len(columns))
    n_robot = int(data[:, 1].max()) + 1 if len(data) else 0
    if n_robot == 0 or len(data) % n_robot:
        raise ValueError(f"{path}: rows do not form whole frames")
    frames = data.reshape(-1, n_robot, len(columns))
    if not np.all(frames[:, :, 1] == np.arange(n_robot)):
        raise ValueError(f"{path}: rows not ordered by (step, id)")
    return header, frames[:, 0, 0].astype(int), frames[:, :, 2:]


def _json_value(v):
    if isinstance(v, float) and not math.isfinite(v):
        return "inf" if v > 0 else ("-inf" if v < 0 else "nan")
    return v


def metrics_json(flat: dict) -> str:
    return json.dumps({k: _json_value(v) for k, v in flat.items()}, indent=2, sort_keys=True) + "\n"


def step_metrics_csv(rates, m3) -> str:
    lines = ["step,entering_rate,m3"]
    lines += [f"{t},{r:.9g},{m:.9g}" for t, (r, m) in enumerate(zip(rates, m3))]
    return "\n".join(lines) + "\n"


def dump_tree(tree: TreeMap) -> bytes:
    n = tree.n_nodes
    head = TREE_MAGIC + struct.pack("<BBBI", TREE_VERSION, tree.dim, tree.d_max, n)
    records = np.concatenate([tree.parent[:, None], tree.children], axis=1).astype("<i4")
    bits = np.packbits(tree.color == BLACK, bitorder="little")
    return head + records.tobytes() + bits.tobytes()


def load_tree(data: bytes) -> TreeMap:
    if data[:4] != TREE_MAGIC:
        raise TreeFormatError("not a tree dump (bad magic)")
    if len(data) < 11:
        raise TreeFormatError("truncated header")
    version, dim, d_max, n = struct.unpack_from("<BBBI", data, 4)
    if version != TREE_VERSION:
        raise TreeFormatError(f"unsupported tree dump version {version}")
    if dim not in (2, 3) or n < 1:
        raise TreeFormatError("corrupt header")
    n_div = 2**dim
    rec_bytes = n * (1 + n_div) * 4
    bit_bytes = (n + 7) // 8
    if len(data) != 11 + rec_bytes + bit_bytes:
        raise TreeFormatError(f"expected {11 + rec_bytes + bit_bytes} bytes, got {len(data)}")
    records = np.frombuffer(data, dtype="<i4", count=n * (1 + n_div), offset=11).reshape(n, 1 + n_div)
    parent = records[:, 0].astype(np.int32)
    children = records[:, 1:].astype(np.int32)
    black = np.unpackbits(np.frombuffer(data, np.uint8, offset=11 + rec_bytes), count=n, bitorder="little")
    leaf = children[:, 0] < 0
    color = np.where(leaf, black, INTERNAL).astype(np.int8)
    if np.any(children >= n) or parent[0] != -1:
        raise TreeFormatError("corrupt node links")

    depth = np.zeros(n, dtype=np.int8)
    coords = np.zeros((n, dim), dtype=np.int64)
    offsets = child_offsets(dim)
    # breadth-first order puts every parent before its children
    for node in np.flatnonzero(~leaf):
        ch = children[node]
        if np.any(ch <= node):
            raise TreeFormatError("children must follow their parent")
        depth[ch] = depth[node] + 1
        coords[ch] = 2 * coords[node] + offsets
    return TreeMap(dim, d_max, parent, children, color, depth, coords)


def tree_stats(tree: TreeMap) -> str:
    from .metrics import memory_report

    mem = memory_report(tree)
    lines = [
        f"dim: {tree.dim}",
        f"d_max: {tree.d_max}",
        f"nodes: {tree.n_nodes}",
        f"n_middle: {tree.n_middle}",
        f"n_leaf: {tree.n_leaf}",
        f"n_black_leaf: {len(tree.black_leaves())}",
        f"m_tree_bytes: {mem.m_tree:.3f}",
        f"m_full_grid_bytes: {mem.m_full_grid:.0f}",
        f"reduction_ratio: {mem.reduction_ratio:.4f}",
    ]
    return "\n".join(lines) + "\n"


def write_text(path, text: str) -> None:
    atomic_write(path, text)
