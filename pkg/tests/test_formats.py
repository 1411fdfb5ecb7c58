from dataclasses import replace

import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from treeswarm import formats
from treeswarm.formats import ConfigError, TreeFormatError
from treeswarm.shapes import make_shape
from treeswarm.sim import SimConfig, run
from treeswarm.tree_map import BinaryImage, encode, merge


# -- config -----------------------------------------------------------------------------


def test_parse_full_config(tmp_path):
    (tmp_path / "shape.pgm").write_text("P2 2 2 1\n0 1 1 0\n")
    text = """
    # small run
    shape = shape.pgm
    dim = 2
    d_max = 5   # depth
    d_map = auto
    n_robot = 12
    kappa1 = 15
    alpha = 0, 0
    seed = 3
    init_min = -1, -1
    init_max = 1, 1
    """
    cfg = formats.parse_config_text(text, tmp_path)
    assert cfg.shape == str(tmp_path / "shape.pgm")
    assert (cfg.d_max, cfg.d_map, cfg.n_robot, cfg.seed) == (5, None, 12, 3)
    assert cfg.params.kappa1 == 15.0 and cfg.params.kappa2 == 25.0
    assert cfg.init_min == (-1.0, -1.0)


def test_scalar_alpha_is_vertical_in_3d():
    cfg = formats.parse_config_text("dim = 3\nalpha = 0.7\n")
    assert cfg.params.alpha == (0.0, 0.0, 0.7)
    assert cfg.shape == "pyramid" and cfg.d_max == 6


def test_presets():
    assert formats.load_config("default2d") == SimConfig.defaults(2)
    assert formats.load_config("default3d") == SimConfig.defaults(3)


@pytest.mark.parametrize(
    "text",
    [
        "bogus = 1",
        "seed = 1\nseed = 2",
        "seed",
        "n_robot = many",
        "dim = 5",
        "n_steps = 0",
        "alpha = 0, 0, 0",
        "r_sense = -1",
        "init_min = 0, 0",
    ],
)
def test_config_errors(text):
    with pytest.raises(ConfigError):
        formats.parse_config_text(text)


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigError):
        formats.load_config(str(tmp_path / "nope.txt"))


def test_config_text_roundtrip(tmp_path):
    cfg = replace(SimConfig.defaults(3), seed=9, init_min=(-1, -2, -3), init_max=(1, 2, 3), d_map=2)
    f = tmp_path / "c.txt"
    f.write_text(formats.config_to_text(cfg))
    assert formats.load_config(str(f)) == cfg
    cfg2 = SimConfig.defaults(2)
    assert formats.parse_config_text(formats.config_to_text(cfg2)) == cfg2


# -- trajectory / metrics -----------------------------------------------------------------


@pytest.fixture(scope="module")
def small_log():
    return run(SimConfig.defaults(2, "disk", d_max=4, n_robot=7, n_steps=6))


def test_csv_layout(small_log):
    text = formats.trajectory_csv(small_log)
    lines = text.splitlines()
    header = [l for l in lines if l.startswith("#")]
    body = [l for l in lines if not l.startswith("#")]
    assert body[0] == "step,id,x,y"
    assert len(body) - 1 == 6 * 7
    keys = [l[2:].split("=")[0] for l in header]
    assert keys == ["n_robot", "dim", "dt", "seed", "config_hash", "r_sense"]
    first = body[1].split(",")
    assert first[:2] == ["1", "0"]
    pairs = [tuple(int(v) for v in l.split(",")[:2]) for l in body[1:]]
    assert pairs == sorted(pairs)


def test_csv_roundtrip(tmp_path, small_log):
    f = tmp_path / "t.csv"
    f.write_text(formats.trajectory_csv(small_log))
    header, steps, frames = formats.read_trajectory_csv(f)
    assert header["n_robot"] == "7"
    assert steps.tolist() == list(range(1, 7))
    assert np.allclose(frames, small_log.positions[1:], rtol=1e-8, atol=1e-12)


@pytest.mark.parametrize(
    "body",
    ["x,y\n1,2\n", "step,id,x,y\n1,0,0,0\n1,1,0,0\n2,0,0,0\n", "step,id,x,y\n1,1,0,0\n1,0,0,0\n"],
)
def test_csv_rejects_bad_tables(tmp_path, body):
    f = tmp_path / "t.csv"
    f.write_text(body)
    with pytest.raises(ValueError):
        formats.read_trajectory_csv(f)


def test_metrics_json_inf_and_sorting():
    text = formats.metrics_json({"b": float("inf"), "a": 1, "c": None})
    data = json.loads(text)
    assert data == {"a": 1, "b": "inf", "c": None}
    assert text.index('"a"') < text.index('"b"')


def test_step_metrics_rows():
    text = formats.step_metrics_csv([0.0, 50.0], [1.0, 0.5])
    assert text.splitlines() == ["step,entering_rate,m3", "0,0,1", "1,50,0.5"]


# -- tree dump ---------------------------------------------------------------------------------


def _tree(seed, dim, d_max):
    rng = np.random.default_rng(seed)
    g = (rng.random((2**d_max,) * dim) < 0.3).astype(np.uint8)
    return merge(encode(BinaryImage.from_grid(g), d_max))


@given(seed=st.integers(0, 1000), dim=st.sampled_from([2, 3]))
def test_dump_roundtrip(seed, dim):
    t = _tree(seed, dim, 4 if dim == 2 else 3)
    back = formats.load_tree(formats.dump_tree(t))
    assert back.same_structure(t)
    assert np.array_equal(back.depth, t.depth) and np.array_equal(back.coords, t.coords)
    assert back.d_max == t.d_max


def test_dump_layout():
    t = merge(encode(BinaryImage.from_grid(np.eye(4, dtype=np.uint8)), 2))
    data = formats.dump_tree(t)
    assert data[:4] == b"SWTM" and data[4:7] == bytes([1, 2, 2])
    assert int.from_bytes(data[7:11], "little") == t.n_nodes
    assert len(data) == 11 + t.n_nodes * 5 * 4 + (t.n_nodes + 7) // 8


def test_dump_corruption_detected():
    data = formats.dump_tree(_tree(1, 2, 4))
    bad = [
        b"XXXX" + data[4:],
        data[:8],
        data[:4] + bytes([9]) + data[5:],
        data[:-1],
        data + b"\0",
    ]
    # a child id pointing back at the root
    arr = bytearray(data)
    arr[11 + 4 : 11 + 8] = (0).to_bytes(4, "little", signed=True)
    bad.append(bytes(arr))
    for blob in bad:
        with pytest.raises(TreeFormatError):
            formats.load_tree(blob)


def test_tree_stats_block():
    t = merge(encode(make_shape("ring", 128), 7))
    stats = dict(line.split(": ") for line in formats.tree_stats(t).splitlines())
    assert stats["m_full_grid_bytes"] == "65536"
    assert float(stats["m_tree_bytes"]) < 65536
    assert int(stats["n_leaf"]) == t.n_leaf
