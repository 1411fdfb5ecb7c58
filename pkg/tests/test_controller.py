import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from treeswarm import _kernels
from treeswarm.controller import (
    EPS,
    Candidates,
    ControlParams,
    _weighted_pull,
    avoiding_velocity,
    clip_norm,
    command,
    control,
    eta,
    forming_velocity,
    mu,
    phi,
    tree_search_candidate,
    virtual_candidates,
)
from treeswarm.neighbor_map import build, sense_black_leaves
from treeswarm.tree_map import BLACK, BinaryImage, embed, encode, locate_leaf, merge

from conftest import random_map
from oracles import leaf_boxes, tree_search_literal, virtual_scan, weighted_mean_velocity

P2 = ControlParams.defaults(2)
P3 = ControlParams.defaults(3)
finite = st.floats(-3, 3, allow_nan=False)


def maps_from(grid, d_max, n_robot=20, origin=None):
    t = merge(encode(BinaryImage.from_grid(np.asarray(grid, dtype=np.uint8)), d_max))
    emap = embed(t, n_robot, 0.6, origin=origin)
    return emap, build(emap)


# -- scalar profiles ----------------------------------------------------------


@pytest.mark.parametrize("x,expected", [(-1, 1), (0, 1), (0.5, 0.5), (1, 0), (1.5, 0)])
def test_phi_examples(x, expected):
    assert phi(x) == pytest.approx(expected, abs=1e-12)


@given(a=st.floats(-2, 2), b=st.floats(-2, 2))
def test_phi_monotone(a, b):
    lo, hi = min(a, b), max(a, b)
    assert phi(hi) <= phi(lo) + 1e-15


@pytest.mark.parametrize("s,expected", [(0.5, 1), (1, 0), (2, 0), (0.25, 3)])
def test_mu_examples(s, expected):
    assert mu(s) == pytest.approx(expected, rel=1e-9)


# -- eta --------------------------------------------------------------------------


def test_eta_examples():
    one = Candidates(np.zeros((1, 2)), np.ones((1, 2)))
    assert eta([0, 0], one) == 0
    assert eta([0.5, 0], one) == pytest.approx(1, rel=1e-9)
    assert eta([0.5, 0.5], one) == pytest.approx(1, rel=1e-9)
    assert eta([1, 1], one) == pytest.approx(2, rel=1e-9)
    assert eta([1, 1], Candidates.empty(2)) == math.inf


def test_eta_kernel_matches_reference(maps_2d):
    _, emap, _ = maps_2d[0]
    rng = np.random.default_rng(0)
    ids = emap.tree.black_leaves()
    for _ in range(100):
        p = rng.uniform(emap.origin, emap.upper)
        sub = ids[rng.random(len(ids)) < 0.5]
        assert _kernels.eta(emap.centers, emap.sizes, sub, p) == eta(p, Candidates.from_nodes(emap, sub))


@pytest.mark.parametrize("which", ["maps_2d", "maps_3d"])
def test_eta_is_box_membership(which, request):
    rng = np.random.default_rng(31)
    for _, emap, nmap in request.getfixturevalue(which):
        r = 0.15 * emap.root_size
        boxes = {node: (lo, hi) for node, lo, hi in leaf_boxes(emap)}
        for _ in range(200):
            p = rng.uniform(emap.origin - 0.1, emap.upper + 0.1)
            sensed = sense_black_leaves(nmap, p, r)
            e = eta(p, Candidates.from_nodes(emap, sensed))
            inside = any(np.all(boxes[s][0] <= p) and np.all(p <= boxes[s][1]) for s in sensed)
            assert (e <= 1) == inside


# -- tree search ------------------------------------------------------------------


def test_tree_search_single_black_quadrant():
    g = np.zeros((8, 8), dtype=np.uint8)
    g[4:, 4:] = 1
    emap, _ = maps_from(g, 3)
    black = emap.tree.black_leaves()
    assert len(black) == 1
    p = emap.centers[emap.tree.children[0, 0]]  # White quadrant
    assert tree_search_candidate(emap, p).ids.tolist() == black.tolist()


def test_tree_search_outside_prefers_nearer_root_child():
    g = np.zeros((8, 8), dtype=np.uint8)
    g[0, 0] = 1  # under root child 0
    g[7, 7] = 1  # under root child 3
    emap, _ = maps_from(g, 3)
    t = emap.tree
    near = tree_search_candidate(emap, emap.origin - 5.0).ids[0]
    far = tree_search_candidate(emap, emap.upper + 5.0).ids[0]
    assert tuple(t.coords[near]) == (0, 0) and t.depth[near] == 3
    assert tuple(t.coords[far]) == (7, 7) and t.depth[far] == 3


def test_tree_search_rejects_all_white():
    emap, _ = maps_from(np.ones((4, 4)), 2)
    object.__setattr__(emap, "beta", np.zeros_like(emap.beta))
    with pytest.raises(ValueError):
        tree_search_candidate(emap, emap.centers[0])


@pytest.mark.parametrize("dim", [2, 3])
def test_tree_search_vs_literal_descent(dim):
    rng = np.random.default_rng(dim)
    for seed in range(25 if dim == 2 else 10):
        _, emap, _ = random_map(200 + seed, dim, 5 if dim == 2 else 4)
        pad = 0.3 * emap.root_size
        for _ in range(20):
            p = rng.uniform(emap.origin - pad, emap.upper + pad)
            got = tree_search_candidate(emap, p).ids[0]
            assert emap.tree.color[got] == BLACK
            assert got == tree_search_literal(emap, p)


# -- virtual cells ------------------------------------------------------------------


def test_virtual_cells_fill_ball_inside_large_leaf():
    emap, nmap = maps_from(np.ones((32, 32)), 5, n_robot=200)
    params = ControlParams(r_sense=2.9 * emap.c_pixel)
    leaf = emap.tree.black_leaves()[0]
    p = emap.centers[leaf]  # a depth-1 leaf center is a cell corner
    cand = virtual_candidates(emap, p, [leaf], [], params)
    # lattice cells whose centers lie within 2.9 cells of a corner
    k = sum(1 for i in range(-4, 4) for j in range(-4, 4) if (i + 0.5) ** 2 + (j + 0.5) ** 2 <= 2.9**2)
    assert len(cand) == k
    assert np.all(np.linalg.norm(cand.centers - p, axis=1) <= params.r_sense)
    assert np.allclose(cand.sizes, emap.c_pixel)


def test_virtual_cell_under_neighbor_is_dropped():
    emap, nmap = maps_from(np.ones((32, 32)), 5, n_robot=200)
    leaf = emap.tree.black_leaves()[0]
    p = emap.centers[leaf] + 0.5 * emap.c_pixel
    free = virtual_candidates(emap, p, [leaf], [], P2)
    blocked = free.centers[3]
    left = virtual_candidates(emap, p, [leaf], [blocked], P2)
    assert len(left) < len(free)
    assert not np.any(np.all(np.isclose(left.centers, blocked), axis=1))


def test_virtual_cells_empty_without_sensed_leaves():
    emap, nmap = maps_from(np.ones((8, 8)), 3)
    assert len(virtual_candidates(emap, emap.centers[0], [], [], P2)) == 0


@pytest.mark.parametrize("which,params", [("maps_2d", P2), ("maps_3d", P3)])
def test_virtual_cells_vs_scan(which, params, request):
    rng = np.random.default_rng(77)
    for _, emap, nmap in request.getfixturevalue(which):
        for _ in range(15):
            p = rng.uniform(emap.origin, emap.upper)
            sensed = sense_black_leaves(nmap, p, params.r_sense)
            nb = p + rng.normal(scale=params.r_sense / 2, size=(rng.integers(0, 5), emap.dim))
            got = virtual_candidates(emap, p, sensed, nb, params).centers
            want = virtual_scan(emap, p, sensed, nb, params.r_sense, params.r_avoid / 2)
            order = lambda a: a[np.lexsort(a.T[::-1])] if len(a) else a
            assert got.shape == want.shape
            assert np.allclose(order(got), order(want), rtol=0, atol=1e-12)


@pytest.mark.parametrize("which,params", [("maps_2d", P2), ("maps_3d", P3)])
def test_fused_virtual_pull_matches_composition(which, params, request):
    rng = np.random.default_rng(5)
    for _, emap, nmap in request.getfixturevalue(which):
        t = emap.tree
        for _ in range(15):
            p = rng.uniform(emap.origin, emap.upper)
            sensed = sense_black_leaves(nmap, p, params.r_sense)
            nb = p + rng.normal(scale=params.r_sense / 2, size=(rng.integers(0, 5), emap.dim))
            cand = virtual_candidates(emap, p, sensed, nb, params)
            w = phi(np.linalg.norm(cand.centers - p, axis=1) / params.r_sense) if len(cand) else np.empty(0)
            composed = _weighted_pull(p, cand, np.atleast_1d(w), params.kappa1)
            fused = _kernels.virtual_pull(
                emap.origin, emap.c_pixel, 2**t.d_max, p, params.r_sense, t.coords, t.depth,
                t.d_max, sensed, nb, params.r_avoid / 2, params.kappa1, EPS,
            )
            assert np.allclose(fused, composed, rtol=1e-9, atol=1e-12)


# -- forming ----------------------------------------------------------------------


def test_weighted_pull_single_candidate():
    cand = Candidates(np.array([[1.0, 2.0]]), np.ones((1, 2)))
    v = _weighted_pull(np.zeros(2), cand, np.array([0.3]), 20.0)
    assert np.allclose(v, [20.0, 40.0], rtol=1e-9)


def test_weighted_pull_symmetric_pair_cancels():
    cand = Candidates(np.array([[1.0, 0.0], [-1.0, 0.0]]), np.ones((2, 2)))
    assert np.allclose(_weighted_pull(np.zeros(2), cand, np.array([1.0, 1.0]), 20.0), 0)


def test_area_weighted_hand_example():
    # areas 1 and 4 at distance 1 (+x) and 2 (-x): weights 1 and 2
    p = np.zeros(2)
    cand = Candidates(np.array([[1.0, 0.0], [-2.0, 0.0]]), np.array([[1.0, 1.0], [2.0, 2.0]]))
    w = cand.measure / np.linalg.norm(cand.centers - p, axis=1)
    v = _weighted_pull(p, cand, w, 20.0)
    assert v[0] == pytest.approx(-20.0, rel=1e-9) and v[1] == 0
    assert np.allclose(v, weighted_mean_velocity(p, cand.centers, [1.0, 2.0], 20.0), rtol=1e-9)


def test_weighted_pull_empty_is_zero():
    assert np.all(_weighted_pull(np.ones(3), Candidates.empty(3), np.empty(0), 20.0) == 0)


def test_forming_outside_points_at_tree_leaf():
    g = np.zeros((8, 8), dtype=np.uint8)
    g[4:, 4:] = 1
    emap, nmap = maps_from(g, 3)
    p = emap.origin - 2.0
    leaf = emap.tree.black_leaves()[0]
    v = forming_velocity(emap, nmap, p, [], P2)
    assert np.allclose(v, P2.kappa1 * (emap.centers[leaf] - p), rtol=1e-9)


def test_forming_inside_far_from_shape_uses_union():
    g = np.zeros((64, 64), dtype=np.uint8)
    g[48:, 48:] = 1
    emap, nmap = maps_from(g, 6, n_robot=50)
    p = emap.origin + 0.2  # inside the root box, no Black leaf within r_sense
    sensed = sense_black_leaves(nmap, p, P2.r_sense)
    assert sensed.size == 0
    ids = np.union1d(tree_search_candidate(emap, p).ids, sensed)
    ctrs = emap.centers[ids]
    w = np.prod(emap.sizes[ids], axis=1) / np.linalg.norm(ctrs - p, axis=1)
    want = weighted_mean_velocity(p, ctrs, w, P2.kappa1)
    assert np.allclose(forming_velocity(emap, nmap, p, [], P2), want, rtol=1e-9)


def test_forming_inside_shape_uses_virtual_cells(maps_2d):
    _, emap, nmap = maps_2d[2]
    rng = np.random.default_rng(8)
    checked = 0
    for leaf in emap.tree.black_leaves():
        p = emap.centers[leaf] + rng.uniform(-0.3, 0.3, 2) * emap.sizes[leaf]
        nb = p + rng.normal(scale=0.5, size=(3, 2))
        cand = virtual_candidates(emap, p, sense_black_leaves(nmap, p, P2.r_sense), nb, P2)
        v = forming_velocity(emap, nmap, p, nb, P2)
        if len(cand) == 0:
            assert np.all(v == 0)
            continue
        w = phi(np.linalg.norm(cand.centers - p, axis=1) / P2.r_sense)
        assert np.allclose(v, weighted_mean_velocity(p, cand.centers, w, P2.kappa1), rtol=1e-9, atol=1e-12)
        checked += 1
    assert checked > 5


def test_forming_all_cells_taken_holds_still():
    emap, nmap = maps_from(np.ones((16, 16)), 4, n_robot=4)
    p = emap.centers[emap.tree.black_leaves()[0]]
    ring = [p + P2.r_sense * 0.0]  # one robot sitting on p blocks nothing far away
    grid = np.stack(np.meshgrid(*[np.arange(16)] * 2, indexing="ij"), -1).reshape(-1, 2)
    everyone = emap.origin + (grid + 0.5) * emap.c_pixel
    v = forming_velocity(emap, nmap, p, np.vstack([everyone, ring]), P2)
    assert np.all(v == 0)


def test_forming_translation_equivariant(maps_2d):
    grid, emap, _ = maps_2d[1]
    shift = np.array([3.7, -11.2])
    moved, nmoved = maps_from(grid, emap.tree.d_max, emap.n_robot, origin=emap.origin + shift)
    assert moved.c_pixel == emap.c_pixel
    nmap = build(emap)
    rng = np.random.default_rng(6)
    for _ in range(60):
        p = rng.uniform(emap.origin - 1, emap.upper + 1)
        nb = p + rng.normal(scale=0.6, size=(2, 2))
        a = forming_velocity(emap, nmap, p, nb, P2)
        b = forming_velocity(moved, nmoved, p + shift, nb + shift, P2)
        assert np.allclose(a, b, atol=1e-8)


# -- avoidance ----------------------------------------------------------------------


def test_avoid_examples():
    assert np.allclose(avoiding_velocity([0, 0], [[-0.3, 0]], P2), [7.5, 0], rtol=1e-9)
    assert np.all(avoiding_velocity([0, 0], [[0.6, 0]], P2) == 0)
    assert np.all(avoiding_velocity([0, 0], np.empty((0, 2)), P2) == 0)


def test_avoid_downwash_stretches_vertical_range():
    params = ControlParams(r_avoid=0.6, alpha=(0.0, 0.0, 0.5))
    v = avoiding_velocity([0, 0, 0], [[0, 0, -0.6]], params)
    # scaled distance 0.4 -> mu(2/3) = 0.5 -> 25 * 0.5 * 0.6
    assert np.allclose(v, [0, 0, 7.5], rtol=1e-9)
    assert np.all(avoiding_velocity([0, 0, 0], [[-0.6, 0, 0]], params) == 0)


def test_avoid_kernel_matches_profile():
    rng = np.random.default_rng(12)
    for _ in range(50):
        p = rng.normal(size=3)
        nb = p + rng.normal(scale=0.4, size=(6, 3))
        d = p - nb
        s = np.linalg.norm(d / (1 + np.array(P3.alpha)), axis=1) / P3.r_avoid
        want = (P3.kappa2 * mu(s))[:, None] * d
        assert np.allclose(avoiding_velocity(p, nb, P3), want.sum(axis=0), rtol=1e-9, atol=1e-12)


@given(dx=finite, dy=finite)
def test_avoid_pair_antisymmetric(dx, dy):
    a, b = np.zeros(2), np.array([dx, dy])
    va = avoiding_velocity(a, [b], P2, 0, [1])
    vb = avoiding_velocity(b, [a], P2, 1, [0])
    assert np.allclose(va, -vb, atol=1e-9)


@given(dx=finite, dy=finite, dz=finite)
def test_avoid_locality(dx, dy, dz):
    d = np.array([dx, dy, dz])
    if np.linalg.norm(d) <= (1 + max(P3.alpha)) * P3.r_avoid:
        return
    assert np.all(avoiding_velocity(np.zeros(3), [d], P3) == 0)


def test_coincident_robots_repel_apart_deterministically():
    v01 = avoiding_velocity([1, 1], [[1, 1]], P2, 0, [1])
    v10 = avoiding_velocity([1, 1], [[1, 1]], P2, 1, [0])
    assert np.linalg.norm(v01) > 0
    assert np.allclose(v01, -v10)
    assert np.array_equal(v01, avoiding_velocity([1, 1], [[1, 1]], P2, 0, [1]))
    assert not np.allclose(v01, avoiding_velocity([1, 1], [[1, 1]], P2, 0, [2]))


# -- command ------------------------------------------------------------------------


def test_clip_norm():
    assert np.all(clip_norm(np.zeros(2), 10) == 0)
    v = clip_norm(np.array([12.0, 16.0]), 10.0)
    assert np.linalg.norm(v) == pytest.approx(10.0, rel=1e-12)
    assert np.allclose(v / 10, [0.6, 0.8])
    small = np.array([1.0, 2.0])
    assert clip_norm(small, 10) is small


def test_control_bounded_and_deterministic(maps_2d, maps_3d):
    rng = np.random.default_rng(13)
    for (_, emap, nmap), params in [(m, P2) for m in maps_2d] + [(m, P3) for m in maps_3d]:
        for _ in range(30):
            p = rng.uniform(emap.origin - 2, emap.upper + 2)
            nb = p + rng.normal(scale=0.3, size=(rng.integers(0, 6), emap.dim))
            ids = list(range(1, len(nb) + 1))
            v = control(emap, nmap, p, nb, params, 0, ids)
            assert np.all(np.isfinite(v))
            assert np.linalg.norm(v) <= params.v_max * (1 + 1e-12)
            assert np.array_equal(v, control(emap, nmap, p, nb, params, 0, ids))


def test_command_reports_eta(maps_2d):
    _, emap, nmap = maps_2d[0]
    leaf = emap.tree.black_leaves()[0]
    _, e = command(emap, nmap, emap.centers[leaf], [], P2)
    assert e == 0
    _, e_out = command(emap, nmap, emap.origin - 10, [], P2)
    assert e_out == math.inf


def test_params_validation():
    with pytest.raises(ValueError):
        ControlParams(kappa1=0)
    with pytest.raises(ValueError):
        ControlParams(alpha=(0, -1))
    with pytest.raises(ValueError):
        ControlParams.defaults(4)
    assert P3.alpha_z == 0.5 and P2.alpha_z == 0.0
