"""Compiled inner loops for per-robot map queries.

Grids arrive flattened in C order over [x, y(, z)]; trees as the arena
arrays of :class:`~treeswarm.tree_map.TreeMap`.
"""
import numpy as np
from numba import njit


@njit(cache=True)
def _unravel(flat, shape, out):
    for a in range(len(shape) - 1, -1, -1):
        out[a] = flat % shape[a]
        flat //= shape[a]


@njit(cache=True)
def _box_ball_d2(lo, hi, p):
    d2 = 0.0
    for a in range(len(p)):
        g = max(lo[a] - p[a], 0.0) + max(p[a] - hi[a], 0.0)
        d2 += g * g
    return d2


@njit(cache=True)
def sense(link, n_cells, h, origin, p, r, children, color, centers, sizes):
    """Sorted unique Black leaves whose closed boxes meet the ball B(p, r)."""
    dim = len(p)
    lo = np.empty(dim, np.int64)
    shape = np.empty(dim, np.int64)
    for a in range(dim):
        i0 = int(np.floor((p[a] - r - origin[a]) / h))
        i1 = int(np.floor((p[a] + r - origin[a]) / h))
        i0 = min(max(i0, 0), n_cells - 1)
        i1 = min(max(i1, 0), n_cells - 1)
        lo[a] = i0
        shape[a] = i1 - i0 + 1
    total = 1
    for a in range(dim):
        total *= shape[a]

    # cells are a superset filter; the exact test runs on leaves below
    slack = r * (1.0 + 1e-9) + 1e-12
    r2 = r * r
    found = np.empty(64, np.int64)
    n_found = 0
    stack = np.empty(64, np.int64)
    idx = np.empty(dim, np.int64)
    cmin = np.empty(dim)
    cmax = np.empty(dim)
    llo = np.empty(dim)
    lhi = np.empty(dim)
    for flat in range(total):
        _unravel(flat, shape, idx)
        g = 0
        for a in range(dim):
            cell = lo[a] + idx[a]
            g = g * n_cells + cell
            cmin[a] = origin[a] + cell * h
            cmax[a] = cmin[a] + h
        if _box_ball_d2(cmin, cmax, p) > slack * slack:
            continue
        top = 0
        stack[top] = link[g]
        top += 1
        while top > 0:
            top -= 1
            node = stack[top]
            if color[node] < 0:
                # only parent-overlap cells link internal nodes; walk the subtree
                for k in range(children.shape[1]):
                    if top == len(stack):
                        stack = np.concatenate((stack, np.empty(len(stack), np.int64)))
                    stack[top] = children[node, k]
                    top += 1
                continue
            if color[node] != 1:
                continue
            for a in range(dim):
                half = sizes[node, a] / 2
                llo[a] = centers[node, a] - half
                lhi[a] = centers[node, a] + half
            if _box_ball_d2(llo, lhi, p) <= r2:
                if n_found == len(found):
                    found = np.concatenate((found, np.empty(len(found), np.int64)))
                found[n_found] = node
                n_found += 1
    return np.unique(found[:n_found])


@njit(cache=True)
def _pad3(v, fill):
    out = np.full(3, fill, v.dtype)
    out[: len(v)] = v
    return out


@njit(cache=True)
def virtual_centers(origin, c, lo, shape, p, r_sense, coords, depth, d_max, sensed, nb, r_occ):
    """Centers of free Black finest-depth cells within ``r_sense`` of ``p``.

    The window ``[lo, lo + shape)`` is in finest-cell indices. A cell is Black
    when its center lies in one of the ``sensed`` leaves (leaves align with the
    finest grid, so this is an index-range test) and free unless a neighbor
    is closer than ``r_occ`` to that center. 2D inputs run as one z-slice.
    """
    dim = len(p)
    o3 = _pad3(origin, 0.0)
    p3 = _pad3(p, 0.0)
    lo3 = _pad3(lo, 0)
    sh3 = _pad3(shape, 1)
    black = np.zeros((sh3[0], sh3[1], sh3[2]), np.bool_)

    b0 = np.zeros(3, np.int64)
    b1 = np.ones(3, np.int64)
    for node in sensed:
        shift = d_max - depth[node]
        for a in range(dim):
            b0[a] = max(coords[node, a] << shift, lo3[a]) - lo3[a]
            b1[a] = min((coords[node, a] + 1) << shift, lo3[a] + sh3[a]) - lo3[a]
        black[b0[0] : b1[0], b0[1] : b1[1], b0[2] : b1[2]] = True

    ro2 = r_occ * r_occ
    q = np.zeros(3)
    for m in range(nb.shape[0]):
        for a in range(dim):
            q[a] = nb[m, a]
            b0[a] = max(int(np.floor((q[a] - r_occ - o3[a]) / c - 0.5)), lo3[a]) - lo3[a]
            b1[a] = min(int(np.ceil((q[a] + r_occ - o3[a]) / c - 0.5)) + 1, lo3[a] + sh3[a]) - lo3[a]
        for i in range(b0[0], b1[0]):
            dx = o3[0] + (lo3[0] + i + 0.5) * c - q[0]
            for j in range(b0[1], b1[1]):
                dy = o3[1] + (lo3[1] + j + 0.5) * c - q[1]
                for k in range(b0[2], b1[2]):
                    dz = o3[2] + (lo3[2] + k + 0.5) * c - q[2] if dim == 3 else 0.0
                    if dx * dx + dy * dy + dz * dz < ro2:
                        black[i, j, k] = False

    out = np.empty((black.size, dim))
    n_out = 0
    rs2 = r_sense * r_sense
    for i in range(sh3[0]):
        x = o3[0] + (lo3[0] + i + 0.5) * c
        for j in range(sh3[1]):
            y = o3[1] + (lo3[1] + j + 0.5) * c
            for k in range(sh3[2]):
                if not black[i, j, k]:
                    continue
                z = o3[2] + (lo3[2] + k + 0.5) * c if dim == 3 else 0.0
                if (x - p3[0]) ** 2 + (y - p3[1]) ** 2 + (z - p3[2]) ** 2 <= rs2:
                    out[n_out, 0] = x
                    out[n_out, 1] = y
                    if dim == 3:
                        out[n_out, 2] = z
                    n_out += 1
    return out[:n_out].copy()


@njit(cache=True)
def _dist2(centers, node, p):
    d2 = 0.0
    for a in range(len(p)):
        d2 += (centers[node, a] - p[a]) ** 2
    return d2


@njit(cache=True)
def tree_search(children, color, beta, centers, start, by_beta, p):
    """Descend from ``start`` to a leaf.

    With ``by_beta`` follow the most attractive child, otherwise the nearest
    child with any Black content. Ties: nearer center, then lower index.
    """
    node = start
    while color[node] < 0:
        best = -1
        best_b = -1.0
        best_d = np.inf
        for k in range(children.shape[1]):
            ch = children[node, k]
            b = beta[ch]
            if b <= 0 and not by_beta:
                continue
            d2 = _dist2(centers, ch, p)
            if by_beta:
                if b > best_b or (b == best_b and d2 < best_d):
                    best, best_b, best_d = ch, b, d2
            elif d2 < best_d:
                best, best_d = ch, d2
        node = best
    return node


@njit(cache=True)
def avoid(d, inv_scale, r_avoid, kappa2, eps):
    """Summed repulsion over displacements ``d[m] = p_i - p_m``."""
    dim = d.shape[1]
    out = np.zeros(dim)
    for m in range(d.shape[0]):
        s2 = 0.0
        for a in range(dim):
            s2 += (d[m, a] * inv_scale[a]) ** 2
        s = max(np.sqrt(s2) / r_avoid, eps)
        if s <= 1.0:
            w = kappa2 * (1.0 / s - 1.0)
            for a in range(dim):
                out[a] += w * d[m, a]
    return out


@njit(cache=True)
def eta(centers, sizes, ids, p):
    best = np.inf
    for node in ids:
        m = 0.0
        for a in range(len(p)):
            m = max(m, abs(2.0 * (centers[node, a] - p[a]) / sizes[node, a]))
        best = min(best, m)
    return best


@njit(cache=True)
def virtual_pull(origin, c, n, p, r_sense, coords, depth, d_max, sensed, nb, r_occ, kappa1, eps):
    """Forming velocity over free Black virtual cells with raised-cosine weights."""
    dim = len(p)
    out = np.zeros(dim)
    reach = int(np.ceil(r_sense / c))
    lo = np.empty(dim, np.int64)
    shape = np.empty(dim, np.int64)
    for a in range(dim):
        q = int(np.floor((p[a] - origin[a]) / c))
        first = max(q - reach, 0)
        last = min(q + reach + 1, n)
        if last <= first:
            return out
        lo[a] = first
        shape[a] = last - first
    ctrs = virtual_centers(origin, c, lo, shape, p, r_sense, coords, depth, d_max, sensed, nb, r_occ)
    total = 0.0
    for m in range(ctrs.shape[0]):
        d2 = 0.0
        for a in range(dim):
            d2 += (ctrs[m, a] - p[a]) ** 2
        x = np.sqrt(d2) / r_sense
        w = 1.0 if x <= 0 else (0.0 if x >= 1 else 0.5 * (1.0 + np.cos(np.pi * x)))
        total += w
        for a in range(dim):
            out[a] += w * (ctrs[m, a] - p[a])
    if total <= eps:
        return np.zeros(dim)
    for a in range(dim):
        out[a] *= kappa1 / total
    return out
