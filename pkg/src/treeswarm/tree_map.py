"""Binary shape images encoded as merged 2^dim-ary trees (quadtree / octree).

Nodes live in a flat arena in breadth-first order. Node 0 is the root.
Child ``k`` of a node sits at offset ``(k >> axis) & 1`` along each axis,
so child 0 is the min corner and child ``n_div - 1`` the max corner.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

WHITE = 0
BLACK = 1
INTERNAL = -1  # color value stored for non-leaf nodes

M_LINK = 4.0  # bytes per parent->child index
M_COLOR_TREE = 1.0 / 8.0  # one bit per leaf color
M_COLOR_GRID = 4.0  # float32 per full-grid cell


def child_offsets(dim: int) -> np.ndarray:
    """(n_div, dim) array of 0/1 offsets for each child index."""
    k = np.arange(2**dim)
    return np.stack([(k >> a) & 1 for a in range(dim)], axis=1)


def _is_pow2(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


@dataclass(frozen=True)
class BinaryImage:
    """Dense binary image; ``voxels`` is flat with x varying fastest."""

    dim: int
    side: int
    voxels: np.ndarray

    def __post_init__(self):
        if self.dim not in (2, 3):
            raise ValueError(f"dimension must be 2 or 3, got {self.dim}")
        if self.side < 2 or not _is_pow2(self.side):
            raise ValueError(f"side must be a power of two >= 2, got {self.side}")
        vox = np.asarray(self.voxels, dtype=np.uint8).ravel()
        if vox.size != self.side**self.dim:
            raise ValueError(f"expected {self.side ** self.dim} voxels, got {vox.size}")
        if vox.max(initial=0) > 1:
            raise ValueError("voxels must be 0 (white) or 1 (black)")
        object.__setattr__(self, "voxels", vox)

    @classmethod
    def from_grid(cls, grid: np.ndarray) -> "BinaryImage":
        """Build from an array indexed ``[x, y(, z)]``."""
        grid = np.asarray(grid)
        if len(set(grid.shape)) != 1:
            raise ValueError(f"grid must be square/cubic, got shape {grid.shape}")
        # transposing to [z, y, x] makes a C-order ravel run x fastest
        return cls(grid.ndim, grid.shape[0], np.ascontiguousarray(grid.T).ravel())

    @property
    def grid(self) -> np.ndarray:
        """View indexed ``[x, y(, z)]``."""
        return self.voxels.reshape((self.side,) * self.dim).T

    @property
    def n_black(self) -> int:
        return int(self.voxels.sum())


@dataclass(frozen=True, eq=False)
class TreeMap:
    """Arena-backed tree. ``color`` is INTERNAL for non-leaves.

    ``coords`` holds each node's integer cell index at its own depth, which
    is all the geometry needed before embedding.
    """

    dim: int
    d_max: int
    parent: np.ndarray  # (N,) int32, -1 at root
    children: np.ndarray  # (N, n_div) int32, -1 rows for leaves
    color: np.ndarray  # (N,) int8
    depth: np.ndarray  # (N,) int8
    coords: np.ndarray  # (N, dim) int64

    @property
    def n_div(self) -> int:
        return 2**self.dim

    @property
    def n_nodes(self) -> int:
        return len(self.color)

    @property
    def is_leaf(self) -> np.ndarray:
        return self.color >= 0

    @property
    def n_leaf(self) -> int:
        return int(np.count_nonzero(self.color >= 0))

    @property
    def n_middle(self) -> int:
        # internal nodes other than the root
        return int(np.count_nonzero(self.color < 0)) - 1

    @property
    def max_depth(self) -> int:
        return int(self.depth.max())

    def leaves(self) -> np.ndarray:
        return np.flatnonzero(self.color >= 0)

    def black_leaves(self) -> np.ndarray:
        return np.flatnonzero(self.color == BLACK)

    def black_measure(self) -> int:
        """Black content in units of depth-d_max cells."""
        black = self.color == BLACK
        return int(np.sum(2 ** (self.dim * (self.d_max - self.depth[black].astype(np.int64)))))

    @cached_property
    def descent_table(self) -> np.ndarray:
        """Like ``children`` but leaves point to themselves, so a fixed
        ``d_max``-step walk from the root always ends on a leaf."""
        table = self.children.astype(np.int64)
        leaf = self.color >= 0
        table[leaf] = np.flatnonzero(leaf)[:, None]
        return table

    def leaves_of_cells(self, cells: np.ndarray) -> np.ndarray:
        """Leaf containing each depth-``d_max`` cell index in ``cells`` (M, dim)."""
        cells = np.asarray(cells, dtype=np.int64)
        shifts = np.arange(self.d_max - 1, -1, -1)
        bits = (cells[:, None, :] >> shifts[None, :, None]) & 1
        k = bits @ (1 << np.arange(self.dim))
        node = np.zeros(len(cells), dtype=np.int64)
        table = self.descent_table
        for d in range(self.d_max):
            node = table[node, k[:, d]]
        return node

    def same_structure(self, other: "TreeMap") -> bool:
        return (
            self.dim == other.dim
            and self.d_max == other.d_max
            and np.array_equal(self.parent, other.parent)
            and np.array_equal(self.children, other.children)
            and np.array_equal(self.color, other.color)
            and np.array_equal(self.depth, other.depth)
            and np.array_equal(self.coords, other.coords)
        )


def _block_counts(image: BinaryImage, depth: int) -> np.ndarray:
    """Black pixel count of every depth-``depth`` block, indexed [x, y(, z)]."""
    n = 2**depth
    b = image.side // n
    shape = []
    for _ in range(image.dim):
        shape += [n, b]
    counts = image.grid.astype(np.int64).reshape(shape)
    return counts.sum(axis=tuple(range(1, 2 * image.dim, 2)))


def _pool2(counts: np.ndarray) -> np.ndarray:
    dim = counts.ndim
    n = counts.shape[0] // 2
    return counts.reshape([n, 2] * dim).sum(axis=tuple(range(1, 2 * dim, 2)))


def encode(image: BinaryImage, d_max: int) -> TreeMap:
    """Breadth-first encoding of ``image`` into an un-merged tree.

    Uniform nodes become leaves. Mixed nodes at ``d_max`` become Black only
    on a strict Black majority.
    """
    if image.dim not in (2, 3):
        raise ValueError(f"dimension must be 2 or 3, got {image.dim}")
    if d_max < 1:
        raise ValueError(f"d_max must be >= 1, got {d_max}")
    if not _is_pow2(image.side):
        raise ValueError(f"image side must be a power of two, got {image.side}")
    dim = image.dim
    n_div = 2**dim
    # below the pixel level every block is a single uniform pixel
    eff = min(d_max, int(math.log2(image.side)))

    counts = [None] * (eff + 1)
    counts[eff] = _block_counts(image, eff)
    for d in range(eff - 1, -1, -1):
        counts[d] = _pool2(counts[d + 1])

    offsets = child_offsets(dim)
    parents = [np.array([-1], dtype=np.int64)]
    colors = [np.array([INTERNAL], dtype=np.int8)]
    depths = [np.zeros(1, dtype=np.int8)]
    coords = [np.zeros((1, dim), dtype=np.int64)]
    child_rows = []  # (ids of internal nodes, (M, n_div) child ids) per level

    next_id = 1
    level_ids = np.array([0])
    level_coords = coords[0]
    level_colors = colors[0]
    for d in range(1, eff + 1):
        internal = level_colors == INTERNAL
        par_ids = level_ids[internal]
        if par_ids.size == 0:
            break
        par_coords = level_coords[internal]
        c = (2 * par_coords[:, None, :] + offsets[None]).reshape(-1, dim)
        cnt = counts[d][tuple(c.T)]
        total = (image.side >> d) ** dim
        col = np.full(len(c), INTERNAL, dtype=np.int8)
        col[cnt == 0] = WHITE
        col[cnt == total] = BLACK
        if d == d_max:
            mixed = col == INTERNAL
            col[mixed] = np.where(2 * cnt[mixed] > total, BLACK, WHITE)

        ids = np.arange(next_id, next_id + len(c))
        next_id += len(c)
        child_rows.append((par_ids, ids.reshape(-1, n_div)))
        parents.append(np.repeat(par_ids, n_div))
        colors.append(col)
        depths.append(np.full(len(c), d, dtype=np.int8))
        coords.append(c)
        level_ids, level_coords, level_colors = ids, c, col

    n = next_id
    children = np.full((n, n_div), -1, dtype=np.int32)
    for par_ids, rows in child_rows:
        children[par_ids] = rows
    return TreeMap(
        dim=dim,
        d_max=d_max,
        parent=np.concatenate(parents).astype(np.int32),
        children=children,
        color=np.concatenate(colors),
        depth=np.concatenate(depths),
        coords=np.concatenate(coords),
    )


def merge(tree: TreeMap) -> TreeMap:
    """Collapse every parent whose children are same-colored leaves.

    Runs deepest-first so collapses cascade upward in a single pass. The
    root always keeps its children.
    """
    color = tree.color.copy()
    children = tree.children.copy()
    removed = np.zeros(tree.n_nodes, dtype=bool)
    for d in range(tree.max_depth - 1, 0, -1):
        idx = np.flatnonzero((tree.depth == d) & (color == INTERNAL))
        if idx.size == 0:
            continue
        cc = color[children[idx]]
        white = np.all(cc == WHITE, axis=1)
        black = np.all(cc == BLACK, axis=1)
        hit = white | black
        if not hit.any():
            continue
        target = idx[hit]
        color[target] = np.where(black[hit], BLACK, WHITE)
        removed[children[target].ravel()] = True
        children[target] = -1

    keep = ~removed
    new_id = np.cumsum(keep) - 1
    parent = tree.parent[keep]
    parent = np.where(parent >= 0, new_id[np.maximum(parent, 0)], -1)
    ch = children[keep]
    ch = np.where(ch >= 0, new_id[np.maximum(ch, 0)], -1)
    return TreeMap(
        dim=tree.dim,
        d_max=tree.d_max,
        parent=parent.astype(np.int32),
        children=ch.astype(np.int32),
        color=color[keep],
        depth=tree.depth[keep],
        coords=tree.coords[keep],
    )


def memory_bytes(tree: TreeMap) -> float:
    """Tree-map memory model: root links, middle nodes, colored leaves."""
    n_div = tree.n_div
    return (
        n_div * M_LINK
        + tree.n_middle * (n_div + 1) * M_LINK
        + tree.n_leaf * (M_LINK + M_COLOR_TREE)
    )


def full_grid_bytes(side: int, dim: int) -> float:
    """Memory of a dense float32 grid with ``side**dim`` cells."""
    if side < 1:
        raise ValueError("side must be >= 1")
    return float(side**dim) * M_COLOR_GRID


def paint(tree: TreeMap, values: np.ndarray, depth: int) -> np.ndarray:
    """Dense depth-``depth`` grid holding ``values[leaf]`` of the leaf covering
    each cell; -1 where the cell lies under an internal node at ``depth``.

    ``values`` must be non-negative. Grid is indexed [x, y(, z)].
    """
    dim = tree.dim
    out = np.full((1,) * dim, -1, dtype=np.int64)
    leaf = tree.color >= 0
    for d in range(1, depth + 1):
        for a in range(dim):
            out = np.repeat(out, 2, axis=a)
        sel = np.flatnonzero(leaf & (tree.depth == d))
        if sel.size:
            out[tuple(tree.coords[sel].T)] = values[sel]
    # leaves shallower than `depth` were painted and upsampled; deeper ones
    # leave -1 where an internal node sits at `depth`
    return out


def rasterize(tree: TreeMap) -> BinaryImage:
    """Decode the leaves back into a dense image at 2**d_max per axis."""
    grid = paint(tree, tree.color.astype(np.int64), tree.d_max)
    return BinaryImage.from_grid(grid.astype(np.uint8))


def s_robot(dim: int, r_avoid: float, alpha: float = 0.0) -> float:
    """Space taken by one robot: a disk in 2D, a z-stretched ellipsoid in 3D."""
    r = r_avoid / 2.0
    if dim == 2:
        return math.pi * r * r
    return 4.0 / 3.0 * math.pi * r * r * ((1.0 + alpha) * r)


@dataclass(frozen=True, eq=False)
class EmbeddedMap:
    """A tree map placed in world coordinates.

    Every depth-``d_max`` cell is a ``c_pixel`` cube; the root box spans
    ``2**d_max`` of them per axis starting at ``origin``.
    """

    tree: TreeMap
    origin: np.ndarray
    c_pixel: float
    beta: np.ndarray
    n_robot: int = 0
    centers: np.ndarray = field(init=False, repr=False)
    sizes: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        t = self.tree
        origin = np.asarray(self.origin, dtype=float).reshape(t.dim)
        object.__setattr__(self, "origin", origin)
        cell = self.root_size / (2.0 ** t.depth.astype(float))
        object.__setattr__(self, "sizes", np.repeat(cell[:, None], t.dim, axis=1))
        object.__setattr__(self, "centers", origin + (t.coords + 0.5) * cell[:, None])

    @property
    def dim(self) -> int:
        return self.tree.dim

    @property
    def root_size(self) -> float:
        return (2**self.tree.d_max) * self.c_pixel

    @property
    def upper(self) -> np.ndarray:
        return self.origin + self.root_size

    def contains(self, p) -> bool:
        """Closed-box membership in the root box."""
        hi = self.root_size
        return all(0.0 <= x - o <= hi for x, o in zip(p, self._origin_list))

    @cached_property
    def _origin_list(self) -> list:
        return self.origin.tolist()

    @cached_property
    def lists(self) -> tuple[list, list, list, list]:
        """children, color, beta and centers as Python lists for scalar walks."""
        t = self.tree
        return t.children.tolist(), t.color.tolist(), self.beta.tolist(), self.centers.tolist()

    def box(self, node: int) -> tuple[np.ndarray, np.ndarray]:
        lo = self.centers[node] - self.sizes[node] / 2
        return lo, lo + self.sizes[node]


def attractions(tree: TreeMap) -> np.ndarray:
    """Per-node Black fraction: leaf color, parents average their children."""
    beta = np.where(tree.color >= 0, tree.color, 0).astype(float)
    for d in range(tree.max_depth - 1, -1, -1):
        idx = np.flatnonzero((tree.depth == d) & (tree.color < 0))
        if idx.size:
            beta[idx] = beta[tree.children[idx]].mean(axis=1)
    return beta


def embed(
    tree: TreeMap,
    n_robot: int,
    r_avoid: float,
    alpha: float = 0.0,
    origin=None,
) -> EmbeddedMap:
    """Size pixels so the Black region holds ``n_robot`` robot footprints.

    ``origin`` is the min corner of the root box; by default the root is
    centered on the world origin.
    """
    n_black = tree.black_measure()
    if n_black == 0:
        raise ValueError("tree has no black leaves")
    if n_robot < 1:
        raise ValueError("n_robot must be >= 1")
    sr = s_robot(tree.dim, r_avoid, alpha)
    c_pixel = (sr * n_robot / n_black) ** (1.0 / tree.dim)
    if origin is None:
        origin = np.full(tree.dim, -(2**tree.d_max) * c_pixel / 2.0)
    return EmbeddedMap(tree, origin, c_pixel, attractions(tree), n_robot)


def _finest_index(emap: EmbeddedMap, p: np.ndarray) -> np.ndarray:
    n = 2**emap.tree.d_max
    q = np.floor((p - emap.origin) / emap.c_pixel).astype(np.int64)
    # the max face belongs to the last cell
    return np.clip(q, 0, n - 1)


def locate_leaf(emap: EmbeddedMap, p) -> int | None:
    """Leaf whose half-open box contains ``p``; None outside the root box."""
    p = [float(x) for x in p]
    if not emap.contains(p):
        return None
    d_max = emap.tree.d_max
    last = 2**d_max - 1
    # the max face belongs to the last cell
    q = [min(max(math.floor((x - o) / emap.c_pixel), 0), last) for x, o in zip(p, emap._origin_list)]
    children, color = emap.lists[:2]
    node = 0
    shift = d_max
    while color[node] < 0:
        shift -= 1
        k = 0
        for a, qa in enumerate(q):
            k |= ((qa >> shift) & 1) << a
        node = children[node][k]
    return node


def locate_at_depth(emap: EmbeddedMap, p, d: int) -> tuple[int, ...] | None:
    """Grid index of the depth-``d`` cell containing ``p``, virtual or not."""
    if not 0 <= d <= emap.tree.d_max:
        raise ValueError(f"depth {d} outside [0, {emap.tree.d_max}]")
    p = np.asarray(p, dtype=float)
    if not emap.contains(p):
        return None
    q = _finest_index(emap, p) >> (emap.tree.d_max - d)
    return tuple(int(v) for v in q)
