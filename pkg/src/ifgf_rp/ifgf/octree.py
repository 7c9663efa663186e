"""Uniform-depth octree over a point cloud, storing only non-empty boxes.

Points are sorted once by their finest-level Morton key.  Because a coarse
key is a bit-prefix of the fine key, every box on every level then owns a
contiguous span of the sorted points.
"""

from dataclasses import dataclass, field
import math
from typing import List

import numpy as np

ROOT_PAD = 1e-9
MAX_DEPTH = 20


def _spread_bits(v):
    # insert two zero bits between each of the low 21 bits of v
    v = v.astype(np.uint64) & np.uint64(0x1FFFFF)
    v = (v | (v << np.uint64(32))) & np.uint64(0x1F00000000FFFF)
    v = (v | (v << np.uint64(16))) & np.uint64(0x1F0000FF0000FF)
    v = (v | (v << np.uint64(8))) & np.uint64(0x100F00F00F00F00F)
    v = (v | (v << np.uint64(4))) & np.uint64(0x10C30C30C30C30C3)
    v = (v | (v << np.uint64(2))) & np.uint64(0x1249249249249249)
    return v


def morton_key(coords):
    """Interleave integer box coordinates ``(M, 3)`` into Morton keys (x lowest)."""
    c = np.asarray(coords)
    key = _spread_bits(c[:, 0]) | (_spread_bits(c[:, 1]) << np.uint64(1)) | (_spread_bits(c[:, 2]) << np.uint64(2))
    return key.astype(np.int64)


@dataclass
class Level:
    """Relevant boxes of one level, in Morton order."""

    d: int
    side: float
    keys: np.ndarray
    coords: np.ndarray
    centers: np.ndarray
    start: np.ndarray  # (nb + 1,) spans into the sorted points
    parent: np.ndarray  # index into level d - 1 (-1 on level 1)
    child_ptr: np.ndarray = None
    child_idx: np.ndarray = None
    nbr_ptr: np.ndarray = None
    nbr_idx: np.ndarray = None
    cous_ptr: np.ndarray = None
    cous_idx: np.ndarray = None

    @property
    def n_boxes(self):
        return self.keys.size

    @property
    def radius(self):
        return 0.5 * math.sqrt(3.0) * self.side

    def neighbors(self, b):
        return self.nbr_idx[self.nbr_ptr[b]:self.nbr_ptr[b + 1]]

    def cousins(self, b):
        return self.cous_idx[self.cous_ptr[b]:self.cous_ptr[b + 1]]

    def children(self, b):
        return self.child_idx[self.child_ptr[b]:self.child_ptr[b + 1]]

    def points_of(self, b):
        return slice(self.start[b], self.start[b + 1])


@dataclass
class Octree:
    points: np.ndarray  # original order
    perm: np.ndarray  # sorted = points[perm]
    corner: np.ndarray
    root_side: float
    depth: int
    wavelength: float
    levels: List[Level] = field(default_factory=list)  # levels[d - 1] is level d

    @property
    def sorted_points(self):
        return self.points[self.perm]

    def level(self, d) -> Level:
        if not 1 <= d <= self.depth:
            raise IndexError(f"level {d} outside 1..{self.depth}")
        return self.levels[d - 1]

    def side(self, d):
        return self.root_side / 2 ** (d - 1)

    def to_sorted(self, values):
        return np.asarray(values)[self.perm]

    def from_sorted(self, values):
        out = np.empty_like(values)
        out[self.perm] = values
        return out

    def summary(self):
        lines = [f"octree depth={self.depth} root_side={self.root_side:.6g} wavelength={self.wavelength:.6g}"]
        for lv in self.levels:
            lines.append(f"level {lv.d}: side={lv.side:.6g} side/lambda={lv.side / self.wavelength:.4g} "
                         f"boxes={lv.n_boxes}")
        return "\n".join(lines)


def choose_depth(root_side, wavelength, target_in_lambda):
    """Smallest depth whose box side does not exceed ``target_in_lambda`` wavelengths."""
    target = target_in_lambda * wavelength * (1.0 + 1e-6)
    d = 1
    while root_side / 2 ** (d - 1) > target and d < MAX_DEPTH:
        d += 1
    return d


def build_octree(points, k, target_finest_side_in_lambda=0.5, depth=None) -> Octree:
    """Octree with finest boxes of side at most ``target_finest_side_in_lambda`` wavelengths.

    ``depth`` overrides the automatic choice.
    """
    pts = np.ascontiguousarray(np.asarray(points, dtype=float))
    if pts.ndim != 2 or pts.shape[1] != 3 or pts.shape[0] == 0:
        raise ValueError("need a non-empty (N, 3) point array")
    if not np.all(np.isfinite(pts)):
        raise ValueError("non-finite point coordinates")
    if not k > 0:
        raise ValueError("wavenumber must be positive")
    wavelength = 2.0 * math.pi / k
    lo = pts.min(axis=0)
    hi = pts.max(axis=0)
    extent = float((hi - lo).max())
    if extent == 0.0:
        extent = target_finest_side_in_lambda * wavelength
    side = extent * (1.0 + ROOT_PAD)
    corner = 0.5 * (lo + hi) - 0.5 * side
    if depth is None:
        depth = choose_depth(side, wavelength, target_finest_side_in_lambda)
    depth = int(depth)
    if not 1 <= depth <= MAX_DEPTH:
        raise ValueError(f"depth must lie in 1..{MAX_DEPTH}")

    nfine = 2 ** (depth - 1)
    hD = side / nfine
    ic = np.floor((pts - corner) / hD).astype(np.int64)
    np.clip(ic, 0, nfine - 1, out=ic)
    fkey = morton_key(ic)
    perm = np.argsort(fkey, kind="stable")
    fkey = fkey[perm]
    tree = Octree(points=pts, perm=perm, corner=corner, root_side=side, depth=depth, wavelength=wavelength)

    prev_keys = None
    for d in range(1, depth + 1):
        shift = 3 * (depth - d)
        lkey = fkey >> shift
        change = np.flatnonzero(np.diff(lkey)) + 1
        first = np.concatenate(([0], change))
        keys = lkey[first]
        start = np.concatenate((first, [pts.shape[0]])).astype(np.int64)
        coords = _decode(keys)
        H = side / 2 ** (d - 1)
        centers = corner + (coords + 0.5) * H
        if prev_keys is None:
            parent = np.full(keys.size, -1, dtype=np.int64)
        else:
            parent = np.searchsorted(prev_keys, keys >> 3).astype(np.int64)
        tree.levels.append(Level(d=d, side=H, keys=keys, coords=coords, centers=centers, start=start,
                                 parent=parent))
        prev_keys = keys
    for d in range(1, depth):
        lv = tree.levels[d - 1]
        child_parent = tree.levels[d].parent
        counts = np.bincount(child_parent, minlength=lv.n_boxes)
        lv.child_ptr = np.concatenate(([0], np.cumsum(counts))).astype(np.int64)
        lv.child_idx = np.arange(child_parent.size, dtype=np.int64)  # children are already grouped by parent
    last = tree.levels[-1]
    last.child_ptr = np.zeros(last.n_boxes + 1, dtype=np.int64)
    last.child_idx = np.zeros(0, dtype=np.int64)
    return tree


def _compact(v):
    v = v.astype(np.uint64) & np.uint64(0x1249249249249249)
    v = (v | (v >> np.uint64(2))) & np.uint64(0x10C30C30C30C30C3)
    v = (v | (v >> np.uint64(4))) & np.uint64(0x100F00F00F00F00F)
    v = (v | (v >> np.uint64(8))) & np.uint64(0x1F0000FF0000FF)
    v = (v | (v >> np.uint64(16))) & np.uint64(0x1F00000000FFFF)
    v = (v | (v >> np.uint64(32))) & np.uint64(0x1FFFFF)
    return v.astype(np.int64)


def _decode(keys):
    k = keys.astype(np.uint64)
    return np.stack([_compact(k), _compact(k >> np.uint64(1)), _compact(k >> np.uint64(2))], axis=1)


_OFFSETS = np.array([(i, j, l) for l in (-1, 0, 1) for j in (-1, 0, 1) for i in (-1, 0, 1)], dtype=np.int64)


def _lookup(lv: Level, coords):
    """Index of the box with integer coordinates ``coords`` or -1 if absent."""
    n = 2 ** (lv.d - 1)
    inside = np.all((coords >= 0) & (coords < n), axis=1)
    out = np.full(coords.shape[0], -1, dtype=np.int64)
    if inside.any():
        key = morton_key(coords[inside])
        pos = np.searchsorted(lv.keys, key)
        pos = np.minimum(pos, lv.n_boxes - 1)
        hit = lv.keys[pos] == key
        vals = np.where(hit, pos, -1)
        out[inside] = vals
    return out


def _expand(ptr, idx, rows):
    """For each position ``i`` of ``rows``, pairs ``(i, idx[j])`` over the CSR row ``rows[i]``."""
    counts = ptr[rows + 1] - ptr[rows]
    pos = np.repeat(np.arange(rows.size), counts)
    off = np.arange(pos.size) - np.repeat(np.cumsum(counts) - counts, counts)
    return pos, idx[np.repeat(ptr[rows], counts) + off]


def _to_csr(rows, cols, n):
    order = np.lexsort((cols, rows))
    rows, cols = rows[order], cols[order]
    ptr = np.concatenate(([0], np.cumsum(np.bincount(rows, minlength=n)))).astype(np.int64)
    return ptr, cols.astype(np.int64)


def compute_relations(tree: Octree) -> Octree:
    """Fill neighbour and cousin lists (CSR, sorted by box index) on every level."""
    for lv in tree.levels:
        nb = lv.n_boxes
        cand = (lv.coords[:, None, :] + _OFFSETS[None, :, :]).reshape(-1, 3)
        idx = _lookup(lv, cand)
        rows = np.repeat(np.arange(nb), _OFFSETS.shape[0])
        ok = idx >= 0
        lv.nbr_ptr, lv.nbr_idx = _to_csr(rows[ok], idx[ok], nb)
        if lv.d == 1:
            lv.cous_ptr = np.zeros(nb + 1, dtype=np.int64)
            lv.cous_idx = np.zeros(0, dtype=np.int64)
            continue
        up = tree.levels[lv.d - 2]
        # children of the parent's neighbours
        pn_rows, pnb = _expand(up.nbr_ptr, up.nbr_idx, lv.parent)
        c_rows, cand = _expand(up.child_ptr, up.child_idx, pnb)
        c_rows = pn_rows[c_rows]
        far = np.max(np.abs(lv.coords[cand] - lv.coords[c_rows]), axis=1) > 1
        lv.cous_ptr, lv.cous_idx = _to_csr(c_rows[far], cand[far], nb)
    return tree


def relation_counts(tree: Octree):
    """Per-level ``(boxes, neighbour pairs, cousin pairs)``."""
    return [(lv.n_boxes, lv.nbr_idx.size, lv.cous_idx.size) for lv in tree.levels]
