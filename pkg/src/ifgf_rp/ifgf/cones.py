"""Cone-segment domains, interpolation nodes and relevance planning.

Around a box of radius ``h`` the exterior region ``r >= 3H/2`` is described
by ``(s, theta, phi)`` with ``s = h / r`` in ``(0, eta]``.  The cube
``[0, eta] x [0, pi] x [0, 2 pi]`` is split into ``n_s x n_C x 2 n_C``
half-open segments.  A segment's flat index is
``(i_phi * n_C + i_theta) * n_s + i_s``.
"""

from dataclasses import dataclass
import math
from typing import List

import numpy as np

from ..chebyshev import cheb_nodes
from .._kernels import impl
from .octree import Octree

ETA = math.sqrt(3.0) / 3.0
S_BOUND_TOL = 1e-12
STRATEGIES = ("W4", "W2W3", "hybrid")


class IFGFConsistencyError(RuntimeError):
    """An interpolation query fell outside the planned cone domains."""


@dataclass(frozen=True)
class ConeConfig:
    """Cone-segment counts and interpolation orders.

    ``refine_threshold`` is the box size in wavelengths above which the
    segment counts double on the next coarser level; ``hybrid_threshold``
    is the size below which the two-channel double-layer factorization
    is used by the ``hybrid`` strategy.
    """

    n_s0: int = 1
    n_c0: int = 2
    p_s: int = 3
    p_ang: int = 5
    refine_threshold: float = 0.25
    hybrid_threshold: float = 0.5

    def __post_init__(self):
        for name in ("n_s0", "n_c0", "p_s", "p_ang"):
            v = getattr(self, name)
            if int(v) != v or v < 1:
                raise ValueError(f"{name} must be a positive integer")
        if not self.refine_threshold > 0 or not self.hybrid_threshold >= 0:
            raise ValueError("thresholds must be positive")

    def level_counts(self, tree: Octree):
        """``{d: (n_s, n_C)}`` for every level ``d`` of the tree.

        Counts stay at their base values while ``H_d`` does not exceed
        ``refine_threshold`` wavelengths and double each time the box
        size doubles beyond it.
        """
        out = {}
        for d in range(1, tree.depth + 1):
            ratio = tree.side(d) / (self.refine_threshold * tree.wavelength)
            doublings = max(0, math.ceil(math.log2(ratio) - 1e-6)) if ratio > 0 else 0
            out[d] = (self.n_s0 * 2 ** doublings, self.n_c0 * 2 ** doublings)
        return out

    def channels(self, tree: Octree, d, strategy):
        """Number of factor channels carried at level ``d`` (1: W4, 2: W2 and W3)."""
        if strategy == "W4":
            return 1
        if strategy == "W2W3":
            return 2
        if strategy == "hybrid":
            return 2 if tree.side(d) < self.hybrid_threshold * tree.wavelength else 1
        raise ValueError(f"unknown strategy {strategy!r}; use one of {STRATEGIES}")


def segment_domain(flat, n_s, n_c):
    """``((s0, s1), (theta0, theta1), (phi0, phi1))`` of a flat segment index."""
    i_s = flat % n_s
    i_t = (flat // n_s) % n_c
    i_p = flat // (n_s * n_c)
    ds = ETA / n_s
    da = math.pi / n_c
    return (i_s * ds, (i_s + 1) * ds), (i_t * da, (i_t + 1) * da), (i_p * da, (i_p + 1) * da)


def locate_segment(s, theta, phi, n_s, n_c):
    """Flat segment index for cone coordinates (half-open intervals).

    ``s = eta`` belongs to the last radial interval, ``theta = pi`` to the
    last polar interval and ``phi = 2 pi`` to the last azimuthal one.
    """
    s = np.asarray(s, dtype=float)
    theta = np.asarray(theta, dtype=float)
    phi = np.asarray(phi, dtype=float)
    if np.any(s <= 0) or np.any(s > ETA + S_BOUND_TOL):
        raise ValueError("s outside (0, eta]")
    i_s = np.minimum((s / (ETA / n_s)).astype(np.int64), n_s - 1)
    i_t = np.minimum((theta / (math.pi / n_c)).astype(np.int64), n_c - 1)
    i_p = np.minimum((phi / (math.pi / n_c)).astype(np.int64), 2 * n_c - 1)
    return (i_p * n_c + i_t) * n_s + i_s


def interpolation_nodes(flat, n_s, n_c, p_s, p_ang):
    """Cone coordinates of the ``p_ang x p_ang x p_s`` nodes of a segment.

    Returned arrays have shape ``(p_ang, p_ang, p_s)`` ordered
    ``(phi, theta, s)``, matching the coefficient block layout.
    """
    (s0, s1), (t0, t1), (f0, f1) = segment_domain(flat, n_s, n_c)
    xs = cheb_nodes(p_s)
    xa = cheb_nodes(p_ang)
    s = s0 + 0.5 * (xs + 1.0) * (s1 - s0)
    t = t0 + 0.5 * (xa + 1.0) * (t1 - t0)
    f = f0 + 0.5 * (xa + 1.0) * (f1 - f0)
    F, T, S = np.meshgrid(f, t, s, indexing="ij")
    return S, T, F


@dataclass
class LevelCones:
    """Relevant segments of one level, grouped by box in Morton order."""

    d: int
    n_s: int
    n_c: int
    n_channels: int
    seg_map: np.ndarray  # (n_boxes, n_flat) -> segment index or -1
    seg_box: np.ndarray
    seg_flat: np.ndarray
    seg_ptr: np.ndarray  # (n_boxes + 1,)
    max_s: float = 0.0

    @property
    def n_flat(self):
        return self.n_s * self.n_c * 2 * self.n_c

    @property
    def n_segments(self):
        return self.seg_box.size

    def relevance(self):
        return self.seg_map >= 0


@dataclass
class ConeInterpolantStore:
    """Planned cone segments for levels 3..D (empty list when D < 3)."""

    config: ConeConfig
    strategy: str
    levels: List[LevelCones]
    first_level: int = 3

    def level(self, d) -> LevelCones:
        return self.levels[d - self.first_level]

    def has_level(self, d):
        return self.first_level <= d < self.first_level + len(self.levels)

    def dump(self, tree: Octree = None):
        """Text summary of per-level counts."""
        nn = self.config.p_s * self.config.p_ang ** 2
        lines = [f"strategy={self.strategy} P_s={self.config.p_s} P_ang={self.config.p_ang}"]
        for lc in self.levels:
            nb = tree.level(lc.d).n_boxes if tree is not None else lc.seg_map.shape[0]
            lines.append(
                f"level {lc.d}: boxes={nb} n_s={lc.n_s} n_C={lc.n_c} channels={lc.n_channels} "
                f"segments={lc.n_segments} interp_points={lc.n_segments * nn}")
        return "\n".join(lines)


def _finalize(d, n_s, n_c, nch, mark, max_s):
    nb = mark.shape[0]
    box, flat = np.nonzero(mark)
    seg_map = np.full(mark.shape, -1, dtype=np.int64)
    seg_map[box, flat] = np.arange(box.size)
    seg_ptr = np.concatenate(([0], np.cumsum(np.bincount(box, minlength=nb)))).astype(np.int64)
    return LevelCones(d=d, n_s=n_s, n_c=n_c, n_channels=nch, seg_map=seg_map, seg_box=box.astype(np.int64),
                      seg_flat=flat.astype(np.int64), seg_ptr=seg_ptr, max_s=max_s)


def plan_cones(tree: Octree, config: ConeConfig = ConeConfig(), strategy="W4") -> ConeInterpolantStore:
    """Mark relevant segments from level 3 down to the finest level.

    A segment is relevant when it contains a cousin surface point of its
    box or, below level 3, an interpolation node of a relevant segment of
    the parent box.
    """
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}; use one of {STRATEGIES}")
    counts = config.level_counts(tree)
    pts = np.ascontiguousarray(tree.sorted_points)
    xs = cheb_nodes(config.p_s)
    xa = cheb_nodes(config.p_ang)
    levels = []
    for d in range(3, tree.depth + 1):
        lv = tree.level(d)
        n_s, n_c = counts[d]
        nch = config.channels(tree, d, strategy)
        mark = np.zeros((lv.n_boxes, n_s * n_c * 2 * n_c), dtype=np.uint8)
        h = lv.radius
        smax = impl.plan_mark_cousins(pts, lv.start, lv.centers, lv.cous_ptr, lv.cous_idx, h, n_s, n_c, mark)
        if d > 3:
            pc = levels[-1]
            up = tree.level(d - 1)
            smax = max(smax, impl.plan_mark_parent(pc.seg_ptr, pc.seg_flat, up.centers, up.radius, pc.n_s, pc.n_c,
                                                   lv.parent, lv.centers, h, n_s, n_c, xs, xa, mark))
        if smax > ETA + S_BOUND_TOL:
            raise IFGFConsistencyError(f"level {d}: interpolation query at s={smax!r} exceeds sqrt(3)/3")
        levels.append(_finalize(d, n_s, n_c, nch, mark, float(smax)))
    return ConeInterpolantStore(config=config, strategy=strategy, levels=levels)
