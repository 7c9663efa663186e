"""Interpolated factored Green function evaluation of discrete layer sums.

For densities ``a_s``, ``a_d`` at the surface points ``y_m`` with normals
``nu_m`` the operator computes, at every surface point ``x_l``::

    sum_{m != l} a_s[m] Phi(x_l, y_m) + a_d[m] dPhi/dnu(x_l, y_m)

The far part (pairs that are not neighbours at the finest level) is
interpolated; the near part is summed directly.
"""

import math
import time

import numpy as np

from .._backend import set_workers
from .._kernels import impl
from ..chebyshev import analysis_matrix, cheb_nodes
from .cones import ConeConfig, ConeInterpolantStore, IFGFConsistencyError, plan_cones, ETA, S_BOUND_TOL
from .octree import Octree, build_octree, compute_relations

KERNELS = ("single", "double", "combined")


def values_to_coeffs(vals):
    """Chebyshev transform of node values ``(nseg, nch, P_ang, P_ang, P_s)`` along the last three axes."""
    if vals.shape[0] == 0:
        return vals.copy()
    aa = analysis_matrix(vals.shape[2])
    as_ = analysis_matrix(vals.shape[4])
    return np.einsum("ap,bt,cs,gxpts->gxabc", aa, aa, as_, vals, optimize=True)


class IFGFOperator:
    """Planned IFGF operator over a fixed point set.

    Parameters
    ----------
    points, normals : (N, 3) arrays
        Surface points and unit normals in caller order.
    k : float
        Wavenumber.
    config : ConeConfig, optional
    strategy : {"W4", "W2W3", "hybrid"}
        Factorization used for the double-layer part.
    finest_box_lambda : float
        Target side of the finest boxes in wavelengths.
    depth : int, optional
        Override the octree depth.
    """

    def __init__(self, points, normals, k, config: ConeConfig = None, strategy="W4", finest_box_lambda=0.5,
                 depth=None, workers=None):
        t0 = time.perf_counter()
        self.k = float(k)
        self.config = config or ConeConfig()
        self.strategy = strategy
        if workers is not None:
            set_workers(workers)
        self.tree: Octree = compute_relations(build_octree(points, k, finest_box_lambda, depth))
        perm = self.tree.perm
        self.pts = np.ascontiguousarray(self.tree.points[perm])
        self.nrm = np.ascontiguousarray(np.asarray(normals, dtype=float)[perm])
        if self.nrm.shape != self.pts.shape:
            raise ValueError("normals must match points in shape")
        self.store: ConeInterpolantStore = plan_cones(self.tree, self.config, strategy)
        self._xs = cheb_nodes(self.config.p_s)
        self._xa = cheb_nodes(self.config.p_ang)
        self.setup_time = time.perf_counter() - t0

    @property
    def n_points(self):
        return self.pts.shape[0]

    @property
    def depth(self):
        return self.tree.depth

    def _sorted(self, a):
        a = np.asarray(a)
        if a.shape != (self.n_points,):
            raise ValueError(f"density has shape {a.shape}, expected ({self.n_points},)")
        return np.ascontiguousarray(a[self.tree.perm].astype(np.complex128))

    # -- algorithm stages -------------------------------------------------

    def level_d_fill(self, a_s_sorted, a_d_sorted):
        """Coefficient blocks of every relevant finest-level segment."""
        D = self.tree.depth
        if not self.store.has_level(D):
            return None
        lv = self.tree.level(D)
        lc = self.store.level(D)
        mode = 0 if lc.n_channels == 1 else 1
        vals = impl.ifgf_fill(self.pts, self.nrm, a_s_sorted, a_d_sorted, lv.start, lv.centers, lc.seg_box,
                              lc.seg_flat, lv.radius, lc.n_s, lc.n_c, self._xs, self._xa, self.k, mode)
        return values_to_coeffs(vals)

    def propagate_and_evaluate(self, coeffs_finest, out=None):
        """Evaluate cousin interactions level by level while building parent interpolants."""
        out = np.zeros(self.n_points, dtype=np.complex128) if out is None else out
        if coeffs_finest is None:
            return out
        coeffs = coeffs_finest
        for d in range(self.tree.depth, 2, -1):
            lv = self.tree.level(d)
            lc = self.store.level(d)
            smax, miss = impl.ifgf_eval_cousins(self.pts, lv.start, lv.centers, lv.cous_ptr, lv.cous_idx,
                                                lc.seg_map, coeffs, lv.radius, lc.n_s, lc.n_c, self.k, out)
            self._check(d, smax, miss)
            if d == 3:
                break
            up = self.tree.level(d - 1)
            pc = self.store.level(d - 1)
            vals, miss = impl.ifgf_propagate(pc.seg_box, pc.seg_flat, up.centers, up.radius, pc.n_s, pc.n_c,
                                             pc.n_channels, up.child_ptr, up.child_idx, lv.centers, lv.radius,
                                             lc.n_s, lc.n_c, lc.seg_map, coeffs, self._xs, self._xa, self.k)
            self._check(d, 0.0, miss)
            coeffs = values_to_coeffs(vals)
        return out

    @staticmethod
    def _check(d, smax, miss):
        if smax > ETA + S_BOUND_TOL:
            raise IFGFConsistencyError(f"level {d}: query at s={smax!r} exceeds sqrt(3)/3")
        if miss:
            raise IFGFConsistencyError(f"level {d}: {miss} queries hit unplanned cone segments")

    # -- public sums ------------------------------------------------------

    def apply_far_sorted(self, a_s, a_d):
        return self.propagate_and_evaluate(self.level_d_fill(a_s, a_d))

    def apply_near_sorted(self, a_s, a_d):
        lv = self.tree.level(self.tree.depth)
        return impl.direct_box_pairs(self.pts, lv.start, self.pts, self.nrm, lv.start, a_s, a_d, lv.nbr_ptr,
                                     lv.nbr_idx, self.k, True)

    def apply(self, a_s=None, a_d=None, near=True):
        """Layer sums at all points (caller order); ``near=False`` drops the finest-level neighbour pairs."""
        zero = np.zeros(self.n_points, dtype=np.complex128)
        s = self._sorted(a_s) if a_s is not None else zero
        dd = self._sorted(a_d) if a_d is not None else zero
        out = self.apply_far_sorted(s, dd)
        if near:
            out += self.apply_near_sorted(s, dd)
        return self.tree.from_sorted(out)

    def dump(self):
        return self.tree.summary() + "\n" + self.store.dump(self.tree)


def ifgf_apply(op: IFGFOperator, a, kernel="single", gamma=None, near=False):
    """Far-field (non-neighbour) sum of one kernel applied to the point weights ``a``.

    ``kernel="combined"`` evaluates ``D - i gamma S`` in one pass.
    """
    if kernel == "single":
        return op.apply(a, None, near=near)
    if kernel == "double":
        return op.apply(None, a, near=near)
    if kernel == "combined":
        if gamma is None:
            raise ValueError("combined kernel needs gamma")
        return op.apply(-1j * gamma * np.asarray(a), a, near=near)
    raise ValueError(f"unknown kernel {kernel!r}; use one of {KERNELS}")


def brute_force(points, normals, a_s, a_d, k):
    """Direct all-pairs reference sum (self-pairs excluded)."""
    pts = np.ascontiguousarray(points, dtype=float)
    nrm = np.ascontiguousarray(normals, dtype=float)
    n = pts.shape[0]
    a_s = np.zeros(n, complex) if a_s is None else np.ascontiguousarray(a_s, dtype=complex)
    a_d = np.zeros(n, complex) if a_d is None else np.ascontiguousarray(a_d, dtype=complex)
    out, _ = impl.direct_all(pts, pts, nrm, a_s, a_d, float(k), True)
    return out


def interaction_counts(op: IFGFOperator):
    """Dense ``(N, N)`` count of how often each ordered pair is handled (small N only).

    Entry ``[l, m]`` counts finest-level neighbour handling plus one per level
    on which ``m``'s box is a cousin of ``l``'s box.
    """
    n = op.n_points
    if n > 5000:
        raise ValueError("interaction_counts is meant for small point sets")
    cnt = np.zeros((n, n), dtype=np.int64)
    tree = op.tree
    D = tree.depth
    lvD = tree.level(D)
    for b in range(lvD.n_boxes):
        tb = lvD.points_of(b)
        for nb_ in lvD.neighbors(b):
            cnt[tb, lvD.points_of(nb_)] += 1
    for d in range(3, D + 1):
        lv = tree.level(d)
        for b in range(lv.n_boxes):
            tb = lv.points_of(b)
            for c in lv.cousins(b):
                cnt[tb, lv.points_of(c)] += 1
    np.fill_diagonal(cnt, cnt.diagonal() - 1)  # the self pair is skipped by the neighbour sum
    p = tree.perm
    out = np.empty_like(cnt)
    out[np.ix_(p, p)] = cnt
    return out
