"""Compiled kernels (numba).

Every public function here has a twin with the same signature and
semantics in :mod:`.numpy_impl`.  Loops are written in "pull" form: each
parallel iteration owns the output slots it writes, so results do not
depend on the thread count.
"""

import math

import numpy as np

from .._backend import njit, pnjit, prange

INV_4PI = 1.0 / (4.0 * math.pi)
ETA = math.sqrt(3.0) / 3.0
TWO_PI = 2.0 * math.pi
COINCIDENT_TOL = 1e-14


# ----------------------------------------------------------------------------
# small inline helpers
# ----------------------------------------------------------------------------

@njit(inline="always")
def _cheb_fill(x, out, n):
    out[0] = 1.0
    if n > 1:
        out[1] = x
    for i in range(2, n):
        out[i] = 2.0 * x * out[i - 1] - out[i - 2]


@njit(inline="always")
def _locate(dx, dy, dz, h, ns, nc):
    """Segment index and local [-1, 1] coordinates of a point relative to a box centre."""
    r = math.sqrt(dx * dx + dy * dy + dz * dz)
    s = h / r
    ds = ETA / ns
    dang = math.pi / nc
    i_s = int(s / ds)
    if i_s > ns - 1:
        i_s = ns - 1
    ct = dz / r
    if ct > 1.0:
        ct = 1.0
    elif ct < -1.0:
        ct = -1.0
    theta = math.acos(ct)
    i_t = int(theta / dang)
    if i_t > nc - 1:
        i_t = nc - 1
    if dx == 0.0 and dy == 0.0:
        phi = 0.0
        i_p = 2 * nc - 1 if theta == math.pi else 0
    else:
        phi = math.atan2(dy, dx)
        if phi < 0.0:
            phi += TWO_PI
        if phi >= TWO_PI:
            phi = 0.0
        i_p = int(phi / dang)
        if i_p > 2 * nc - 1:
            i_p = 2 * nc - 1
    xs = 2.0 * (s - i_s * ds) / ds - 1.0
    xt = 2.0 * (theta - i_t * dang) / dang - 1.0
    xp = 2.0 * (phi - i_p * dang) / dang - 1.0
    flat = (i_p * nc + i_t) * ns + i_s
    return flat, xs, xt, xp, r, s


@njit(inline="always")
def _interp(coeffs, seg, ch, Tp, Tt, Ts, pa, ps):
    acc = 0.0 + 0.0j
    for ip in range(pa):
        acc_t = 0.0 + 0.0j
        for it in range(pa):
            acc_s = 0.0 + 0.0j
            for is_ in range(ps):
                acc_s += coeffs[seg, ch, ip, it, is_] * Ts[is_]
            acc_t += acc_s * Tt[it]
        acc += acc_t * Tp[ip]
    return acc


# ----------------------------------------------------------------------------
# direct summation
# ----------------------------------------------------------------------------

@pnjit
def direct_box_pairs(tgt, tgt_start, src, src_nrm, src_start, a_s, a_d, nbr_ptr, nbr_idx, k, same_set):
    """Sum ``a_s Phi + a_d dPhi/dnu`` over source boxes listed per target box.

    Points are box-sorted; ``same_set`` skips the pair of a point with itself.
    """
    out = np.zeros(tgt.shape[0], dtype=np.complex128)
    nb = tgt_start.shape[0] - 1
    for b in prange(nb):
        for t in range(tgt_start[b], tgt_start[b + 1]):
            x0, x1, x2 = tgt[t, 0], tgt[t, 1], tgt[t, 2]
            acc = 0.0 + 0.0j
            for jj in range(nbr_ptr[b], nbr_ptr[b + 1]):
                sb = nbr_idx[jj]
                for m in range(src_start[sb], src_start[sb + 1]):
                    if same_set and m == t:
                        continue
                    d0 = x0 - src[m, 0]
                    d1 = x1 - src[m, 1]
                    d2 = x2 - src[m, 2]
                    r2 = d0 * d0 + d1 * d1 + d2 * d2
                    r = math.sqrt(r2)
                    e = complex(math.cos(k * r), math.sin(k * r)) * (INV_4PI / r)
                    dot = d0 * src_nrm[m, 0] + d1 * src_nrm[m, 1] + d2 * src_nrm[m, 2]
                    acc += e * (a_s[m] + a_d[m] * complex(1.0, -k * r) * dot / r2)
            out[t] = acc
    return out


@pnjit
def direct_all(tgt, src, src_nrm, a_s, a_d, k, same_set):
    """All-pairs sum; returns ``(values, n_coincident)``.

    Coincident pairs (other than ``m == t`` when ``same_set``) contribute
    nothing and are counted so the caller can raise.
    """
    nt = tgt.shape[0]
    ns = src.shape[0]
    out = np.zeros(nt, dtype=np.complex128)
    bad = np.zeros(nt, dtype=np.int64)
    for t in prange(nt):
        x0, x1, x2 = tgt[t, 0], tgt[t, 1], tgt[t, 2]
        acc = 0.0 + 0.0j
        for m in range(ns):
            if same_set and m == t:
                continue
            d0 = x0 - src[m, 0]
            d1 = x1 - src[m, 1]
            d2 = x2 - src[m, 2]
            r2 = d0 * d0 + d1 * d1 + d2 * d2
            r = math.sqrt(r2)
            if r < COINCIDENT_TOL:
                bad[t] += 1
                continue
            e = complex(math.cos(k * r), math.sin(k * r)) * (INV_4PI / r)
            dot = d0 * src_nrm[m, 0] + d1 * src_nrm[m, 1] + d2 * src_nrm[m, 2]
            acc += e * (a_s[m] + a_d[m] * complex(1.0, -k * r) * dot / r2)
        out[t] = acc
    return out, bad.sum()


# ----------------------------------------------------------------------------
# IFGF: planning
# ----------------------------------------------------------------------------

@pnjit
def plan_mark_cousins(pts, box_start, box_center, cous_ptr, cous_idx, h, ns, nc, mark):
    """Mark, for every box, the segments that contain a cousin surface point."""
    nb = box_start.shape[0] - 1
    smax = np.zeros(nb)
    for b in prange(nb):
        c0, c1, c2 = box_center[b, 0], box_center[b, 1], box_center[b, 2]
        sm = 0.0
        for jj in range(cous_ptr[b], cous_ptr[b + 1]):
            tb = cous_idx[jj]
            for t in range(box_start[tb], box_start[tb + 1]):
                flat, xs, xt, xp, r, s = _locate(pts[t, 0] - c0, pts[t, 1] - c1, pts[t, 2] - c2, h, ns, nc)
                mark[b, flat] = 1
                if s > sm:
                    sm = s
        smax[b] = sm
    return smax.max() if nb > 0 else 0.0


@njit(inline="always")
def _node_position(pcenter, ph, ns_p, nc_p, flat, xs_n, xa_n, i_s, i_t, i_p):
    ds = ETA / ns_p
    dang = math.pi / nc_p
    g_s = flat % ns_p
    rest = flat // ns_p
    g_t = rest % nc_p
    g_p = rest // nc_p
    s = (g_s + 0.5 * (xs_n[i_s] + 1.0)) * ds
    th = (g_t + 0.5 * (xa_n[i_t] + 1.0)) * dang
    ph_ = (g_p + 0.5 * (xa_n[i_p] + 1.0)) * dang
    r = ph / s
    st = math.sin(th)
    return (pcenter[0] + r * st * math.cos(ph_),
            pcenter[1] + r * st * math.sin(ph_),
            pcenter[2] + r * math.cos(th), r, math.cos(ph_) * st, math.sin(ph_) * st, math.cos(th))


@pnjit
def plan_mark_parent(pseg_ptr, pseg_flat, p_center, p_h, ns_p, nc_p, c_parent, c_center, c_h, ns_c, nc_c,
                     xs_n, xa_n, mark):
    """Mark child segments containing an interpolation node of a relevant parent segment."""
    nbc = c_parent.shape[0]
    ps = xs_n.shape[0]
    pa = xa_n.shape[0]
    smax = np.zeros(nbc)
    for b in prange(nbc):
        pb = c_parent[b]
        sm = 0.0
        for sg in range(pseg_ptr[pb], pseg_ptr[pb + 1]):
            flat_p = pseg_flat[sg]
            for i_p in range(pa):
                for i_t in range(pa):
                    for i_s in range(ps):
                        x0, x1, x2, _, _, _, _ = _node_position(p_center[pb], p_h, ns_p, nc_p, flat_p,
                                                                xs_n, xa_n, i_s, i_t, i_p)
                        flat, xs, xt, xp, r, s = _locate(x0 - c_center[b, 0], x1 - c_center[b, 1],
                                                         x2 - c_center[b, 2], c_h, ns_c, nc_c)
                        mark[b, flat] = 1
                        if s > sm:
                            sm = s
        smax[b] = sm
    return smax.max() if nbc > 0 else 0.0


# ----------------------------------------------------------------------------
# IFGF: level-D fill
# ----------------------------------------------------------------------------

@pnjit
def ifgf_fill(pts, nrm, a_s, a_d, box_start, box_center, seg_box, seg_flat, h, ns, nc, xs_n, xa_n, k, mode):
    """Analytic-factor sums at the interpolation nodes of every level-D segment.

    ``mode`` 0: one channel ``a_s W1 + a_d W4``; ``mode`` 1: two channels
    ``a_s W1 - ik a_d W3`` and ``a_d W2``.
    """
    nseg = seg_box.shape[0]
    ps = xs_n.shape[0]
    pa = xa_n.shape[0]
    nch = 1 if mode == 0 else 2
    vals = np.zeros((nseg, nch, pa, pa, ps), dtype=np.complex128)
    ds = ETA / ns
    dang = math.pi / nc
    for sg in prange(nseg):
        b = seg_box[sg]
        flat = seg_flat[sg]
        g_s = flat % ns
        rest = flat // ns
        g_t = rest % nc
        g_p = rest // nc
        c0, c1, c2 = box_center[b, 0], box_center[b, 1], box_center[b, 2]
        for i_p in range(pa):
            phi = (g_p + 0.5 * (xa_n[i_p] + 1.0)) * dang
            for i_t in range(pa):
                th = (g_t + 0.5 * (xa_n[i_t] + 1.0)) * dang
                st = math.sin(th)
                e0 = st * math.cos(phi)
                e1 = st * math.sin(phi)
                e2 = math.cos(th)
                for i_s in range(ps):
                    s = (g_s + 0.5 * (xs_n[i_s] + 1.0)) * ds
                    acc0 = 0.0 + 0.0j
                    acc1 = 0.0 + 0.0j
                    for m in range(box_start[b], box_start[b + 1]):
                        u0 = (pts[m, 0] - c0) / h
                        u1 = (pts[m, 1] - c1) / h
                        u2 = (pts[m, 2] - c2) / h
                        w0 = e0 - s * u0
                        w1 = e1 - s * u1
                        w2 = e2 - s * u2
                        nw = math.sqrt(w0 * w0 + w1 * w1 + w2 * w2)
                        ph = h * (-2.0 * (e0 * u0 + e1 * u1 + e2 * u2) + s * (u0 * u0 + u1 * u1 + u2 * u2)) / (nw + 1.0)
                        ex = complex(math.cos(k * ph), math.sin(k * ph))
                        dot = w0 * nrm[m, 0] + w1 * nrm[m, 1] + w2 * nrm[m, 2]
                        f1 = ex / nw
                        f3 = f1 * dot / nw
                        f2 = f3 / nw
                        if mode == 0:
                            acc0 += a_s[m] * f1 + a_d[m] * ((s / h) * f2 - 1j * k * f3)
                        else:
                            acc0 += a_s[m] * f1 - 1j * k * a_d[m] * f3
                            acc1 += a_d[m] * f2
                    vals[sg, 0, i_p, i_t, i_s] = acc0
                    if mode == 1:
                        vals[sg, 1, i_p, i_t, i_s] = acc1
    return vals


# ----------------------------------------------------------------------------
# IFGF: evaluation at cousin surface points
# ----------------------------------------------------------------------------

@pnjit
def ifgf_eval_cousins(pts, box_start, box_center, cous_ptr, cous_idx, seg_map, coeffs, h, ns, nc, k, out):
    """Add interpolated contributions of every cousin box to the points of each box.

    Returns ``(max_s, n_missing)``: the largest ``s`` queried and the number
    of queries landing in a segment that was never planned.
    """
    nb = box_start.shape[0] - 1
    nch = coeffs.shape[1]
    pa = coeffs.shape[2]
    ps = coeffs.shape[4]
    smax = np.zeros(nb)
    miss = np.zeros(nb, dtype=np.int64)
    for b in prange(nb):
        Ts = np.empty(ps)
        Tt = np.empty(pa)
        Tp = np.empty(pa)
        sm = 0.0
        for t in range(box_start[b], box_start[b + 1]):
            acc = 0.0 + 0.0j
            for jj in range(cous_ptr[b], cous_ptr[b + 1]):
                sb = cous_idx[jj]
                flat, xs, xt, xp, r, s = _locate(pts[t, 0] - box_center[sb, 0], pts[t, 1] - box_center[sb, 1],
                                                 pts[t, 2] - box_center[sb, 2], h, ns, nc)
                if s > sm:
                    sm = s
                seg = seg_map[sb, flat]
                if seg < 0:
                    miss[b] += 1
                    continue
                _cheb_fill(xs, Ts, ps)
                _cheb_fill(xt, Tt, pa)
                _cheb_fill(xp, Tp, pa)
                e = complex(math.cos(k * r), math.sin(k * r)) * (INV_4PI / r)
                acc += e * _interp(coeffs, seg, 0, Tp, Tt, Ts, pa, ps)
                if nch == 2:
                    acc += (e / r) * _interp(coeffs, seg, 1, Tp, Tt, Ts, pa, ps)
            out[t] += acc
        smax[b] = sm
    return (smax.max() if nb > 0 else 0.0), miss.sum()


# ----------------------------------------------------------------------------
# IFGF: child -> parent propagation
# ----------------------------------------------------------------------------

@pnjit
def ifgf_propagate(pseg_box, pseg_flat, p_center, p_h, ns_p, nc_p, nch_p, child_ptr, child_idx, c_center, c_h,
                   ns_c, nc_c, c_map, c_coeffs, xs_n, xa_n, k):
    """Values of the parent analytic-factor sums at the parent interpolation nodes.

    Each child's interpolant is evaluated at the node, multiplied by the
    child centred factor and divided by the parent centred factor.
    Returns ``(values, n_missing)``.
    """
    nseg = pseg_box.shape[0]
    ps = xs_n.shape[0]
    pa = xa_n.shape[0]
    nch_c = c_coeffs.shape[1]
    vals = np.zeros((nseg, nch_p, pa, pa, ps), dtype=np.complex128)
    miss = np.zeros(nseg, dtype=np.int64)
    for sg in prange(nseg):
        Ts = np.empty(ps)
        Tt = np.empty(pa)
        Tp = np.empty(pa)
        pb = pseg_box[sg]
        flat_p = pseg_flat[sg]
        for i_p in range(pa):
            for i_t in range(pa):
                for i_s in range(ps):
                    x0, x1, x2, rp, e0, e1, e2 = _node_position(p_center[pb], p_h, ns_p, nc_p, flat_p,
                                                                 xs_n, xa_n, i_s, i_t, i_p)
                    acc0 = 0.0 + 0.0j
                    acc1 = 0.0 + 0.0j
                    for jj in range(child_ptr[pb], child_ptr[pb + 1]):
                        cb = child_idx[jj]
                        flat, xs, xt, xp, rc, s = _locate(x0 - c_center[cb, 0], x1 - c_center[cb, 1],
                                                          x2 - c_center[cb, 2], c_h, ns_c, nc_c)
                        seg = c_map[cb, flat]
                        if seg < 0:
                            miss[sg] += 1
                            continue
                        _cheb_fill(xs, Ts, ps)
                        _cheb_fill(xt, Tt, pa)
                        _cheb_fill(xp, Tp, pa)
                        # r_c - r_p without cancellation: delta = y_p - y_c
                        d0 = p_center[pb, 0] - c_center[cb, 0]
                        d1 = p_center[pb, 1] - c_center[cb, 1]
                        d2 = p_center[pb, 2] - c_center[cb, 2]
                        diff = (d0 * (2.0 * rp * e0 + d0) + d1 * (2.0 * rp * e1 + d1) + d2 * (2.0 * rp * e2 + d2)) / (rc + rp)
                        ratio = complex(math.cos(k * diff), math.sin(k * diff)) * (rp / rc)
                        f0 = _interp(c_coeffs, seg, 0, Tp, Tt, Ts, pa, ps)
                        if nch_c == 1:
                            acc0 += ratio * f0
                        else:
                            f1 = _interp(c_coeffs, seg, 1, Tp, Tt, Ts, pa, ps)
                            if nch_p == 2:
                                acc0 += ratio * f0
                                acc1 += ratio * (rp / rc) * f1
                            else:
                                acc0 += ratio * (f0 + f1 / rc)
                    vals[sg, 0, i_p, i_t, i_s] = acc0
                    if nch_p == 2:
                        vals[sg, 1, i_p, i_t, i_s] = acc1
    return vals, miss.sum()


# ----------------------------------------------------------------------------
# far field
# ----------------------------------------------------------------------------

@pnjit
def far_field_sum(dirs, pts, nrm, aw_phi, k, gamma):
    """``(1/4pi) sum_m [-ik (xhat . nu_m) - i gamma] e^{-ik xhat . y_m} aw_phi[m]``."""
    nd = dirs.shape[0]
    n = pts.shape[0]
    out = np.zeros(nd, dtype=np.complex128)
    for i in prange(nd):
        d0, d1, d2 = dirs[i, 0], dirs[i, 1], dirs[i, 2]
        acc = 0.0 + 0.0j
        for m in range(n):
            ph = -k * (d0 * pts[m, 0] + d1 * pts[m, 1] + d2 * pts[m, 2])
            e = complex(math.cos(ph), math.sin(ph))
            dn = d0 * nrm[m, 0] + d1 * nrm[m, 1] + d2 * nrm[m, 2]
            acc += e * complex(0.0, -(k * dn + gamma)) * aw_phi[m]
        out[i] = acc * INV_4PI
    return out


# ----------------------------------------------------------------------------
# rectangular-polar quadrature
# ----------------------------------------------------------------------------

GOLDEN = 0.5 * (math.sqrt(5.0) - 1.0)


@njit
def _series_1d(c1, n, t, out):
    # out[c] = sum_i c1[c, i] T_i(t)
    for c in range(3):
        out[c] = 0.0
    b0 = 1.0
    b1 = t
    for i in range(n):
        if i == 0:
            ti = 1.0
        elif i == 1:
            ti = t
        else:
            ti = 2.0 * t * b1 - b0
            b0 = b1
            b1 = ti
        for c in range(3):
            out[c] += c1[c, i] * ti


@njit
def _dist2_1d(c1, n, t, x, buf):
    _series_1d(c1, n, t, buf)
    d0 = x[0] - buf[0]
    d1 = x[1] - buf[1]
    d2 = x[2] - buf[2]
    return d0 * d0 + d1 * d1 + d2 * d2


@njit
def _golden_1d(c1, n, x, t0, f0, tol, buf):
    a = -1.0
    b = 1.0
    t1 = b - GOLDEN * (b - a)
    t2 = a + GOLDEN * (b - a)
    f1 = _dist2_1d(c1, n, t1, x, buf)
    f2 = _dist2_1d(c1, n, t2, x, buf)
    while b - a > tol:
        if f1 <= f2:
            b = t2
            t2 = t1
            f2 = f1
            t1 = b - GOLDEN * (b - a)
            f1 = _dist2_1d(c1, n, t1, x, buf)
        else:
            a = t1
            t1 = t2
            f1 = f2
            t2 = a + GOLDEN * (b - a)
            f2 = _dist2_1d(c1, n, t2, x, buf)
    t = 0.5 * (a + b)
    f = _dist2_1d(c1, n, t, x, buf)
    for tc in (-1.0, 1.0):  # golden section never lands exactly on the ends
        fc = _dist2_1d(c1, n, tc, x, buf)
        if fc < f:
            t = tc
            f = fc
    if f < f0:
        return t, f
    return t0, f0


@pnjit
def rp_closest(cpad, du, dv, pair_q, targets, uv0, tol, max_sweeps):
    """Alternating golden-section minimization of ``|x - y^q(u, v)|``.

    A coordinate update is kept only when it lowers the distance, so the
    result is never worse than the starting node.
    """
    npairs = pair_q.shape[0]
    uv = uv0.copy()
    dist = np.empty(npairs)
    maxdeg = max(cpad.shape[2], cpad.shape[3])
    for p in prange(npairs):
        q = pair_q[p]
        nu_ = du[q]
        nv_ = dv[q]
        x = targets[p]
        c1 = np.empty((3, maxdeg))
        tv = np.empty(maxdeg)
        buf = np.empty(3)
        u = uv[p, 0]
        v = uv[p, 1]
        # initial objective
        _cheb_fill(v, tv, nv_)
        for c in range(3):
            for i in range(nu_):
                acc = 0.0
                for j in range(nv_):
                    acc += cpad[q, c, i, j] * tv[j]
                c1[c, i] = acc
        f = _dist2_1d(c1, nu_, u, x, buf)
        for sweep in range(max_sweeps):
            u_old = u
            v_old = v
            # u-sweep at fixed v (c1 already reduced along v)
            u, f = _golden_1d(c1, nu_, x, u, f, tol, buf)
            # v-sweep at fixed u
            _cheb_fill(u, tv, nu_)
            for c in range(3):
                for j in range(nv_):
                    acc = 0.0
                    for i in range(nu_):
                        acc += cpad[q, c, i, j] * tv[i]
                    c1[c, j] = acc
            v, f = _golden_1d(c1, nv_, x, v, f, tol, buf)
            _cheb_fill(v, tv, nv_)
            for c in range(3):
                for i in range(nu_):
                    acc = 0.0
                    for j in range(nv_):
                        acc += cpad[q, c, i, j] * tv[j]
                    c1[c, i] = acc
            if abs(u - u_old) <= tol and abs(v - v_old) <= tol:
                break
        uv[p, 0] = u
        uv[p, 1] = v
        dist[p] = math.sqrt(f)
    return uv, dist


@njit(inline="always")
def _nu_map(t, d):
    a = (t - math.pi) / math.pi
    return (1.0 / d - 0.5) * (-a) ** 3 + a / d + 0.5


@njit(inline="always")
def _nu_map_deriv(t, d):
    a = (t - math.pi) / math.pi
    return ((1.0 / d - 0.5) * 3.0 * a * a * (-1.0) + 1.0 / d) / math.pi


@njit
def _w_and_deriv(t, d):
    n1 = _nu_map(t, d)
    n2 = _nu_map(2.0 * math.pi - t, d)
    p1 = n1 ** d
    p2 = n2 ** d
    den = p1 + p2
    w = 2.0 * math.pi * p1 / den
    if n1 <= 0.0 or n2 <= 0.0:
        return w, 0.0
    dn1 = _nu_map_deriv(t, d)
    dn2 = -_nu_map_deriv(2.0 * math.pi - t, d)
    dw = 2.0 * math.pi * d * (n1 ** (d - 1.0) * dn1 * p2 - p1 * n2 ** (d - 1.0) * dn2) / (den * den)
    return w, dw


@njit
def _graded_rule(alpha, tau, wts, d, nodes, offs, weights):
    # offs = nodes - alpha, kept separately so near-target differences stay exact
    n = tau.shape[0]
    for i in range(n):
        t = tau[i]
        if alpha == 1.0:
            w, dw = _w_and_deriv(math.pi * abs(0.5 * (t - 1.0)), d)
            offs[i] = -(1.0 + alpha) / math.pi * w
            weights[i] = dw * wts[i]
        elif alpha == -1.0:
            w, dw = _w_and_deriv(math.pi * abs(0.5 * (t + 1.0)), d)
            offs[i] = (1.0 - alpha) / math.pi * w
            weights[i] = dw * wts[i]
        else:
            sg = 1.0 if t > 0 else (-1.0 if t < 0 else 0.0)
            w, dw = _w_and_deriv(math.pi * abs(t), d)
            offs[i] = (sg - alpha) / math.pi * w
            weights[i] = (1.0 - alpha * sg) * dw * wts[i]
        nodes[i] = alpha + offs[i]


@njit
def _cheb_divdiff(x, x0, n, t0, out):
    # out[i] = (T_i(x) - T_i(x0)) / (x - x0), from the three-term recurrence
    out[0] = 0.0
    if n > 1:
        out[1] = 1.0
    for i in range(1, n - 1):
        out[i + 1] = 2.0 * x * out[i] + 2.0 * t0[i] - out[i - 1]


@pnjit
def rp_beta(cpad, cupad, cvpad, du, dv, sign, nu_nodes, nv_nodes, pair_q, targets, uv, own, tau, wts, dexp, k):
    """Graded-rule moments ``beta[n, m]`` of the single and double layer kernels.

    Returns two complex arrays of shape ``(npairs, NU, NV)`` zero-padded to
    the largest node counts.  Source-to-target vectors are formed as
    ``(x - y(ubar, vbar)) - (y(u, v) - y(ubar, vbar))`` with the second
    difference expanded in divided differences, so they keep full relative
    accuracy as the graded nodes approach the target.  For pairs flagged
    ``own`` the target is the patch node at ``(ubar, vbar)`` itself and the
    first difference is taken as exactly zero.
    """
    npairs = pair_q.shape[0]
    nb = tau.shape[0]
    NU = nu_nodes.max()
    NV = nv_nodes.max()
    DU = cpad.shape[2]
    DV = cpad.shape[3]
    beta_s = np.zeros((npairs, NU, NV), dtype=np.complex128)
    beta_d = np.zeros((npairs, NU, NV), dtype=np.complex128)
    for p in prange(npairs):
        q = pair_q[p]
        du_q = du[q]
        dv_q = dv[q]
        ubar = uv[p, 0]
        vbar = uv[p, 1]
        ug = np.empty(nb)
        uo = np.empty(nb)
        uw = np.empty(nb)
        vg = np.empty(nb)
        vo = np.empty(nb)
        vw = np.empty(nb)
        _graded_rule(ubar, tau, wts, dexp, ug, uo, uw)
        _graded_rule(vbar, tau, wts, dexp, vg, vo, vw)
        tub = np.zeros(DU)
        tvb = np.zeros(DV)
        _cheb_fill(ubar, tub, du_q)
        _cheb_fill(vbar, tvb, dv_q)
        Tu = np.zeros((nb, DU))
        Tv = np.zeros((nb, DV))
        Du = np.zeros((nb, DU))
        Dv = np.zeros((nb, DV))
        tmp = np.empty(max(DU, DV, NU, NV))
        for i in range(nb):
            _cheb_fill(ug[i], tmp, du_q)
            Tu[i, :du_q] = tmp[:du_q]
            _cheb_divdiff(ug[i], ubar, du_q, tub, tmp)
            Du[i, :du_q] = tmp[:du_q]
            _cheb_fill(vg[i], tmp, dv_q)
            Tv[i, :dv_q] = tmp[:dv_q]
            _cheb_divdiff(vg[i], vbar, dv_q, tvb, tmp)
            Dv[i, :dv_q] = tmp[:dv_q]
        x = targets[p]
        res = np.empty(3)
        Yd = np.empty((3, nb, nb))
        Yu = np.empty((3, nb, nb))
        Yv = np.empty((3, nb, nb))
        TvT = np.ascontiguousarray(Tv.T)
        for c in range(3):
            C = cpad[q, c]
            res[c] = 0.0 if own[p] else x[c] - tub @ (C @ tvb)
            A = Du @ (C @ TvT)  # (nb, nb)
            B = Dv @ (tub @ C)  # (nb,)
            for i in range(nb):
                for j in range(nb):
                    Yd[c, i, j] = res[c] - (uo[i] * A[i, j] + vo[j] * B[j])
            Yu[c] = Tu @ (cupad[q, c] @ TvT)
            Yv[c] = Tu @ (cvpad[q, c] @ TvT)
        gs = np.zeros((nb, nb), dtype=np.complex128)
        gd = np.zeros((nb, nb), dtype=np.complex128)
        for i in range(nb):
            for j in range(nb):
                n0 = sign[q] * (Yu[1, i, j] * Yv[2, i, j] - Yu[2, i, j] * Yv[1, i, j])
                n1 = sign[q] * (Yu[2, i, j] * Yv[0, i, j] - Yu[0, i, j] * Yv[2, i, j])
                n2 = sign[q] * (Yu[0, i, j] * Yv[1, i, j] - Yu[1, i, j] * Yv[0, i, j])
                jac = math.sqrt(n0 * n0 + n1 * n1 + n2 * n2)
                d0 = Yd[0, i, j]
                d1 = Yd[1, i, j]
                d2 = Yd[2, i, j]
                r2 = d0 * d0 + d1 * d1 + d2 * d2
                r = math.sqrt(r2)
                if r < COINCIDENT_TOL:
                    continue
                wgt = uw[i] * vw[j]
                e = complex(math.cos(k * r), math.sin(k * r)) * (INV_4PI / r) * wgt
                # (n0, n1, n2) = jac * normal, so the double layer needs no extra jac
                dot = d0 * n0 + d1 * n1 + d2 * n2
                gs[i, j] = e * jac
                gd[i, j] = e * complex(1.0, -k * r) * dot / r2
        nu_q = nu_nodes[q]
        nv_q = nv_nodes[q]
        Pu = np.empty((nb, nu_q))
        Pv = np.empty((nb, nv_q))
        for i in range(nb):
            _cheb_fill(ug[i], tmp, nu_q)
            Pu[i, :] = tmp[:nu_q]
            _cheb_fill(vg[i], tmp, nv_q)
            Pv[i, :] = tmp[:nv_q]
        PuT = np.ascontiguousarray(Pu.T).astype(np.complex128)
        Pvc = Pv.astype(np.complex128)
        beta_s[p, :nu_q, :nv_q] = PuT @ (gs @ Pvc)
        beta_d[p, :nu_q, :nv_q] = PuT @ (gd @ Pvc)
    return beta_s, beta_d


# ----------------------------------------------------------------------------
# geometry helpers
# ----------------------------------------------------------------------------

@pnjit
def max_pair_distance(pts):
    """Largest distance between two rows of ``pts``."""
    n = pts.shape[0]
    best = np.zeros(n)
    for i in prange(n):
        m = 0.0
        for j in range(i + 1, n):
            dx = pts[i, 0] - pts[j, 0]
            dy = pts[i, 1] - pts[j, 1]
            dz = pts[i, 2] - pts[j, 2]
            d2 = dx * dx + dy * dy + dz * dz
            if d2 > m:
                m = d2
        best[i] = m
    return math.sqrt(best.max()) if n > 0 else 0.0
