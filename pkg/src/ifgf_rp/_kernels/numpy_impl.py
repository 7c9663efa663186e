"""Vectorized pure-numpy kernels.

Same signatures and results (to rounding) as :mod:`.numba_impl`.  Work is
split into chunks so memory stays bounded on large problems.
"""

import math

import numpy as np

from ..chebyshev import cheb_vandermonde

INV_4PI = 1.0 / (4.0 * math.pi)
ETA = math.sqrt(3.0) / 3.0
TWO_PI = 2.0 * math.pi
COINCIDENT_TOL = 1e-14
CHUNK = 1 << 16


def _locate(d, h, ns, nc):
    """Vectorized segment location for offsets ``d`` of shape ``(M, 3)``."""
    dx, dy, dz = d[:, 0], d[:, 1], d[:, 2]
    r = np.sqrt(dx * dx + dy * dy + dz * dz)
    s = h / r
    ds = ETA / ns
    dang = math.pi / nc
    i_s = np.minimum((s / ds).astype(np.int64), ns - 1)
    theta = np.arccos(np.clip(dz / r, -1.0, 1.0))
    i_t = np.minimum((theta / dang).astype(np.int64), nc - 1)
    axis = (dx == 0.0) & (dy == 0.0)
    phi = np.arctan2(dy, dx)
    phi = np.where(phi < 0.0, phi + TWO_PI, phi)
    phi = np.where((phi >= TWO_PI) | axis, 0.0, phi)
    i_p = np.minimum((phi / dang).astype(np.int64), 2 * nc - 1)
    i_p = np.where(axis & (theta == math.pi), 2 * nc - 1, i_p)
    xs = 2.0 * (s - i_s * ds) / ds - 1.0
    xt = 2.0 * (theta - i_t * dang) / dang - 1.0
    xp = 2.0 * (phi - i_p * dang) / dang - 1.0
    flat = (i_p * nc + i_t) * ns + i_s
    return flat, xs, xt, xp, r, s


def _interp(coeffs, seg, ch, xs, xt, xp):
    pa = coeffs.shape[2]
    ps = coeffs.shape[4]
    Ts = cheb_vandermonde(xs, ps)
    Tt = cheb_vandermonde(xt, pa)
    Tp = cheb_vandermonde(xp, pa)
    c = coeffs[seg, ch]  # (M, pa, pa, ps)
    return np.einsum("mpts,mp,mt,ms->m", c, Tp, Tt, Ts)


def _kernel_sum(x, y, nu, a_s, a_d, k):
    # x: (M, 3) targets paired with y: (M, 3) sources
    d = x - y
    r2 = np.einsum("ij,ij->i", d, d)
    r = np.sqrt(r2)
    e = np.exp(1j * k * r) * (INV_4PI / r)
    dot = np.einsum("ij,ij->i", d, nu)
    return e * (a_s + a_d * (1.0 - 1j * k * r) * dot / r2)


def _expand_csr(ptr, idx, rows):
    """Pairs ``(row, idx[j])`` for every ``j`` in the CSR rows ``rows``."""
    counts = ptr[rows + 1] - ptr[rows]
    rep = np.repeat(rows, counts)
    starts = np.repeat(ptr[rows], counts)
    off = np.arange(counts.sum()) - np.repeat(np.cumsum(counts) - counts, counts)
    return rep, idx[starts + off]


def _box_pairs(t_start, s_start, ptr, idx):
    """All (target point, source point) index pairs through box neighbour lists."""
    nb = t_start.shape[0] - 1
    tb, sb = _expand_csr(ptr, idx, np.arange(nb))
    nt = t_start[tb + 1] - t_start[tb]
    nsrc = s_start[sb + 1] - s_start[sb]
    tot = nt * nsrc
    pair = np.repeat(np.arange(tb.size), tot)
    loc = np.arange(tot.sum()) - np.repeat(np.cumsum(tot) - tot, tot)
    ti = t_start[tb][pair] + loc // nsrc[pair]
    si = s_start[sb][pair] + loc % nsrc[pair]
    return ti, si


def direct_box_pairs(tgt, tgt_start, src, src_nrm, src_start, a_s, a_d, nbr_ptr, nbr_idx, k, same_set):
    out = np.zeros(tgt.shape[0], dtype=np.complex128)
    nb = tgt_start.shape[0] - 1
    # process in groups of target boxes to bound memory
    step = max(1, nb // max(1, (tgt.shape[0] * 30) // CHUNK + 1))
    for b0 in range(0, nb, step):
        b1 = min(nb, b0 + step)
        sub_start = tgt_start[b0:b1 + 1]
        ptr = nbr_ptr[b0:b1 + 1] - nbr_ptr[b0]
        idx = nbr_idx[nbr_ptr[b0]:nbr_ptr[b1]]
        ti, si = _box_pairs(sub_start, src_start, ptr, idx)
        if same_set:
            keep = ti != si
            ti, si = ti[keep], si[keep]
        vals = _kernel_sum(tgt[ti], src[si], src_nrm[si], a_s[si], a_d[si], k)
        out += np.bincount(ti, weights=vals.real, minlength=out.size)
        out += 1j * np.bincount(ti, weights=vals.imag, minlength=out.size)
    return out


def direct_all(tgt, src, src_nrm, a_s, a_d, k, same_set):
    nt = tgt.shape[0]
    ns = src.shape[0]
    out = np.zeros(nt, dtype=np.complex128)
    bad = 0
    rows = max(1, CHUNK // max(1, ns))
    for t0 in range(0, nt, rows):
        t1 = min(nt, t0 + rows)
        d = tgt[t0:t1, None, :] - src[None, :, :]
        r2 = np.einsum("ijk,ijk->ij", d, d)
        r = np.sqrt(r2)
        mask = r >= COINCIDENT_TOL
        if same_set:
            ii = np.arange(t0, t1)
            sel = ii < ns
            mask[np.nonzero(sel)[0], ii[sel]] = False
            r_self = np.ones_like(mask)
            r_self[np.nonzero(sel)[0], ii[sel]] = False
            bad += int(np.count_nonzero(~mask & r_self))
        else:
            bad += int(np.count_nonzero(~mask))
        r = np.where(mask, r, 1.0)
        r2 = np.where(mask, r2, 1.0)
        e = np.exp(1j * k * r) * (INV_4PI / r)
        dot = np.einsum("ijk,jk->ij", d, src_nrm)
        val = e * (a_s[None, :] + a_d[None, :] * (1.0 - 1j * k * r) * dot / r2)
        out[t0:t1] = np.where(mask, val, 0.0).sum(axis=1)
    return out, bad


def _point_box_pairs(box_start, ptr, idx):
    """(point index, other box) for every point of each box and every box in its list."""
    nb = box_start.shape[0] - 1
    b, ob = _expand_csr(ptr, idx, np.arange(nb))
    npts = box_start[b + 1] - box_start[b]
    pair = np.repeat(np.arange(b.size), npts)
    loc = np.arange(npts.sum()) - np.repeat(np.cumsum(npts) - npts, npts)
    return box_start[b][pair] + loc, ob[pair], b[pair]


def plan_mark_cousins(pts, box_start, box_center, cous_ptr, cous_idx, h, ns, nc, mark):
    # for box b, cousins' points; build (point, source box) pairs
    pt, sb, _ = _point_box_pairs(box_start, cous_ptr, cous_idx)
    smax = 0.0
    for c0 in range(0, pt.size, CHUNK):
        p = pt[c0:c0 + CHUNK]
        b = sb[c0:c0 + CHUNK]
        flat, _, _, _, _, s = _locate(pts[p] - box_center[b], h, ns, nc)
        mark[b, flat] = 1
        if s.size:
            smax = max(smax, float(s.max()))
    return smax


def _node_offsets(ns, nc, xs_n, xa_n):
    """Unit directions and ``s`` of all interpolation nodes, per flat segment index."""
    ps = xs_n.size
    pa = xa_n.size
    nflat = ns * nc * 2 * nc
    flat = np.arange(nflat)
    g_s = flat % ns
    g_t = (flat // ns) % nc
    g_p = flat // (ns * nc)
    ds = ETA / ns
    dang = math.pi / nc
    s = (g_s[:, None] + 0.5 * (xs_n[None, :] + 1.0)) * ds  # (nflat, ps)
    th = (g_t[:, None] + 0.5 * (xa_n[None, :] + 1.0)) * dang  # (nflat, pa)
    ph = (g_p[:, None] + 0.5 * (xa_n[None, :] + 1.0)) * dang
    st = np.sin(th)
    # layout (nflat, pa_phi, pa_theta, ps)
    e = np.empty((nflat, pa, pa, 3))
    e[..., 0] = np.cos(ph)[:, :, None] * st[:, None, :]
    e[..., 1] = np.sin(ph)[:, :, None] * st[:, None, :]
    e[..., 2] = np.broadcast_to(np.cos(th)[:, None, :], (nflat, pa, pa))
    e = np.broadcast_to(e[:, :, :, None, :], (nflat, pa, pa, ps, 3))
    s = np.broadcast_to(s[:, None, None, :], (nflat, pa, pa, ps))
    return e, s


def plan_mark_parent(pseg_ptr, pseg_flat, p_center, p_h, ns_p, nc_p, c_parent, c_center, c_h, ns_c, nc_c,
                     xs_n, xa_n, mark):
    e, s = _node_offsets(ns_p, nc_p, xs_n, xa_n)
    nn = s[0].size
    nbc = c_parent.shape[0]
    cb, psg = _expand_csr(pseg_ptr, np.arange(pseg_flat.size), c_parent)
    # cb indexes parent rows; map back to child boxes
    counts = pseg_ptr[c_parent + 1] - pseg_ptr[c_parent]
    child = np.repeat(np.arange(nbc), counts)
    smax = 0.0
    rows = max(1, CHUNK // nn)
    for c0 in range(0, child.size, rows):
        ch = child[c0:c0 + rows]
        sg = psg[c0:c0 + rows]
        fl = pseg_flat[sg]
        pb = c_parent[ch]
        r = p_h / s[fl].reshape(-1, nn)
        x = p_center[pb][:, None, :] + r[..., None] * e[fl].reshape(-1, nn, 3)
        d = (x - c_center[ch][:, None, :]).reshape(-1, 3)
        flat, _, _, _, _, sv = _locate(d, c_h, ns_c, nc_c)
        mark[np.repeat(ch, nn), flat] = 1
        if sv.size:
            smax = max(smax, float(sv.max()))
    return smax


def ifgf_fill(pts, nrm, a_s, a_d, box_start, box_center, seg_box, seg_flat, h, ns, nc, xs_n, xa_n, k, mode):
    ps = xs_n.size
    pa = xa_n.size
    nch = 1 if mode == 0 else 2
    nseg = seg_box.size
    vals = np.zeros((nseg, nch, pa, pa, ps), dtype=np.complex128)
    e_all, s_all = _node_offsets(ns, nc, xs_n, xa_n)
    nn = pa * pa * ps
    for sg in range(nseg):
        b = seg_box[sg]
        fl = seg_flat[sg]
        m = slice(box_start[b], box_start[b + 1])
        u = (pts[m] - box_center[b]) / h  # (P, 3)
        e = e_all[fl].reshape(nn, 3)
        s = s_all[fl].reshape(nn)
        w = e[:, None, :] - s[:, None, None] * u[None, :, :]
        nw = np.sqrt(np.einsum("ijk,ijk->ij", w, w))
        ph = h * (-2.0 * (e @ u.T) + s[:, None] * np.einsum("ij,ij->i", u, u)[None, :]) / (nw + 1.0)
        ex = np.exp(1j * k * ph)
        dot = np.einsum("ijk,jk->ij", w, nrm[m])
        f1 = ex / nw
        f3 = f1 * dot / nw
        f2 = f3 / nw
        if mode == 0:
            v0 = f1 @ a_s[m] + ((s / h)[:, None] * f2 - 1j * k * f3) @ a_d[m]
            vals[sg, 0] = v0.reshape(pa, pa, ps)
        else:
            vals[sg, 0] = (f1 @ a_s[m] - 1j * k * (f3 @ a_d[m])).reshape(pa, pa, ps)
            vals[sg, 1] = (f2 @ a_d[m]).reshape(pa, pa, ps)
    return vals


def ifgf_eval_cousins(pts, box_start, box_center, cous_ptr, cous_idx, seg_map, coeffs, h, ns, nc, k, out):
    nch = coeffs.shape[1]
    pt, sb, _ = _point_box_pairs(box_start, cous_ptr, cous_idx)
    smax = 0.0
    miss = 0
    acc = np.zeros(out.size, dtype=np.complex128)
    for c0 in range(0, pt.size, CHUNK):
        p = pt[c0:c0 + CHUNK]
        b = sb[c0:c0 + CHUNK]
        flat, xs, xt, xp, r, s = _locate(pts[p] - box_center[b], h, ns, nc)
        if s.size:
            smax = max(smax, float(s.max()))
        seg = seg_map[b, flat]
        ok = seg >= 0
        miss += int(np.count_nonzero(~ok))
        p, seg, xs, xt, xp, r = p[ok], seg[ok], xs[ok], xt[ok], xp[ok], r[ok]
        e = np.exp(1j * k * r) * (INV_4PI / r)
        v = e * _interp(coeffs, seg, 0, xs, xt, xp)
        if nch == 2:
            v += (e / r) * _interp(coeffs, seg, 1, xs, xt, xp)
        acc += np.bincount(p, weights=v.real, minlength=out.size)
        acc += 1j * np.bincount(p, weights=v.imag, minlength=out.size)
    out += acc
    return smax, miss


def ifgf_propagate(pseg_box, pseg_flat, p_center, p_h, ns_p, nc_p, nch_p, child_ptr, child_idx, c_center, c_h,
                   ns_c, nc_c, c_map, c_coeffs, xs_n, xa_n, k):
    ps = xs_n.size
    pa = xa_n.size
    nn = pa * pa * ps
    nseg = pseg_box.size
    nch_c = c_coeffs.shape[1]
    vals = np.zeros((nseg, nch_p, nn), dtype=np.complex128)
    e_all, s_all = _node_offsets(ns_p, nc_p, xs_n, xa_n)
    sg, cb = _expand_csr(child_ptr, child_idx, pseg_box)
    counts = child_ptr[pseg_box + 1] - child_ptr[pseg_box]
    sg = np.repeat(np.arange(nseg), counts)
    miss = 0
    rows = max(1, CHUNK // nn)
    for c0 in range(0, sg.size, rows):
        g = sg[c0:c0 + rows]
        c = cb[c0:c0 + rows]
        pb = pseg_box[g]
        fl = pseg_flat[g]
        e = e_all[fl].reshape(-1, nn, 3)
        rp = p_h / s_all[fl].reshape(-1, nn)
        x = p_center[pb][:, None, :] + rp[..., None] * e
        d = (x - c_center[c][:, None, :]).reshape(-1, 3)
        flat, xs, xt, xp, rc, _ = _locate(d, c_h, ns_c, nc_c)
        cc = np.repeat(c, nn)
        seg = c_map[cc, flat]
        ok = seg >= 0
        miss += int(np.count_nonzero(~ok))
        delta = (p_center[pb] - c_center[c])[:, None, :]
        diff = np.einsum("ijk,ijk->ij", delta, 2.0 * rp[..., None] * e + delta).reshape(-1)
        rpf = rp.reshape(-1)
        diff = diff / (rc + rpf)
        ratio = np.exp(1j * k * diff) * (rpf / rc)
        seg = np.where(ok, seg, 0)
        f0 = _interp(c_coeffs, seg, 0, xs, xt, xp)
        if nch_c == 1:
            v0 = ratio * f0
            v1 = None
        else:
            f1 = _interp(c_coeffs, seg, 1, xs, xt, xp)
            if nch_p == 2:
                v0 = ratio * f0
                v1 = ratio * (rpf / rc) * f1
            else:
                v0 = ratio * (f0 + f1 / rc)
                v1 = None
        v0 = np.where(ok, v0, 0.0).reshape(-1, nn)
        np.add.at(vals[:, 0, :], g, v0)
        if v1 is not None:
            np.add.at(vals[:, 1, :], g, np.where(ok, v1, 0.0).reshape(-1, nn))
    return vals.reshape(nseg, nch_p, pa, pa, ps), miss


def far_field_sum(dirs, pts, nrm, aw_phi, k, gamma):
    nd = dirs.shape[0]
    out = np.zeros(nd, dtype=np.complex128)
    rows = max(1, CHUNK // max(1, pts.shape[0]))
    for i0 in range(0, nd, rows):
        d = dirs[i0:i0 + rows]
        e = np.exp(-1j * k * (d @ pts.T))
        fac = -1j * (k * (d @ nrm.T) + gamma)
        out[i0:i0 + rows] = (e * fac) @ aw_phi
    return out * INV_4PI


# ----------------------------------------------------------------------------
# rectangular-polar quadrature
# ----------------------------------------------------------------------------

GOLDEN = 0.5 * (math.sqrt(5.0) - 1.0)


def _reduce(cpad, q, t, axis, nmax):
    # contract patch coefficients along one parameter at values t -> (P, 3, n)
    T = cheb_vandermonde(t, nmax)
    if axis == 1:  # fix v, keep u
        return np.einsum("pcij,pj->pci", cpad[q], T)
    return np.einsum("pcij,pi->pcj", cpad[q], T)


def _dist2(c1, t, x):
    T = cheb_vandermonde(t, c1.shape[2])
    y = np.einsum("pci,pi->pc", c1, T)
    d = x - y
    return np.einsum("pc,pc->p", d, d)


def _golden(c1, x, t0, f0, tol):
    n = t0.size
    a = np.full(n, -1.0)
    b = np.full(n, 1.0)
    t1 = b - GOLDEN * (b - a)
    t2 = a + GOLDEN * (b - a)
    f1 = _dist2(c1, t1, x)
    f2 = _dist2(c1, t2, x)
    while np.any(b - a > tol):
        act = b - a > tol
        left = act & (f1 <= f2)
        right = act & ~left
        nb_ = np.where(left, t2, b)
        na_ = np.where(right, t1, a)
        a, b = na_, nb_
        nt1 = np.where(left, b - GOLDEN * (b - a), np.where(right, t2, t1))
        nt2 = np.where(right, a + GOLDEN * (b - a), np.where(left, t1, t2))
        nf1 = np.where(right, f2, f1)
        nf2 = np.where(left, f1, f2)
        # only the freshly placed probe needs a function value
        fresh = np.where(left, nt1, nt2)
        ff = _dist2(c1, fresh, x)
        nf1 = np.where(left, ff, nf1)
        nf2 = np.where(right, ff, nf2)
        t1, t2, f1, f2 = nt1, nt2, nf1, nf2
    t = 0.5 * (a + b)
    f = _dist2(c1, t, x)
    for tc in (-1.0, 1.0):
        fc = _dist2(c1, np.full(n, tc), x)
        better = fc < f
        t = np.where(better, tc, t)
        f = np.where(better, fc, f)
    keep = f < f0
    return np.where(keep, t, t0), np.where(keep, f, f0)


def rp_closest(cpad, du, dv, pair_q, targets, uv0, tol, max_sweeps):
    uv = uv0.astype(float).copy()
    dist = np.empty(pair_q.size)
    DU, DV = cpad.shape[2], cpad.shape[3]
    for c0 in range(0, pair_q.size, CHUNK // 16):
        sl = slice(c0, c0 + CHUNK // 16)
        q = pair_q[sl]
        x = targets[sl]
        u = uv[sl, 0].copy()
        v = uv[sl, 1].copy()
        c1 = _reduce(cpad, q, v, 1, DV)
        f = _dist2(c1, u, x)
        active = np.ones(q.size, dtype=bool)
        for _ in range(max_sweeps):
            if not active.any():
                break
            idx = np.nonzero(active)[0]
            uo, vo = u[idx], v[idx]
            c1 = _reduce(cpad, q[idx], v[idx], 1, DV)
            un, fn = _golden(c1, x[idx], u[idx], f[idx], tol)
            c1 = _reduce(cpad, q[idx], un, 2, DU)
            vn, fn = _golden(c1, x[idx], v[idx], fn, tol)
            u[idx], v[idx], f[idx] = un, vn, fn
            active[idx] = (np.abs(un - uo) > tol) | (np.abs(vn - vo) > tol)
        uv[sl, 0] = u
        uv[sl, 1] = v
        dist[sl] = np.sqrt(f)
    return uv, dist


def _nu_map(t, d):
    a = (t - math.pi) / math.pi
    return (1.0 / d - 0.5) * (-a) ** 3 + a / d + 0.5


def _nu_map_deriv(t, d):
    a = (t - math.pi) / math.pi
    return (-(1.0 / d - 0.5) * 3.0 * a * a + 1.0 / d) / math.pi


def w_and_deriv(t, d):
    t = np.asarray(t, dtype=float)
    n1 = _nu_map(t, d)
    n2 = _nu_map(2.0 * math.pi - t, d)
    p1 = n1**d
    p2 = n2**d
    den = p1 + p2
    w = 2.0 * math.pi * p1 / den
    ok = (n1 > 0) & (n2 > 0)
    n1s = np.where(ok, n1, 1.0)
    n2s = np.where(ok, n2, 1.0)
    dn1 = _nu_map_deriv(t, d)
    dn2 = -_nu_map_deriv(2.0 * math.pi - t, d)
    dw = 2.0 * math.pi * d * (n1s ** (d - 1.0) * dn1 * p2 - p1 * n2s ** (d - 1.0) * dn2) / (den * den)
    return w, np.where(ok, dw, 0.0)


def graded_rule(alpha, tau, wts, d, offsets=False):
    """Nodes and weights clustered at each ``alpha``; arrays of shape ``(len(alpha), len(tau))``.

    With ``offsets=True`` the exact differences ``node - alpha`` are returned too.
    """
    alpha = np.asarray(alpha, dtype=float)[:, None]
    t = np.asarray(tau)[None, :]
    sg = np.sign(t)
    w_in, dw_in = w_and_deriv(math.pi * np.abs(t), d)
    w_hi, dw_hi = w_and_deriv(math.pi * np.abs(0.5 * (t - 1.0)), d)
    w_lo, dw_lo = w_and_deriv(math.pi * np.abs(0.5 * (t + 1.0)), d)
    off = np.where(alpha == 1.0, -(1.0 + alpha) / math.pi * w_hi,
                   np.where(alpha == -1.0, (1.0 - alpha) / math.pi * w_lo, (sg - alpha) / math.pi * w_in))
    dxi = np.where(alpha == 1.0, dw_hi, np.where(alpha == -1.0, dw_lo, (1.0 - alpha * sg) * dw_in))
    weights = dxi * np.asarray(wts)[None, :]
    if offsets:
        return alpha + off, off, weights
    return alpha + off, weights


def _cheb_divdiff(x, x0, n):
    # (T_i(x) - T_i(x0)) / (x - x0) for x of shape (P, M) and x0 of shape (P, 1)
    t0 = cheb_vandermonde(x0, n)
    out = np.zeros(x.shape + (n,))
    if n > 1:
        out[..., 1] = 1.0
    for i in range(1, n - 1):
        out[..., i + 1] = 2.0 * x * out[..., i] + 2.0 * t0[..., i] - out[..., i - 1]
    return out


def rp_beta(cpad, cupad, cvpad, du, dv, sign, nu_nodes, nv_nodes, pair_q, targets, uv, own, tau, wts, dexp, k):
    npairs = pair_q.size
    NU = int(nu_nodes.max())
    NV = int(nv_nodes.max())
    DU, DV = cpad.shape[2], cpad.shape[3]
    beta_s = np.zeros((npairs, NU, NV), dtype=np.complex128)
    beta_d = np.zeros((npairs, NU, NV), dtype=np.complex128)
    step = 256
    for c0 in range(0, npairs, step):
        sl = slice(c0, min(npairs, c0 + step))
        q = pair_q[sl]
        ub = uv[sl, 0][:, None]
        vb = uv[sl, 1][:, None]
        ug, uo, uw = graded_rule(uv[sl, 0], tau, wts, dexp, offsets=True)
        vg, vo, vw = graded_rule(uv[sl, 1], tau, wts, dexp, offsets=True)
        Tu = cheb_vandermonde(ug, DU)  # (P, nb, DU)
        Tv = cheb_vandermonde(vg, DV)
        Du = _cheb_divdiff(ug, ub, DU)
        Dv = _cheb_divdiff(vg, vb, DV)
        tub = cheb_vandermonde(ub[:, 0], DU)
        tvb = cheb_vandermonde(vb[:, 0], DV)
        C = cpad[q]
        ybar = np.einsum("pa,pcab,pb->pc", tub, C, tvb)
        res = np.where(own[sl, None], 0.0, targets[sl] - ybar)
        A = np.einsum("pia,pcab,pjb->pcij", Du, C, Tv, optimize=True) * uo[:, None, :, None]
        B = np.einsum("pa,pcab,pjb->pcj", tub, C, Dv, optimize=True) * vo[:, None, :]
        d = res[:, :, None, None] - (A + B[:, :, None, :])
        Yu = np.einsum("pia,pcab,pjb->pcij", Tu, cupad[q], Tv, optimize=True)
        Yv = np.einsum("pia,pcab,pjb->pcij", Tu, cvpad[q], Tv, optimize=True)
        nrm = sign[q][:, None, None, None] * np.cross(Yu, Yv, axis=1)
        jac = np.sqrt(np.sum(nrm * nrm, axis=1))
        r2 = np.sum(d * d, axis=1)
        r = np.sqrt(r2)
        ok = r >= COINCIDENT_TOL
        r = np.where(ok, r, 1.0)
        r2 = np.where(ok, r2, 1.0)
        wgt = uw[:, :, None] * vw[:, None, :]
        e = np.where(ok, np.exp(1j * k * r) * (INV_4PI / r) * wgt, 0.0)
        dot = np.sum(d * nrm, axis=1)
        gs = e * jac
        gd = e * (1.0 - 1j * k * r) * dot / r2
        Pu = cheb_vandermonde(ug, NU)
        Pv = cheb_vandermonde(vg, NV)
        bs = np.einsum("pin,pij,pjm->pnm", Pu, gs, Pv, optimize=True)
        bd = np.einsum("pin,pij,pjm->pnm", Pu, gd, Pv, optimize=True)
        # patches with fewer nodes than the padding keep zeros beyond their size
        mask = (np.arange(NU)[None, :, None] < nu_nodes[q][:, None, None]) & \
               (np.arange(NV)[None, None, :] < nv_nodes[q][:, None, None])
        beta_s[sl] = np.where(mask, bs, 0.0)
        beta_d[sl] = np.where(mask, bd, 0.0)
    return beta_s, beta_d


def max_pair_distance(pts):
    """Largest distance between two rows of ``pts`` (chunked, bounded memory)."""
    n = pts.shape[0]
    if n == 0:
        return 0.0
    best = 0.0
    step = max(1, CHUNK // max(n, 1) * 16)
    sq = np.sum(pts * pts, axis=1)
    for i0 in range(0, n, step):
        blk = pts[i0:i0 + step]
        d2 = sq[i0:i0 + step, None] + sq[None, :] - 2.0 * blk @ pts.T
        best = max(best, float(d2.max()))
    return math.sqrt(max(best, 0.0))
