"""Single-box interpolation harnesses.

Sources lie on the sphere inscribed in one box.  The radial harness
interpolates potentials in ``s`` only, along the ray ``theta = phi = 0``,
over the radial interval closest to the box; angular interpolation is
identical for every factorization and is left out there.  The segment
harness interpolates the W1 sum in all three cone coordinates.
"""

import math

import numpy as np

from ..chebyshev import cheb_coeffs_1d, cheb_coeffs_nd, cheb_eval_many, cheb_nodes
from ..kernels import ETA, BoxFrame, analytic_factor, centered_factor, dlayer_kernel, green
from .cones import segment_domain


def radial_intervals(side_over_lambda, threshold=0.5):
    """Radial interval count: one up to ``threshold`` wavelengths, doubling with the box size beyond."""
    if side_over_lambda <= threshold:
        return 1
    return 2 ** math.ceil(math.log2(side_over_lambda / threshold) - 1e-9)


def _sources(n, frame, rng):
    # points on the sphere inscribed in the box, outward normals
    v = rng.standard_normal((n, 3))
    v /= np.linalg.norm(v, axis=1)[:, None]
    return frame.center + 0.5 * frame.side * v, v


def single_box_radial_error(side_over_lambda, kernel="DL", n_sources=200, n_targets=200, p_s=3, n_s=None,
                            seed=0):
    """Maximum absolute error of radially interpolated potentials.

    Parameters
    ----------
    side_over_lambda : float
        Box side ``H`` in wavelengths (the wavelength is fixed at 1).
    kernel : {"SL", "DL", "DL4"}
        ``SL`` interpolates W1, ``DL`` interpolates W2 and W3 separately,
        ``DL4`` interpolates the single factor W4.
    n_s : int, optional
        Number of radial intervals; defaults to :func:`radial_intervals`.

    Returns
    -------
    float
        Maximum over the targets of the absolute error.
    """
    rng = np.random.default_rng(seed)
    k = 2 * math.pi
    frame = BoxFrame(np.zeros(3), float(side_over_lambda))
    y, nu = _sources(n_sources, frame, rng)
    a = np.full(n_sources, 1.0 / n_sources)
    n_s = radial_intervals(side_over_lambda) if n_s is None else n_s
    s0, s1 = ETA - ETA / n_s, ETA
    nodes = s0 + 0.5 * (cheb_nodes(p_s) + 1) * (s1 - s0)
    st = np.linspace(s0, s1, n_targets + 1)[1:] if s0 == 0 else np.linspace(s0, s1, n_targets)
    tt = 2 * (st - s0) / (s1 - s0) - 1

    def interp(which):
        vals = np.array([np.sum(a * analytic_factor(which, s, 0.0, 0.0, y, frame, k, nu)) for s in nodes])
        return cheb_eval_many(cheb_coeffs_1d(vals), tt)

    x = np.outer(frame.radius / st, [0.0, 0.0, 1.0])
    if kernel == "SL":
        exact = np.array([np.sum(a * green(xi, y, k)) for xi in x])
        approx = centered_factor(1, st, frame, k) * interp(1)
    elif kernel == "DL":
        exact = np.array([np.sum(a * dlayer_kernel(xi, y, nu, k)) for xi in x])
        approx = centered_factor(2, st, frame, k) * interp(2) - 1j * k * centered_factor(3, st, frame, k) * interp(3)
    elif kernel == "DL4":
        exact = np.array([np.sum(a * dlayer_kernel(xi, y, nu, k)) for xi in x])
        approx = centered_factor(4, st, frame, k) * interp(4)
    else:
        raise ValueError("kernel must be 'SL', 'DL' or 'DL4'")
    return float(np.max(np.abs(approx - exact)))


def segment_interpolation_error(side_over_lambda, n_s, n_c, p_s=3, p_ang=5, n_sources=200, n_targets=20, seed=0):
    """Worst relative W1 interpolation error over the radial shell nearest the box.

    Every angular segment of the innermost-radius (largest ``s``) interval
    is interpolated from its Chebyshev node values and compared with the
    direct sum at ``n_targets`` random points; the error is relative to
    the largest exact value on the shell.
    """
    rng = np.random.default_rng(seed)
    k = 2 * math.pi
    frame = BoxFrame(np.zeros(3), float(side_over_lambda))
    y, _ = _sources(n_sources, frame, rng)
    a = np.exp(2j * math.pi * rng.random(n_sources)) / n_sources
    xs, xa = cheb_nodes(p_s), cheb_nodes(p_ang)

    def field(s, t, f):
        return analytic_factor(1, s[:, None], t[:, None], f[:, None], y, frame, k) @ a

    def to_seg(x, lo, hi):
        return lo + 0.5 * (x + 1) * (hi - lo)

    def unit(v, lo, hi):
        return 2 * (v - lo) / (hi - lo) - 1

    worst, scale = 0.0, 0.0
    for j in range(2 * n_c * n_c):
        flat = (n_s - 1) + n_s * j
        (s0, s1), (t0, t1), (f0, f1) = segment_domain(flat, n_s, n_c)
        F, T, S = np.meshgrid(to_seg(xa, f0, f1), to_seg(xa, t0, t1), to_seg(xs, s0, s1), indexing="ij")
        coeffs = cheb_coeffs_nd(field(S.ravel(), T.ravel(), F.ravel()).reshape(S.shape))
        st = rng.uniform(s0, s1, n_targets)
        tt = rng.uniform(t0, t1, n_targets)
        ft = rng.uniform(f0, f1, n_targets)
        ref = field(st, tt, ft)
        approx = cheb_eval_many(coeffs, np.column_stack([unit(ft, f0, f1), unit(tt, t0, t1), unit(st, s0, s1)]))
        worst = max(worst, float(np.max(np.abs(approx - ref))))
        scale = max(scale, float(np.max(np.abs(ref))))
    return worst / scale
