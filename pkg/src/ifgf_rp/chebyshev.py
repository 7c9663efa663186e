"""Chebyshev interpolation and Fejér quadrature primitives.

All grids use the Chebyshev-Gauss (first-kind) nodes
``x_k = cos((2k+1) pi / (2n))``, ordered decreasingly.  Coefficient tensors
are plain numpy arrays whose axis ``d`` has length equal to the number of
nodes used along dimension ``d``.
"""

from functools import lru_cache
from typing import NamedTuple

import numpy as np

OUT_OF_RANGE_TOL = 1e-12


class FejerRule(NamedTuple):
    nodes: np.ndarray
    weights: np.ndarray


def _check_count(n, name="n"):
    if int(n) != n or n < 1:
        raise ValueError(f"{name} must be a positive integer, got {n!r}")
    return int(n)


def cheb_nodes(n: int) -> np.ndarray:
    n = _check_count(n)
    k = np.arange(n)
    x = np.cos((2 * k + 1) * np.pi / (2 * n))
    if n % 2 == 1:
        x[n // 2] = 0.0  # exact midpoint instead of cos(pi/2) ~ 6e-17
    return x


def cheb_vandermonde(x, n: int) -> np.ndarray:
    """Matrix ``T[j, i] = T_i(x_j)`` for ``i < n`` via the three-term recurrence."""
    x = np.asarray(x, dtype=float)
    out = np.empty(x.shape + (n,))
    out[..., 0] = 1.0
    if n > 1:
        out[..., 1] = x
    for i in range(2, n):
        out[..., i] = 2.0 * x * out[..., i - 1] - out[..., i - 2]
    return out


@lru_cache(maxsize=None)
def _analysis_matrix(n: int) -> np.ndarray:
    # a = A @ u, from discrete orthogonality of T_i on the Gauss nodes
    t = cheb_vandermonde(cheb_nodes(n), n)  # (k, i)
    alpha = np.full(n, 2.0)
    alpha[0] = 1.0
    a = (alpha[:, None] / n) * t.T
    a.setflags(write=False)
    return a


def analysis_matrix(n: int) -> np.ndarray:
    """Read-only ``(n, n)`` matrix mapping nodal values to coefficients."""
    return _analysis_matrix(_check_count(n))


def cheb_coeffs_1d(samples) -> np.ndarray:
    u = np.asarray(samples)
    if u.ndim != 1 or u.size == 0:
        raise ValueError("samples must be a non-empty 1-D sequence")
    return analysis_matrix(u.size) @ u


def cheb_coeffs_2d(samples) -> np.ndarray:
    """Coefficients ``a[n, m]`` of a grid sampled at tensor Gauss nodes ``(u_i, v_j)``."""
    try:
        u = np.asarray(samples)
    except ValueError as exc:  # ragged nested lists
        raise ValueError("ragged sample grid") from exc
    if u.ndim != 2 or u.dtype == object or 0 in u.shape:
        raise ValueError("samples must be a rectangular, non-empty 2-D grid")
    au = analysis_matrix(u.shape[0])
    av = analysis_matrix(u.shape[1])
    return au @ u @ av.T


def cheb_coeffs_nd(samples) -> np.ndarray:
    """Tensor-product transform along every axis."""
    a = np.asarray(samples)
    for axis in range(a.ndim):
        a = np.moveaxis(np.tensordot(analysis_matrix(a.shape[axis]), a, axes=([1], [axis])), 0, axis)
    return a


def _clenshaw(c, x):
    # c: coefficients along axis 0, broadcast against x
    n = c.shape[0]
    b1 = np.zeros(np.broadcast_shapes(c.shape[1:], np.shape(x)), dtype=np.result_type(c, x))
    b2 = np.zeros_like(b1)
    for i in range(n - 1, 0, -1):
        b1, b2 = 2.0 * x * b1 - b2 + c[i], b1
    return x * b1 - b2 + c[0]


def cheb_eval(coeffs, point, tol: float = OUT_OF_RANGE_TOL):
    """Evaluate a tensor Chebyshev series at one point of ``[-1, 1]^dim``.

    ``point`` is a scalar for 1-D series or a sequence with one entry per
    coefficient axis.  Points may stray outside the cube by ``tol``;
    they are clipped before evaluation.
    """
    c = np.asarray(coeffs)
    p = np.atleast_1d(np.asarray(point, dtype=float))
    if p.shape != (c.ndim,):
        raise ValueError(f"point has {p.size} components for a {c.ndim}-D series")
    if np.any(np.abs(p) > 1.0 + tol):
        raise ValueError(f"point {p} outside [-1, 1]^{c.ndim}")
    p = np.clip(p, -1.0, 1.0)
    # contract the last axis first so each step sees a leading coefficient axis
    for d in range(c.ndim - 1, -1, -1):
        c = _clenshaw(np.moveaxis(c, d, 0), p[d])
    return c[()] if np.ndim(c) == 0 else c


def cheb_eval_many(coeffs, points, tol: float = OUT_OF_RANGE_TOL):
    """Vectorized evaluation at ``points`` of shape ``(M, dim)`` (or ``(M,)`` in 1-D)."""
    c = np.asarray(coeffs)
    p = np.asarray(points, dtype=float)
    if c.ndim == 1 and p.ndim == 1:
        p = p[:, None]
    if p.ndim != 2 or p.shape[1] != c.ndim:
        raise ValueError("points must have shape (M, dim)")
    if np.any(np.abs(p) > 1.0 + tol):
        raise ValueError("evaluation point outside [-1, 1]^dim")
    p = np.clip(p, -1.0, 1.0)
    out = c
    # build per-axis Vandermonde rows and contract: sum_i c[i, j, ...] T_i(x) T_j(y) ...
    vs = [cheb_vandermonde(p[:, d], c.shape[d]) for d in range(c.ndim)]
    out = np.einsum("mi,i...->m...", vs[0], c)
    for d in range(1, c.ndim):
        out = np.einsum("mi,mi...->m...", vs[d], out)
    return out


def cheb_deriv_coeffs(c, axis: int = 0) -> np.ndarray:
    """Coefficients of the derivative along ``axis`` (same length, last entry zero)."""
    c = np.moveaxis(np.asarray(c), axis, 0)
    n = c.shape[0]
    d = np.zeros_like(c)
    if n > 1:
        d[n - 2] = 2 * (n - 1) * c[n - 1]
        for i in range(n - 3, -1, -1):
            d[i] = d[i + 2] + 2 * (i + 1) * c[i + 1]
        d[0] = d[0] / 2
    return np.moveaxis(d, 0, axis)


@lru_cache(maxsize=None)
def _fejer(J: int) -> FejerRule:
    x = cheb_nodes(J)
    j = np.arange(J)
    ell = np.arange(1, J // 2 + 1)
    terms = np.cos(np.outer(2 * j + 1, ell) * np.pi / J) / (4.0 * ell**2 - 1.0)
    w = (2.0 / J) * (1.0 - 2.0 * terms.sum(axis=1))
    x.setflags(write=False)
    w.setflags(write=False)
    return FejerRule(x, w)


def fejer_rule(J: int) -> FejerRule:
    """Fejér's first rule on ``[-1, 1]``: nodes are ``cheb_nodes(J)``."""
    return _fejer(_check_count(J, "J"))
