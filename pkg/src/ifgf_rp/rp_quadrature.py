"""Rectangular-polar quadrature for the single- and double-layer operators.

Regular interactions use the tensor Fejér rule of each patch.  For targets
on or close to a patch the density is expanded in its Chebyshev series and
the kernel moments::

    beta[n, m] = int K(x, y(u, v)) T_n(u) T_m(v) J(u, v) du dv

are integrated with a graded rule clustered at the point of the patch
closest to the target.  The moments do not depend on the density and are
precomputed once per geometry and wavenumber.
"""

from dataclasses import dataclass, field
import hashlib
import io
import json
import math
import os

import numpy as np
from scipy import sparse
from scipy.spatial import cKDTree

from ._kernels import impl
from ._kernels.numpy_impl import graded_rule as _graded_rule_many, w_and_deriv
from .chebyshev import analysis_matrix, cheb_coeffs_2d, cheb_nodes, fejer_rule
from .geometry import Patch, SurfaceMesh, eval_patch
from .kernels import CoincidentPointError, FOUR_PI

CLOSEST_TOL = 1e-12
CLOSEST_MAX_SWEEPS = 50
CACHE_MAGIC = b"rpbeta v1\n"


class CacheFormatError(ValueError):
    """A precompute cache file is truncated, corrupt or of another version."""


@dataclass(frozen=True)
class CovParams:
    """Grading exponent ``d`` and per-direction size ``n_beta`` of the graded rule."""

    d: float = 4.0
    n_beta: int = 24

    def __post_init__(self):
        if not self.d >= 2:
            raise ValueError("grading exponent d must be >= 2")
        if int(self.n_beta) != self.n_beta or self.n_beta < 2:
            raise ValueError("n_beta must be an integer >= 2")


# ----------------------------------------------------------------------------
# change of variables
# ----------------------------------------------------------------------------

def cov_w(tau, d):
    """Smooth monotone map of ``[0, 2 pi]`` onto itself, flat to order ``d - 1`` at both ends."""
    t = np.asarray(tau, dtype=float)
    if np.any(t < 0) or np.any(t > 2 * math.pi):
        raise ValueError("tau must lie in [0, 2 pi]")
    w, _ = w_and_deriv(t, d)
    return w[()] if w.ndim == 0 else w


def cov_xi(alpha, tau, d):
    """Graded map of ``[-1, 1]`` onto itself clustering points at ``alpha``."""
    t = np.asarray(tau, dtype=float)
    if np.any(np.abs(t) > 1):
        raise ValueError("tau must lie in [-1, 1]")
    if not -1 <= alpha <= 1:
        raise ValueError("alpha must lie in [-1, 1]")
    nodes, _ = _graded_rule_many(np.array([alpha]), np.atleast_1d(t), np.ones(t.size), d)
    out = nodes[0]
    return out[0] if t.ndim == 0 else out


def graded_rule(alpha, cov: CovParams = CovParams()):
    """Nodes and weights on ``[-1, 1]`` from Fejér's rule composed with the graded map."""
    rule = fejer_rule(cov.n_beta)
    nodes, weights = _graded_rule_many(np.array([float(alpha)]), rule.nodes, rule.weights, cov.d)
    return nodes[0], weights[0]


# ----------------------------------------------------------------------------
# closest point
# ----------------------------------------------------------------------------

def _patch_tables(patches):
    du = np.array([p.coeffs.shape[1] for p in patches], dtype=np.int64)
    dv = np.array([p.coeffs.shape[2] for p in patches], dtype=np.int64)
    DU, DV = int(du.max()), int(dv.max())
    Q = len(patches)
    cpad = np.zeros((Q, 3, DU, DV))
    cupad = np.zeros_like(cpad)
    cvpad = np.zeros_like(cpad)
    for q, p in enumerate(patches):
        cu, cv = p.derivative_coeffs()
        cpad[q, :, :du[q], :dv[q]] = p.coeffs
        cupad[q, :, :du[q], :dv[q]] = cu
        cvpad[q, :, :du[q], :dv[q]] = cv
    sign = np.array([p.sign for p in patches], dtype=float)
    nu = np.array([p.nu for p in patches], dtype=np.int64)
    nv = np.array([p.nv for p in patches], dtype=np.int64)
    return cpad, cupad, cvpad, du, dv, sign, nu, nv


def closest_point(patch: Patch, x, tol=CLOSEST_TOL, max_sweeps=CLOSEST_MAX_SWEEPS, init=None):
    """Parameters ``(u, v)`` of the patch point nearest to ``x`` and the distance.

    The search starts at the nearest discretization node (or ``init``) and
    performs alternating golden-section sweeps in ``u`` and ``v``.
    """
    x = np.asarray(x, dtype=float).reshape(3)
    if init is None:
        su, sv = cheb_nodes(patch.nu), cheb_nodes(patch.nv)
        vv, uu = np.meshgrid(sv, su, indexing="ij")
        uu, vv = uu.ravel(), vv.ravel()
        nodes = eval_patch(patch, uu, vv)
        j = int(np.argmin(np.sum((nodes - x) ** 2, axis=1)))
        init = (uu[j], vv[j])
    cpad, _, _, du, dv, _, _, _ = _patch_tables([patch])
    uv, dist = impl.rp_closest(cpad, du, dv, np.zeros(1, dtype=np.int64), x[None, :],
                               np.array([init], dtype=float), float(tol), int(max_sweeps))
    return float(uv[0, 0]), float(uv[0, 1]), float(dist[0])


# ----------------------------------------------------------------------------
# classification
# ----------------------------------------------------------------------------

@dataclass
class ProximityMap:
    """Singular and near-singular (target, patch) pairs.

    Pairs are sorted by target then patch.  ``delta[q]`` is the proximity
    distance used for patch ``q``; ``uv`` holds the closest parameters and
    ``dist`` the closest-point residual distance.
    """

    delta: np.ndarray
    target: np.ndarray
    patch: np.ndarray
    uv: np.ndarray
    dist: np.ndarray

    @property
    def n_pairs(self):
        return self.target.size

    def targets_of(self, q):
        return self.target[self.patch == q]

    def pairs_set(self):
        return set(zip(self.target.tolist(), self.patch.tolist()))


def proximity_distance(mesh: SurfaceMesh, delta=None, delta_factor=1.0):
    """Per-patch ``delta``: an absolute value or ``delta_factor`` times the patch node spacing."""
    if delta is not None:
        if delta < 0:
            raise ValueError("delta must be non-negative")
        return np.full(mesh.n_patches, float(delta))
    if delta_factor < 0:
        raise ValueError("delta_factor must be non-negative")
    return delta_factor * mesh.patch_spacing()


def classify_targets(mesh: SurfaceMesh, delta=None, delta_factor=1.0, tol=CLOSEST_TOL,
                     max_sweeps=CLOSEST_MAX_SWEEPS) -> ProximityMap:
    """Find all surface nodes within ``delta`` of each patch.

    Candidates are nodes within ``delta + spacing`` of some node of the
    patch; their distance to the patch is then refined by the closest-point
    search.  Nodes of the patch itself are always included with distance 0.
    """
    dq = proximity_distance(mesh, delta, delta_factor)
    spacing = mesh.patch_spacing()
    pts = mesh.points
    kd = cKDTree(pts)
    tgt_l, q_l, uv_l, d_l = [], [], [], []
    cand_t, cand_q, cand_uv = [], [], []
    for q in range(mesh.n_patches):
        sl = mesh.patch_slice(q)
        own = np.arange(sl.start, sl.stop)
        tgt_l.append(own)
        q_l.append(np.full(own.size, q))
        uv_l.append(mesh.uv[sl])
        d_l.append(np.zeros(own.size))
        radius = dq[q] + spacing[q]
        hits = kd.query_ball_point(pts[sl], r=radius)
        near = np.unique(np.concatenate([np.asarray(h, dtype=np.int64) for h in hits]))
        near = near[(near < sl.start) | (near >= sl.stop)]
        if near.size == 0:
            continue
        d2 = np.sum((pts[near][:, None, :] - pts[sl][None, :, :]) ** 2, axis=2)
        j = np.argmin(d2, axis=1)
        cand_t.append(near)
        cand_q.append(np.full(near.size, q))
        cand_uv.append(mesh.uv[sl][j])
    if cand_t:
        ct = np.concatenate(cand_t)
        cq = np.concatenate(cand_q).astype(np.int64)
        cuv = np.vstack(cand_uv)
        cpad, _, _, du, dv, _, _, _ = _patch_tables(mesh.patches)
        uv, dist = impl.rp_closest(cpad, du, dv, cq, np.ascontiguousarray(pts[ct]), np.ascontiguousarray(cuv),
                                   float(tol), int(max_sweeps))
        keep = dist <= dq[cq]
        tgt_l.append(ct[keep])
        q_l.append(cq[keep])
        uv_l.append(uv[keep])
        d_l.append(dist[keep])
    target = np.concatenate(tgt_l).astype(np.int64)
    patch = np.concatenate(q_l).astype(np.int64)
    uv = np.vstack(uv_l)
    dist = np.concatenate(d_l)
    order = np.lexsort((patch, target))
    return ProximityMap(delta=dq, target=target[order], patch=patch[order], uv=uv[order], dist=dist[order])


# ----------------------------------------------------------------------------
# precompute
# ----------------------------------------------------------------------------

@dataclass
class SingularPrecompute:
    """Moments ``beta`` per proximity pair for the single and double layer kernels.

    Arrays have shape ``(n_pairs, NU, NV)``, zero-padded for patches with
    fewer nodes than the largest one.
    """

    proximity: ProximityMap
    cov: CovParams
    k: float
    beta_s: np.ndarray
    beta_d: np.ndarray
    geometry: str = ""
    timings: dict = field(default_factory=dict)

    @property
    def n_pairs(self):
        return self.proximity.n_pairs

    def key(self):
        return cache_key(self.geometry, self.k, self.cov, self.proximity.delta)

    def save(self, path):
        save_precompute(self, path)


def beta_precompute(mesh: SurfaceMesh, proximity: ProximityMap, cov: CovParams = CovParams(), k=0.0):
    """Graded-rule moments for every pair of ``proximity``."""
    cpad, cupad, cvpad, du, dv, sign, nu, nv = _patch_tables(mesh.patches)
    rule = fejer_rule(cov.n_beta)
    pm = proximity
    targets = np.ascontiguousarray(mesh.points[pm.target])
    bs, bd = impl.rp_beta(cpad, cupad, cvpad, du, dv, sign, nu, nv, pm.patch, targets, np.ascontiguousarray(pm.uv),
                          pm.dist == 0.0,
                          np.ascontiguousarray(rule.nodes), np.ascontiguousarray(rule.weights), float(cov.d), float(k))
    return SingularPrecompute(proximity=pm, cov=cov, k=float(k), beta_s=bs, beta_d=bd, geometry=mesh.fingerprint())


def patch_coefficients(mesh: SurfaceMesh, density):
    """Chebyshev coefficients ``a[q]`` of the density samples on every patch."""
    density = np.asarray(density)
    if density.shape != (mesh.n_nodes,):
        raise ValueError(f"density has shape {density.shape}, expected ({mesh.n_nodes},)")
    out = []
    for q, p in enumerate(mesh.patches):
        samples = density[mesh.patch_slice(q)].reshape(p.nv, p.nu).T
        out.append(cheb_coeffs_2d(samples))
    return out


def rp_singular_apply(pre: SingularPrecompute, mesh: SurfaceMesh, density, kernel="single"):
    """Sum over proximity pairs of ``sum_{n,m} a[n, m] beta[n, m]`` per target node."""
    if kernel not in ("single", "double"):
        raise ValueError("kernel must be 'single' or 'double'")
    coeffs = patch_coefficients(mesh, density)
    NU, NV = pre.beta_s.shape[1:]
    apad = np.zeros((mesh.n_patches, NU, NV), dtype=complex)
    for q, a in enumerate(coeffs):
        apad[q, :a.shape[0], :a.shape[1]] = a
    beta = pre.beta_s if kernel == "single" else pre.beta_d
    vals = np.einsum("pnm,pnm->p", beta, apad[pre.proximity.patch])
    out = np.zeros(mesh.n_nodes, dtype=complex)
    np.add.at(out, pre.proximity.target, vals)
    return out


def rp_regular_apply(mesh: SurfaceMesh, density, targets, kernel="single", k=0.0):
    """Tensor Fejér rule of every patch applied at arbitrary targets."""
    density = np.asarray(density, dtype=complex)
    if density.shape != (mesh.n_nodes,):
        raise ValueError(f"density has shape {density.shape}, expected ({mesh.n_nodes},)")
    if kernel not in ("single", "double"):
        raise ValueError("kernel must be 'single' or 'double'")
    aw = np.ascontiguousarray(density * mesh.area_weights)
    zero = np.zeros_like(aw)
    a_s, a_d = (aw, zero) if kernel == "single" else (zero, aw)
    x = np.ascontiguousarray(np.atleast_2d(np.asarray(targets, dtype=float)))
    out, bad = impl.direct_all(x, np.ascontiguousarray(mesh.points), np.ascontiguousarray(mesh.normals),
                               a_s, a_d, float(k), False)
    if bad:
        raise CoincidentPointError(f"{bad} target/node pairs closer than 1e-14")
    return out


def correction_matrix(pre: SingularPrecompute, mesh: SurfaceMesh, gamma=0.0, kernel="combined"):
    """Sparse operator replacing nodal sums by RP values on proximity pairs.

    For each pair ``(l, q)`` the row ``l`` receives the RP nodal weights of
    the kernel on the nodes of patch ``q`` minus the plain nodal kernel
    weights ``K(x_l, y_m) J_m w_m`` for ``m != l``.  ``kernel`` is
    ``"single"``, ``"double"`` or ``"combined"`` (``D - i gamma S``).
    """
    if kernel not in ("single", "double", "combined"):
        raise ValueError("kernel must be 'single', 'double' or 'combined'")
    c_s = {"single": 1.0, "double": 0.0, "combined": -1j * gamma}[kernel]
    c_d = 0.0 if kernel == "single" else 1.0
    pm = pre.proximity
    k = pre.k
    rows, cols, vals = [], [], []
    aw = mesh.area_weights
    order = np.argsort(pm.patch, kind="stable")
    bounds = np.searchsorted(pm.patch[order], np.arange(mesh.n_patches + 1))
    for q in range(mesh.n_patches):
        idx = order[bounds[q]:bounds[q + 1]]
        if idx.size == 0:
            continue
        p = mesh.patches[q]
        au, av = analysis_matrix(p.nu), analysis_matrix(p.nv)
        beta = c_d * pre.beta_d[idx, :p.nu, :p.nv] + c_s * pre.beta_s[idx, :p.nu, :p.nv]
        w = np.einsum("in,pnm,mj->pji", au.T, beta, av).reshape(idx.size, -1)  # node order j outer, i inner
        sl = mesh.patch_slice(q)
        tgt = pm.target[idx]
        d = mesh.points[tgt][:, None, :] - mesh.points[sl][None, :, :]
        r = np.sqrt(np.sum(d * d, axis=2))
        self_pair = r < 1e-14
        rs = np.where(self_pair, 1.0, r)
        e = np.exp(1j * k * rs) / (FOUR_PI * rs)
        dot = np.einsum("pmc,mc->pm", d, mesh.normals[sl])
        kern = c_d * e * (1.0 - 1j * k * rs) * dot / rs**2 + c_s * e
        kern = np.where(self_pair, 0.0, kern) * aw[sl][None, :]
        rows.append(np.repeat(tgt, sl.stop - sl.start))
        cols.append(np.tile(np.arange(sl.start, sl.stop), idx.size))
        vals.append((w - kern).ravel())
    n = mesh.n_nodes
    if not rows:
        return sparse.csr_matrix((n, n), dtype=complex)
    return sparse.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n))


# ----------------------------------------------------------------------------
# cache
# ----------------------------------------------------------------------------

def cache_key(geometry, k, cov: CovParams, delta):
    h = hashlib.sha256()
    h.update(f"{geometry}|{float(k)!r}|{cov.n_beta}|{float(cov.d)!r}|".encode())
    h.update(np.ascontiguousarray(delta, dtype=float).tobytes())
    return h.hexdigest()[:24]


def cache_path(directory, key):
    return os.path.join(directory, f"rpbeta-{key}.bin")


_ARRAYS = ("delta", "target", "patch", "uv", "dist", "beta_s", "beta_d")


def save_precompute(pre: SingularPrecompute, path):
    """Write ``pre`` to ``path`` (header line, JSON metadata line, raw npy blocks)."""
    pm = pre.proximity
    arrays = dict(delta=pm.delta, target=pm.target, patch=pm.patch, uv=pm.uv, dist=pm.dist,
                  beta_s=pre.beta_s, beta_d=pre.beta_d)
    payload = io.BytesIO()
    for name in _ARRAYS:
        np.save(payload, np.ascontiguousarray(arrays[name]), allow_pickle=False)
    blob = payload.getvalue()
    meta = dict(k=repr(pre.k), d=repr(float(pre.cov.d)), n_beta=int(pre.cov.n_beta), geometry=pre.geometry,
                nbytes=len(blob), sha256=hashlib.sha256(blob).hexdigest())
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(CACHE_MAGIC)
        fh.write(json.dumps(meta, sort_keys=True).encode() + b"\n")
        fh.write(blob)
    os.replace(tmp, path)


def load_precompute(path) -> SingularPrecompute:
    with open(path, "rb") as fh:
        data = fh.read()
    if not data.startswith(CACHE_MAGIC):
        raise CacheFormatError(f"{path}: not an rpbeta v1 file")
    rest = data[len(CACHE_MAGIC):]
    nl = rest.find(b"\n")
    if nl < 0:
        raise CacheFormatError(f"{path}: missing metadata")
    try:
        meta = json.loads(rest[:nl].decode())
    except ValueError as exc:
        raise CacheFormatError(f"{path}: bad metadata") from exc
    blob = rest[nl + 1:]
    if len(blob) != meta.get("nbytes") or hashlib.sha256(blob).hexdigest() != meta.get("sha256"):
        raise CacheFormatError(f"{path}: payload size or checksum mismatch")
    buf = io.BytesIO(blob)
    try:
        arrs = {name: np.load(buf, allow_pickle=False) for name in _ARRAYS}
    except ValueError as exc:
        raise CacheFormatError(f"{path}: unreadable array block") from exc
    pm = ProximityMap(delta=arrs["delta"], target=arrs["target"], patch=arrs["patch"], uv=arrs["uv"],
                      dist=arrs["dist"])
    cov = CovParams(d=float(meta["d"]), n_beta=int(meta["n_beta"]))
    return SingularPrecompute(proximity=pm, cov=cov, k=float(meta["k"]), beta_s=arrs["beta_s"],
                              beta_d=arrs["beta_d"], geometry=meta["geometry"])
