"""Far and near fields of a solved density, error metrics and the Mie reference.

Directions on the far-field grid use the plane-wave convention
``(cos theta sin phi, sin theta sin phi, cos phi)`` with ``phi`` the polar
angle in ``[0, pi]`` and ``theta`` the azimuth in ``[0, 2 pi]``.
"""

from dataclasses import dataclass
import csv
import math

import numpy as np
from scipy.spatial import cKDTree
from scipy.special import eval_legendre, spherical_jn, spherical_yn

from ._kernels import impl
from .geometry import SurfaceMesh
from .rp_quadrature import _patch_tables, CLOSEST_MAX_SWEEPS, CLOSEST_TOL, proximity_distance

INTERIOR_THRESHOLD = -0.5


# ----------------------------------------------------------------------------
# grids
# ----------------------------------------------------------------------------

@dataclass
class FarFieldGrid:
    """``n_phi x n_theta`` directions, ``phi[m] = m pi / (n_phi - 1)``, ``theta[n] = 2 pi n / (n_theta - 1)``."""

    n_phi: int
    n_theta: int
    values: np.ndarray = None  # (n_phi, n_theta) complex

    def __post_init__(self):
        if self.n_phi < 2 or self.n_theta < 2:
            raise ValueError("far-field grid needs at least 2 points per direction")

    @property
    def phi(self):
        return np.arange(self.n_phi) * (math.pi / (self.n_phi - 1))

    @property
    def theta(self):
        return np.arange(self.n_theta) * (2.0 * math.pi / (self.n_theta - 1))

    def directions(self):
        """Unit vectors of shape ``(n_phi * n_theta, 3)``, ``theta`` fastest."""
        P, T = np.meshgrid(self.phi, self.theta, indexing="ij")
        P, T = P.ravel(), T.ravel()
        return np.column_stack([np.cos(T) * np.sin(P), np.sin(T) * np.sin(P), np.cos(P)])


PLANES = {"xy": (0, 1, 2), "xz": (0, 2, 1), "yz": (1, 2, 0)}


@dataclass
class NearFieldGrid:
    """Uniform planar grid parallel to a coordinate plane.

    Point ``(m, n)`` sits at ``a_min + m da`` and ``b_min + n db`` along the
    two in-plane axes (``da = (a_max - a_min) / (n_a - 1)``) and at
    ``offset`` along the normal axis.
    """

    plane: str
    offset: float
    a_range: tuple
    b_range: tuple
    n_a: int
    n_b: int
    scattered: np.ndarray = None
    total: np.ndarray = None
    interior: np.ndarray = None
    near: np.ndarray = None

    def __post_init__(self):
        if self.plane not in PLANES:
            raise ValueError(f"plane must be one of {sorted(PLANES)}")
        if self.n_a < 2 or self.n_b < 2:
            raise ValueError("near-field grid needs at least 2 points per direction")

    @property
    def spacing(self):
        return ((self.a_range[1] - self.a_range[0]) / (self.n_a - 1),
                (self.b_range[1] - self.b_range[0]) / (self.n_b - 1))

    def points(self):
        """Grid points of shape ``(n_a * n_b, 3)``, second index fastest."""
        da, db = self.spacing
        a = self.a_range[0] + np.arange(self.n_a) * da
        b = self.b_range[0] + np.arange(self.n_b) * db
        A, B = np.meshgrid(a, b, indexing="ij")
        ia, ib, ic = PLANES[self.plane]
        out = np.empty((A.size, 3))
        out[:, ia] = A.ravel()
        out[:, ib] = B.ravel()
        out[:, ic] = self.offset
        return out


# ----------------------------------------------------------------------------
# fields
# ----------------------------------------------------------------------------

def far_field_values(mesh: SurfaceMesh, density, gamma, k, directions):
    """``(1/4pi) int [d/dnu_y exp(-ik xhat.y) - i gamma exp(-ik xhat.y)] phi dS`` by the nodal rule."""
    density = np.asarray(density, dtype=complex)
    if density.shape != (mesh.n_nodes,):
        raise ValueError(f"density has shape {density.shape}, expected ({mesh.n_nodes},)")
    dirs = np.ascontiguousarray(np.atleast_2d(directions), dtype=float)
    aw = np.ascontiguousarray(density * mesh.area_weights)
    return impl.far_field_sum(dirs, mesh.points, mesh.normals, aw, float(k), float(gamma))


def far_field(mesh: SurfaceMesh, density, gamma, k, grid: FarFieldGrid) -> FarFieldGrid:
    vals = far_field_values(mesh, density, gamma, k, grid.directions())
    return FarFieldGrid(grid.n_phi, grid.n_theta, vals.reshape(grid.n_phi, grid.n_theta))


def layer_potential(mesh: SurfaceMesh, density, gamma, k, points):
    """``int [dPhi/dnu_y - i gamma Phi] phi dS`` at off-surface points by the nodal rule."""
    density = np.asarray(density, dtype=complex)
    aw = np.ascontiguousarray(density * mesh.area_weights)
    x = np.ascontiguousarray(np.atleast_2d(points), dtype=float)
    out, _ = impl.direct_all(x, mesh.points, mesh.normals, -1j * gamma * aw, aw, float(k), False)
    return out


def interior_mask(mesh: SurfaceMesh, points):
    """Points enclosed by the surface, from the Gauss solid-angle integral (-1 inside, 0 outside)."""
    x = np.ascontiguousarray(np.atleast_2d(points), dtype=float)
    aw = np.ascontiguousarray(mesh.area_weights.astype(complex))
    zero = np.zeros_like(aw)
    g, _ = impl.direct_all(x, mesh.points, mesh.normals, zero, aw, 0.0, False)
    return g.real < INTERIOR_THRESHOLD


def surface_distance(mesh: SurfaceMesh, points, radius):
    """Distance from each point to the surface, or ``inf`` when it exceeds ``radius`` plus the node spacing."""
    x = np.atleast_2d(np.asarray(points, dtype=float))
    spacing = float(mesh.patch_spacing().max())
    kd = cKDTree(mesh.points)
    out = np.full(x.shape[0], np.inf)
    hits = kd.query_ball_point(x, r=radius + spacing)
    tgt, q, uv0 = [], [], []
    for i, h in enumerate(hits):
        if not h:
            continue
        h = np.asarray(h)
        pid = mesh.patch_id[h]
        for qq in np.unique(pid):
            sel = h[pid == qq]
            j = sel[np.argmin(np.sum((mesh.points[sel] - x[i]) ** 2, axis=1))]
            tgt.append(i)
            q.append(qq)
            uv0.append(mesh.uv[j])
    if tgt:
        cpad, _, _, du, dv, _, _, _ = _patch_tables(mesh.patches)
        tgt = np.asarray(tgt)
        _, dist = impl.rp_closest(cpad, du, dv, np.asarray(q, dtype=np.int64), np.ascontiguousarray(x[tgt]),
                                  np.ascontiguousarray(uv0, dtype=float), CLOSEST_TOL, CLOSEST_MAX_SWEEPS)
        np.minimum.at(out, tgt, dist)
    return out


def near_field(mesh: SurfaceMesh, density, gamma, k, grid: NearFieldGrid, incident=None, delta=None,
               delta_factor=1.0) -> NearFieldGrid:
    """Scattered and total field on a planar grid.

    Points within the proximity distance of the surface are still evaluated
    by the nodal rule but flagged in ``near``; points inside the scatterer
    are flagged in ``interior``.
    """
    pts = grid.points()
    us = layer_potential(mesh, density, gamma, k, pts)
    ui = incident(pts, k) if incident is not None else np.zeros_like(us)
    dq = float(proximity_distance(mesh, delta, delta_factor).max())
    near = surface_distance(mesh, pts, dq) <= dq
    shape = (grid.n_a, grid.n_b)
    return NearFieldGrid(grid.plane, grid.offset, grid.a_range, grid.b_range, grid.n_a, grid.n_b,
                         scattered=us.reshape(shape), total=(us + ui).reshape(shape),
                         interior=interior_mask(mesh, pts).reshape(shape), near=near.reshape(shape))


# ----------------------------------------------------------------------------
# Mie reference
# ----------------------------------------------------------------------------

def mie_truncation(kr):
    return int(math.ceil(kr + 6.0 * kr ** (1.0 / 3.0) + 20))


def mie_far_field(radius, k, incidence, directions, n_terms=None):
    """Far field of a plane wave ``exp(ik d.x)`` scattered by a sound-soft sphere at the origin.

    ``u_inf(xhat) = (i/k) sum_n (2n+1) j_n(kR) / h_n(kR) P_n(xhat . d)``
    with ``u_s ~ exp(ikr)/r u_inf``.
    """
    kr = k * radius
    if not kr > 0:
        raise ValueError("kR must be positive")
    L = mie_truncation(kr) if n_terms is None else int(n_terms)
    d = np.asarray(incidence, dtype=float)
    d = d / np.linalg.norm(d)
    c = np.clip(np.atleast_2d(directions) @ d, -1.0, 1.0)
    n = np.arange(L + 1)
    jn = spherical_jn(n, kr)
    hn = jn + 1j * spherical_yn(n, kr)
    coef = (2 * n + 1) * jn / hn
    out = np.zeros(c.shape, dtype=complex)
    for i in range(L + 1):
        out += coef[i] * eval_legendre(i, c)
    return (1j / k) * out


# ----------------------------------------------------------------------------
# error metrics
# ----------------------------------------------------------------------------

def _modulus_error(ref, apx):
    ref = np.abs(np.asarray(ref))
    apx = np.abs(np.asarray(apx))
    if ref.shape != apx.shape:
        raise ValueError("reference and approximation must share a grid")
    ok = ref > 0
    excluded = int(ref.size - ok.sum())
    if not ok.any():
        return float("nan"), excluded
    return float(np.max(np.abs(ref[ok] - apx[ok]) / ref[ok])), excluded


def eps_far(reference, approx, return_excluded=False):
    """``max | |u_ref| - |u_apx| | / |u_ref|``; zero-reference points are skipped."""
    e, excluded = _modulus_error(reference, approx)
    return (e, excluded) if return_excluded else e


def eps_near(reference_total, approx_total, return_excluded=False):
    """Same modulus metric applied to total near fields."""
    e, excluded = _modulus_error(reference_total, approx_total)
    return (e, excluded) if return_excluded else e


# ----------------------------------------------------------------------------
# output
# ----------------------------------------------------------------------------

def _r(x):
    return repr(float(x))


def write_far_field_csv(path, grid: FarFieldGrid):
    dirs = grid.directions()
    phi, theta = grid.phi, grid.theta
    vals = grid.values.ravel()
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["m", "n", "phi", "theta", "x", "y", "z", "re", "im", "abs"])
        for idx, v in enumerate(vals):
            m, n = divmod(idx, grid.n_theta)
            w.writerow([m, n, _r(phi[m]), _r(theta[n]), *map(_r, dirs[idx]), _r(v.real), _r(v.imag), _r(abs(v))])


def write_near_field_csv(path, grid: NearFieldGrid):
    pts = grid.points()
    us, ut = grid.scattered.ravel(), grid.total.ravel()
    interior, near = grid.interior.ravel(), grid.near.ravel()
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["i", "j", "x", "y", "z", "us_re", "us_im", "us_abs", "u_re", "u_im", "u_abs", "interior",
                    "near"])
        for idx in range(pts.shape[0]):
            i, j = divmod(idx, grid.n_b)
            w.writerow([i, j, *map(_r, pts[idx]), _r(us[idx].real), _r(us[idx].imag), _r(abs(us[idx])),
                        _r(ut[idx].real), _r(ut[idx].imag), _r(abs(ut[idx])), int(interior[idx]), int(near[idx])])
