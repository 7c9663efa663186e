"""Multi-patch surface representation.

Every patch is a map ``y(u, v): [-1, 1]^2 -> R^3`` stored as three 2-D
Chebyshev coefficient tensors.  Surfaces are discretized at tensor
Chebyshev-Gauss nodes with Fejér weights, so the flat node arrays of a
:class:`SurfaceMesh` double as a quadrature rule for surface integrals.
"""

from dataclasses import dataclass, field
import hashlib
import math
import re

import numpy as np
from scipy.spatial import ConvexHull, QhullError

from ._kernels import impl
from .chebyshev import (
    OUT_OF_RANGE_TOL,
    cheb_coeffs_nd,
    cheb_deriv_coeffs,
    cheb_nodes,
    cheb_vandermonde,
    fejer_rule,
)

JACOBIAN_MIN = 1e-14


class GeometryError(ValueError):
    """Base class for invalid surface input."""


class PatchFileParseError(GeometryError):
    def __init__(self, message, offset):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class DegeneratePatchError(GeometryError):
    def __init__(self, q, message="vanishing surface Jacobian"):
        super().__init__(f"patch {q}: {message}")
        self.q = q


class NonFiniteGeometryError(GeometryError):
    def __init__(self, q):
        super().__init__(f"patch {q}: non-finite coefficient")
        self.q = q


@dataclass(frozen=True)
class Patch:
    """Chebyshev parametrization of one logically-quadrilateral patch.

    ``coeffs`` has shape ``(3, du, dv)``; ``nu, nv`` are the node counts of
    the discretization grid; ``sign`` (+1/-1) flips ``y_u x y_v`` so the
    normal points outward.
    """

    coeffs: np.ndarray
    nu: int
    nv: int
    sign: float = 1.0

    @property
    def degree(self):
        return self.coeffs.shape[1], self.coeffs.shape[2]

    def derivative_coeffs(self):
        return cheb_deriv_coeffs(self.coeffs, axis=1), cheb_deriv_coeffs(self.coeffs, axis=2)


def _check_uv(u, v):
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    if np.any(np.abs(u) > 1 + OUT_OF_RANGE_TOL) or np.any(np.abs(v) > 1 + OUT_OF_RANGE_TOL):
        raise ValueError("patch parameters outside [-1, 1]^2")
    return np.clip(u, -1, 1), np.clip(v, -1, 1)


def _tensor_eval(coeffs, u, v):
    # coeffs (3, du, dv); u, v same shape (M,) -> (M, 3)
    tu = cheb_vandermonde(u, coeffs.shape[1])
    tv = cheb_vandermonde(v, coeffs.shape[2])
    return np.einsum("mi,cij,mj->mc", tu, coeffs, tv)


def eval_patch(patch: Patch, u, v) -> np.ndarray:
    """Position ``y(u, v)``; scalar parameters give a length-3 vector."""
    scalar = np.ndim(u) == 0 and np.ndim(v) == 0
    u, v = _check_uv(u, v)
    out = _tensor_eval(patch.coeffs, np.atleast_1d(u).ravel(), np.atleast_1d(v).ravel())
    return out[0] if scalar else out.reshape(np.shape(u) + (3,))


def patch_frame(patch: Patch, u, v, q=None):
    """Return ``(y_u, y_v, normal, jacobian)`` at the given parameters.

    Raises :class:`DegeneratePatchError` where the Jacobian drops below
    ``1e-14``.
    """
    scalar = np.ndim(u) == 0 and np.ndim(v) == 0
    u, v = _check_uv(u, v)
    uu, vv = np.atleast_1d(u).ravel(), np.atleast_1d(v).ravel()
    cu, cv = patch.derivative_coeffs()
    yu = _tensor_eval(cu, uu, vv)
    yv = _tensor_eval(cv, uu, vv)
    cross = patch.sign * np.cross(yu, yv)
    jac = np.linalg.norm(cross, axis=1)
    if np.any(~(jac >= JACOBIAN_MIN)):
        raise DegeneratePatchError(q if q is not None else -1)
    nrm = cross / jac[:, None]
    if scalar:
        return yu[0], yv[0], nrm[0], jac[0]
    shp = np.shape(u)
    return yu.reshape(shp + (3,)), yv.reshape(shp + (3,)), nrm.reshape(shp + (3,)), jac.reshape(shp)


@dataclass
class SurfaceMesh:
    """Patches plus their flattened node/quadrature data.

    Node ``l`` of the mesh belongs to patch ``patch_id[l]`` and has local
    grid index ``(i, j)``; nodes of a patch are stored contiguously from
    ``offsets[q]`` with the ``u`` index fastest.
    """

    patches: list
    interior: np.ndarray
    points: np.ndarray = field(init=False)
    normals: np.ndarray = field(init=False)
    jacobians: np.ndarray = field(init=False)
    weights: np.ndarray = field(init=False)
    patch_id: np.ndarray = field(init=False)
    uv: np.ndarray = field(init=False)
    offsets: np.ndarray = field(init=False)

    def __post_init__(self):
        self.interior = np.asarray(self.interior, dtype=float)
        pts, nrms, jacs, wts, pid, uvs = [], [], [], [], [], []
        offsets = [0]
        for q, p in enumerate(self.patches):
            su, sv = cheb_nodes(p.nu), cheb_nodes(p.nv)
            wu, wv = fejer_rule(p.nu).weights, fejer_rule(p.nv).weights
            # u index fastest
            vv, uu = np.meshgrid(sv, su, indexing="ij")
            uu, vv = uu.ravel(), vv.ravel()
            _, _, nrm, jac = patch_frame(p, uu, vv, q=q)
            pts.append(_tensor_eval(p.coeffs, uu, vv))
            nrms.append(nrm)
            jacs.append(jac)
            wts.append(np.outer(wv, wu).ravel())
            pid.append(np.full(uu.size, q, dtype=np.int64))
            uvs.append(np.column_stack([uu, vv]))
            offsets.append(offsets[-1] + uu.size)
        self.points = np.ascontiguousarray(np.vstack(pts))
        self.normals = np.ascontiguousarray(np.vstack(nrms))
        self.jacobians = np.concatenate(jacs)
        self.weights = np.concatenate(wts)
        self.patch_id = np.concatenate(pid)
        self.uv = np.vstack(uvs)
        self.offsets = np.asarray(offsets, dtype=np.int64)
        for arr in (self.points, self.normals, self.jacobians, self.weights, self.patch_id, self.uv):
            arr.setflags(write=False)

    @property
    def n_patches(self):
        return len(self.patches)

    @property
    def n_nodes(self):
        return int(self.offsets[-1])

    @property
    def area_weights(self):
        """Quadrature weight ``J * w_i * w_j`` of every node."""
        return self.jacobians * self.weights

    def area(self):
        return float(self.area_weights.sum())

    def diameter(self):
        """Largest distance between two nodes (taken over convex hull vertices)."""
        pts = self.points
        try:
            pts = pts[ConvexHull(pts).vertices]
        except QhullError:  # flat or tiny point sets
            pass
        if pts.shape[0] < 2:
            return 0.0
        return float(impl.max_pair_distance(np.ascontiguousarray(pts)))

    def patch_slice(self, q):
        return slice(int(self.offsets[q]), int(self.offsets[q + 1]))

    def patch_spacing(self):
        """Largest distance between grid-adjacent nodes, per patch."""
        out = np.empty(self.n_patches)
        for q, p in enumerate(self.patches):
            g = self.points[self.patch_slice(q)].reshape(p.nv, p.nu, 3)
            d = 0.0
            if p.nu > 1:
                d = max(d, np.linalg.norm(np.diff(g, axis=1), axis=2).max())
            if p.nv > 1:
                d = max(d, np.linalg.norm(np.diff(g, axis=0), axis=2).max())
            out[q] = d
        return out

    def fingerprint(self):
        """Stable hash of the geometry (coefficients, grids, orientation)."""
        h = hashlib.sha256()
        h.update(self.interior.tobytes())
        for p in self.patches:
            h.update(np.ascontiguousarray(p.coeffs).tobytes())
            h.update(np.array([p.nu, p.nv, p.sign]).tobytes())
        return h.hexdigest()[:16]


def _orient(coeffs, nu, nv, interior, q):
    p = Patch(coeffs, nu, nv, 1.0)
    y = eval_patch(p, 0.0, 0.0)
    _, _, nrm, _ = patch_frame(p, 0.0, 0.0, q=q)
    return Patch(coeffs, nu, nv, 1.0 if np.dot(nrm, y - interior) > 0 else -1.0)


def fit_patch(func, nu, nv, interior, q=0, tol=1e-12, max_degree=96):
    """Chebyshev-fit an analytic map ``func(u, v) -> (..., 3)``.

    The fit degree grows from 8 until the residual on an independent
    check grid falls below ``tol`` relative to the patch size; trailing
    coefficients far below the tolerance are then trimmed.
    """
    check = np.linspace(-1, 1, 17)
    cu, cv = np.meshgrid(check, check, indexing="ij")
    exact = func(cu.ravel(), cv.ravel())
    scale = max(np.abs(exact).max(), 1.0)
    for deg in (8, 16, 24, 32, 48, 64, max_degree):
        s = cheb_nodes(deg)
        gu, gv = np.meshgrid(s, s, indexing="ij")
        vals = func(gu.ravel(), gv.ravel()).reshape(deg, deg, 3)
        coeffs = np.stack([cheb_coeffs_nd(vals[..., c]) for c in range(3)])
        resid = np.abs(_tensor_eval(coeffs, cu.ravel(), cv.ravel()) - exact).max()
        if resid < tol * scale:
            break
    du, dv = _trim_degree(coeffs, tol * scale * 1e-2)
    coeffs = np.ascontiguousarray(coeffs[:, :du, :dv])
    return _orient(coeffs, nu, nv, np.asarray(interior, dtype=float), q)


def _trim_degree(coeffs, eps):
    mag = np.abs(coeffs).max(axis=0)
    du = coeffs.shape[1]
    while du > 1 and mag[du - 1, :].max() < eps:
        du -= 1
    dv = coeffs.shape[2]
    while dv > 1 and mag[:du, dv - 1].max() < eps:
        dv -= 1
    return du, dv


# cube faces: (normal axis, sign); the two tangent axes follow in cyclic order
_CUBE_FACES = [(0, 1.0), (0, -1.0), (1, 1.0), (1, -1.0), (2, 1.0), (2, -1.0)]


def _cube_face_map(axis, sgn, radius, a0, a1, b0, b1):
    t1, t2 = (axis + 1) % 3, (axis + 2) % 3

    def f(u, v):
        a = a0 + (u + 1) * 0.5 * (a1 - a0)
        b = b0 + (v + 1) * 0.5 * (b1 - b0)
        c = np.empty(np.shape(u) + (3,))
        c[..., axis] = sgn
        c[..., t1] = a
        c[..., t2] = b
        return radius * c / np.linalg.norm(c, axis=-1, keepdims=True)

    return f


def build_sphere(radius: float = 1.0, splits: int = 0, points_per_patch=(12, 12), center=(0.0, 0.0, 0.0)):
    """Cube-to-sphere surface with ``6 * 4**splits`` patches."""
    if not radius > 0:
        raise ValueError("radius must be positive")
    if int(splits) != splits or splits < 0:
        raise ValueError("splits must be a non-negative integer")
    nu, nv = (points_per_patch, points_per_patch) if np.isscalar(points_per_patch) else points_per_patch
    if nu < 1 or nv < 1:
        raise ValueError("points_per_patch must be positive")
    center = np.asarray(center, dtype=float)
    m = 2**splits
    edges = np.linspace(-1.0, 1.0, m + 1)
    patches = []
    for axis, sgn in _CUBE_FACES:
        for jb in range(m):
            for ia in range(m):
                f0 = _cube_face_map(axis, sgn, radius, edges[ia], edges[ia + 1], edges[jb], edges[jb + 1])
                f = (lambda g: (lambda u, v: g(u, v) + center))(f0)
                patches.append(fit_patch(f, nu, nv, center, q=len(patches)))
    return SurfaceMesh(patches, center)


def _subpatch(patch, iu, iv):
    # re-fit quadrant (iu, iv) of the parameter square onto [-1, 1]^2
    def f(u, v):
        uu = 0.5 * (u + (2 * iu - 1))
        vv = 0.5 * (v + (2 * iv - 1))
        return _tensor_eval(patch.coeffs, np.ravel(uu), np.ravel(vv)).reshape(np.shape(u) + (3,))

    du, dv = patch.degree
    s_u, s_v = cheb_nodes(du), cheb_nodes(dv)
    gu, gv = np.meshgrid(s_u, s_v, indexing="ij")
    vals = f(gu, gv)
    coeffs = np.stack([cheb_coeffs_nd(vals[..., c]) for c in range(3)])
    # polynomial of the same degree: exact re-expansion up to round-off
    return Patch(np.ascontiguousarray(coeffs), patch.nu, patch.nv, patch.sign)


def refine_split(mesh: SurfaceMesh) -> SurfaceMesh:
    """Split every patch into four, keeping the per-patch node counts."""
    patches = []
    for p in mesh.patches:
        for iv in (0, 1):
            for iu in (0, 1):
                patches.append(_subpatch(p, iu, iv))
    return SurfaceMesh(patches, mesh.interior)


HEADER_RE = re.compile(
    r"^ifgf-patches v1 Q=(\d+) interior=(\S+) (\S+) (\S+)$"
)
PATCH_RE = re.compile(r"^patch q=(\d+) nu=(\d+) nv=(\d+) du=(\d+) dv=(\d+)$")


def save_patch_file(mesh: SurfaceMesh, path):
    """Write the text patch format; reals use ``repr`` (round-trip exact)."""
    lines = ["ifgf-patches v1 Q=%d interior=%r %r %r" % ((mesh.n_patches,) + tuple(float(x) for x in mesh.interior))]
    for q, p in enumerate(mesh.patches):
        du, dv = p.degree
        lines.append(f"patch q={q} nu={p.nu} nv={p.nv} du={du} dv={dv}")
        for j in range(dv):
            for i in range(du):
                lines.append("%r %r %r" % tuple(float(c) for c in p.coeffs[:, i, j]))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def load_patch_file(path) -> SurfaceMesh:
    """Read and validate a patch file.

    Raises :class:`PatchFileParseError` (with byte offset),
    :class:`NonFiniteGeometryError` or :class:`DegeneratePatchError`.
    """
    with open(path, "rb") as fh:
        raw = fh.read()
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise PatchFileParseError("invalid UTF-8", exc.start) from exc

    lines = text.split("\n")
    offs = []
    pos = 0
    for ln in lines:
        offs.append(pos)
        pos += len(ln.encode("utf-8")) + 1
    end_offset = len(raw)
    cursor = 0

    def next_line(what):
        nonlocal cursor
        while cursor < len(lines) and lines[cursor].strip() == "":
            cursor += 1
        if cursor >= len(lines):
            raise PatchFileParseError(f"unexpected end of file, expected {what}", end_offset)
        ln, off = lines[cursor].strip(), offs[cursor]
        cursor += 1
        return ln, off

    head, off = next_line("header")
    m = HEADER_RE.match(head)
    if not m:
        raise PatchFileParseError("bad header line", off)
    Q = int(m.group(1))
    try:
        interior = np.array([float(m.group(i)) for i in (2, 3, 4)])
    except ValueError as exc:
        raise PatchFileParseError("bad interior point", off) from exc
    if not np.all(np.isfinite(interior)):
        raise PatchFileParseError("non-finite interior point", off)

    patches = []
    for q in range(Q):
        ln, off = next_line(f"patch {q} header")
        pm = PATCH_RE.match(ln)
        if not pm or int(pm.group(1)) != q:
            raise PatchFileParseError(f"bad patch header for q={q}", off)
        nu, nv, du, dv = (int(pm.group(i)) for i in (2, 3, 4, 5))
        if min(nu, nv, du, dv) < 1:
            raise PatchFileParseError(f"patch {q}: counts must be positive", off)
        coeffs = np.empty((3, du, dv))
        for j in range(dv):
            for i in range(du):
                ln, off = next_line(f"coefficient row of patch {q}")
                parts = ln.split()
                if len(parts) != 3:
                    raise PatchFileParseError(f"patch {q}: expected three reals", off)
                try:
                    coeffs[:, i, j] = [float(x) for x in parts]
                except ValueError as exc:
                    raise PatchFileParseError(f"patch {q}: malformed real", off) from exc
        if not np.all(np.isfinite(coeffs)):
            raise NonFiniteGeometryError(q)
        p = _orient(coeffs, nu, nv, interior, q)
        _validate_jacobian(p, q)
        patches.append(p)
    while cursor < len(lines):
        if lines[cursor].strip():
            raise PatchFileParseError("trailing content after last patch", offs[cursor])
        cursor += 1
    return SurfaceMesh(patches, interior)


def _validate_jacobian(p, q):
    su, sv = cheb_nodes(p.nu), cheb_nodes(p.nv)
    gu, gv = np.meshgrid(su, sv, indexing="ij")
    patch_frame(p, gu.ravel(), gv.ravel(), q=q)


def mesh_from_arrays(coeff_list, nu, nv, interior):
    """Convenience constructor from raw ``(3, du, dv)`` coefficient tensors."""
    interior = np.asarray(interior, dtype=float)
    return SurfaceMesh([_orient(np.asarray(c, float), nu, nv, interior, q) for q, c in enumerate(coeff_list)], interior)


def sphere_for_wavelengths(diameter_in_lambda: float, splits: int, points_per_patch=12, radius: float = 1.0):
    """Sphere mesh plus the wavenumber making its diameter ``diameter_in_lambda`` wavelengths."""
    mesh = build_sphere(radius, splits, (points_per_patch, points_per_patch))
    wavelength = 2 * radius / diameter_in_lambda
    return mesh, 2 * math.pi / wavelength
