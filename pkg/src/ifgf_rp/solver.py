"""Combined-field operator, incident fields, GMRES and the solve pipeline.

The exterior sound-soft problem is solved through the second-kind equation::

    0.5 phi + D phi - i gamma S phi = -u_inc    on the surface

with ``S`` and ``D`` the single- and double-layer operators.  Far
interactions run through the IFGF operator with quadrature-weighted sources
``phi_m J_m w_m``, level-D neighbours are summed directly, and targets close
to a patch receive the rectangular-polar correction.
"""

from dataclasses import dataclass, field, asdict
import logging
import math
import os
import time
from typing import Callable, List, Optional

import numpy as np

from .geometry import SurfaceMesh
from .ifgf import ConeConfig, IFGFOperator, brute_force
from .ifgf.cones import STRATEGIES
from .rp_quadrature import (CacheFormatError, CovParams, SingularPrecompute, beta_precompute, cache_key, cache_path,
                            classify_targets, correction_matrix, load_precompute, proximity_distance,
                            save_precompute)

log = logging.getLogger(__name__)

BREAKDOWN_TOL = 1e-14
SOURCE_MIN_DISTANCE = 1e-12


class ConvergenceError(RuntimeError):
    """GMRES stopped without reaching the tolerance; ``result`` holds the history."""

    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result


# ----------------------------------------------------------------------------
# configuration and incident fields
# ----------------------------------------------------------------------------

@dataclass(frozen=True)
class SolveConfig:
    """Parameters of a solve.

    ``gamma=None`` selects ``max(3, A / lambda)``.  ``dl_strategy="auto"``
    uses ``W4`` when the finest boxes are at least half a wavelength wide
    and ``hybrid`` otherwise.  ``delta=None`` sets the proximity distance to
    ``delta_factor`` times the node spacing of each patch.  Cone refinement
    (``refine_threshold``) and the RP order (``n_beta``) default to values
    tuned for far-field errors below 5e-4 on spheres up to 8 wavelengths.
    """

    k: float
    gamma: Optional[float] = None
    tol: float = 1e-4
    max_iter: int = 200
    restart: Optional[int] = None
    finest_box_lambda: float = 0.5
    n_c0: int = 2
    n_s0: int = 1
    p_s: int = 3
    p_ang: int = 5
    dl_strategy: str = "auto"
    refine_threshold: float = 0.25
    hybrid_threshold: float = 0.5
    delta: Optional[float] = None
    delta_factor: float = 1.0
    n_beta: int = 64
    cov_d: float = 4.0
    workers: Optional[int] = None
    cache_dir: Optional[str] = None
    accelerate: bool = True

    def __post_init__(self):
        if not self.k > 0:
            raise ValueError("k must be positive")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be positive")
        if self.restart is not None and self.restart < 1:
            raise ValueError("restart must be positive")
        if self.gamma is not None and self.gamma == 0:
            raise ValueError("gamma must be nonzero")
        if self.dl_strategy not in STRATEGIES + ("auto",):
            raise ValueError(f"dl_strategy must be one of {STRATEGIES + ('auto',)}")
        if not self.finest_box_lambda > 0:
            raise ValueError("finest_box_lambda must be positive")

    @property
    def wavelength(self):
        return 2.0 * math.pi / self.k

    def cone_config(self):
        return ConeConfig(n_s0=self.n_s0, n_c0=self.n_c0, p_s=self.p_s, p_ang=self.p_ang,
                          refine_threshold=self.refine_threshold, hybrid_threshold=self.hybrid_threshold)

    def cov(self):
        return CovParams(d=self.cov_d, n_beta=self.n_beta)

    def as_dict(self):
        return asdict(self)


def coupling_gamma(diameter, wavelength):
    """Coupling parameter ``max(3, A / lambda)``."""
    if not diameter > 0 or not wavelength > 0:
        raise ValueError("diameter and wavelength must be positive")
    return max(3.0, diameter / wavelength)


def direction_from_angles(theta, phi):
    """Unit vector ``(cos theta sin phi, sin theta sin phi, cos phi)``."""
    return np.array([math.cos(theta) * math.sin(phi), math.sin(theta) * math.sin(phi), math.cos(phi)])


@dataclass(frozen=True)
class PlaneWave:
    """``u(x) = exp(i k khat . x)`` with ``khat`` given by azimuth ``theta`` and polar angle ``phi``."""

    theta: float = 0.0
    phi: float = math.pi

    @property
    def direction(self):
        return direction_from_angles(self.theta, self.phi)

    def __call__(self, x, k):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return np.exp(1j * k * (x @ self.direction))


@dataclass(frozen=True)
class PointSources:
    """``u(x) = sum_j exp(i k |x - x_j|) / |x - x_j|``."""

    locations: tuple

    def __post_init__(self):
        loc = np.atleast_2d(np.asarray(self.locations, dtype=float))
        if loc.ndim != 2 or loc.shape[1] != 3 or loc.shape[0] == 0:
            raise ValueError("point sources need an (M, 3) array of locations")
        object.__setattr__(self, "locations", tuple(map(tuple, loc)))

    def __call__(self, x, k):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        out = np.zeros(x.shape[0], dtype=complex)
        for src in np.asarray(self.locations):
            r = np.linalg.norm(x - src, axis=1)
            if np.any(r < SOURCE_MIN_DISTANCE):
                raise ValueError(f"point source {tuple(src)} lies on an evaluation point")
            out += np.exp(1j * k * r) / r
        return out


def incident_trace(incident, mesh: SurfaceMesh, k):
    """Nodal samples of the incident field and the right-hand side ``-u_inc``."""
    u = incident(mesh.points, k)
    return u, -u


# ----------------------------------------------------------------------------
# GMRES
# ----------------------------------------------------------------------------

@dataclass
class GMRESResult:
    x: np.ndarray
    residuals: List[float]
    iterations: int
    converged: bool


def gmres_solve(apply: Callable, rhs, tol=1e-4, max_iter=200, restart=None, x0=None) -> GMRESResult:
    """Matrix-free GMRES with modified Gram-Schmidt Arnoldi.

    ``residuals[j]`` is the relative residual ``|b - A x_j| / |b|`` after
    ``j`` iterations, tracked through the Givens-rotated least-squares
    problem.  Without ``restart`` one Krylov space of up to ``max_iter``
    vectors is built.  An Arnoldi vector of norm below ``1e-14 |b|`` that
    does not coincide with convergence raises :class:`ConvergenceError`.
    """
    b = np.asarray(rhs, dtype=complex)
    n = b.size
    bnorm = float(np.linalg.norm(b))
    x = np.zeros(n, dtype=complex) if x0 is None else np.array(x0, dtype=complex)
    if bnorm == 0.0:
        return GMRESResult(x=np.zeros(n, dtype=complex), residuals=[0.0], iterations=0, converged=True)
    m = max_iter if restart is None else min(restart, max_iter)
    residuals = []
    total = 0
    while True:
        r = b - apply(x) if total or x0 is not None else b.copy()
        beta = float(np.linalg.norm(r))
        if not residuals:
            residuals.append(beta / bnorm)
        if beta / bnorm <= tol:
            return GMRESResult(x=x, residuals=residuals, iterations=total, converged=True)
        V = np.zeros((m + 1, n), dtype=complex)
        H = np.zeros((m + 1, m), dtype=complex)
        cs = np.zeros(m)
        sn = np.zeros(m, dtype=complex)
        g = np.zeros(m + 1, dtype=complex)
        g[0] = beta
        V[0] = r / beta
        j_done = 0
        converged = False
        for j in range(m):
            w = apply(V[j])
            for i in range(j + 1):
                H[i, j] = np.vdot(V[i], w)
                w = w - H[i, j] * V[i]
            H[j + 1, j] = np.linalg.norm(w)
            for i in range(j):
                t = cs[i] * H[i, j] + sn[i] * H[i + 1, j]
                H[i + 1, j] = -np.conj(sn[i]) * H[i, j] + cs[i] * H[i + 1, j]
                H[i, j] = t
            # rotation with real cosine zeroing the subdiagonal entry c >= 0
            a, c = H[j, j], H[j + 1, j].real
            denom = math.hypot(abs(a), c)
            if abs(a) == 0.0:
                cs[j], sn[j] = 0.0, 1.0
            else:
                cs[j] = abs(a) / denom
                sn[j] = (a / abs(a)) * c / denom
            H[j, j] = cs[j] * a + sn[j] * c
            H[j + 1, j] = 0.0
            g[j + 1] = -np.conj(sn[j]) * g[j]
            g[j] = cs[j] * g[j]
            total += 1
            j_done = j + 1
            res = abs(g[j + 1]) / bnorm
            residuals.append(float(res))
            breakdown = abs(c) < BREAKDOWN_TOL * bnorm
            if res <= tol:
                converged = True
                break
            if breakdown:
                y = _back_substitute(H, g, j_done)
                x = x + V[:j_done].T @ y
                raise ConvergenceError(f"GMRES breakdown after {total} iterations (residual {res:.3e})",
                                       GMRESResult(x=x, residuals=residuals, iterations=total, converged=False))
            if total >= max_iter:
                break
            V[j + 1] = w / c
        y = _back_substitute(H, g, j_done)
        x = x + V[:j_done].T @ y
        if converged or total >= max_iter:
            return GMRESResult(x=x, residuals=residuals, iterations=total, converged=converged)


def _back_substitute(H, g, j):
    y = np.zeros(j, dtype=complex)
    for i in range(j - 1, -1, -1):
        y[i] = (g[i] - H[i, i + 1:j] @ y[i + 1:j]) / H[i, i]
    return y


# ----------------------------------------------------------------------------
# operator
# ----------------------------------------------------------------------------

def resolve_strategy(config: SolveConfig, op: IFGFOperator):
    if config.dl_strategy != "auto":
        return config.dl_strategy
    finest = op.tree.side(op.tree.depth) / op.tree.wavelength
    # the root cube hugs the discretised surface, so nominal half-wavelength boxes come out a hair short
    return "W4" if finest >= 0.5 * (1.0 - 1e-3) else "hybrid"


def load_or_compute_precompute(mesh: SurfaceMesh, config: SolveConfig) -> SingularPrecompute:
    """RP moments, read from ``config.cache_dir`` when a valid cache file exists."""
    cov = config.cov()
    path = None
    if config.cache_dir:
        delta = proximity_distance(mesh, config.delta, config.delta_factor)
        key = cache_key(mesh.fingerprint(), config.k, cov, delta)
        path = cache_path(config.cache_dir, key)
        if os.path.exists(path):
            try:
                pre = load_precompute(path)
                if pre.key() == key:
                    return pre
                log.warning("cache %s does not match the current configuration; recomputing", path)
            except CacheFormatError as exc:
                log.warning("rejecting cache: %s", exc)
    t0 = time.perf_counter()
    prox = classify_targets(mesh, config.delta, config.delta_factor)
    t1 = time.perf_counter()
    pre = beta_precompute(mesh, prox, cov, config.k)
    pre.timings = {"classify": t1 - t0, "beta": time.perf_counter() - t1}
    if path is not None:
        os.makedirs(config.cache_dir, exist_ok=True)
        save_precompute(pre, path)
    return pre


class CombinedOperator:
    """``phi -> 0.5 phi + D phi - i gamma S phi`` on the nodes of ``mesh``.

    With ``config.accelerate`` the regular part runs through the IFGF
    operator; otherwise it is summed directly over all node pairs.
    """

    def __init__(self, mesh: SurfaceMesh, config: SolveConfig, gamma=None, precompute: SingularPrecompute = None):
        self.mesh = mesh
        self.config = config
        self.k = config.k
        if gamma is None:
            gamma = config.gamma if config.gamma is not None else coupling_gamma(mesh.diameter(), config.wavelength)
        self.gamma = float(gamma)
        self.timings = {}
        t0 = time.perf_counter()
        self.ifgf = None
        self.strategy = None
        if config.accelerate:
            op = IFGFOperator(mesh.points, mesh.normals, config.k, config.cone_config(), "W4",
                              config.finest_box_lambda, workers=config.workers)
            self.strategy = resolve_strategy(config, op)
            if self.strategy != "W4":
                op = IFGFOperator(mesh.points, mesh.normals, config.k, config.cone_config(), self.strategy,
                                  config.finest_box_lambda, workers=config.workers)
            self.ifgf = op
        self.timings["octree_cones"] = time.perf_counter() - t0
        t0 = time.perf_counter()
        self.precompute = precompute if precompute is not None else load_or_compute_precompute(mesh, config)
        self.timings["precompute"] = time.perf_counter() - t0
        t0 = time.perf_counter()
        self.corr_s = correction_matrix(self.precompute, mesh, kernel="single")
        self.corr_d = correction_matrix(self.precompute, mesh, kernel="double")
        self.timings["correction"] = time.perf_counter() - t0
        self._aw = mesh.area_weights
        self.n_applies = 0
        self.apply_time = 0.0

    @property
    def n(self):
        return self.mesh.n_nodes

    def _check(self, phi):
        phi = np.asarray(phi, dtype=complex)
        if phi.shape != (self.n,):
            raise ValueError(f"density has shape {phi.shape}, expected ({self.n},)")
        return phi

    def _regular(self, a_s, a_d):
        if self.ifgf is not None:
            return self.ifgf.apply(a_s, a_d, near=True)
        return brute_force(self.mesh.points, self.mesh.normals, a_s, a_d, self.k)

    def apply_single(self, phi):
        """``S phi``."""
        phi = self._check(phi)
        return self._regular(phi * self._aw, None) + self.corr_s @ phi

    def apply_double(self, phi):
        """``D phi``."""
        phi = self._check(phi)
        return self._regular(None, phi * self._aw) + self.corr_d @ phi

    def apply(self, phi):
        """``0.5 phi + D phi - i gamma S phi`` with both layers in one pass."""
        t0 = time.perf_counter()
        phi = self._check(phi)
        aw = phi * self._aw
        out = self._regular(-1j * self.gamma * aw, aw)
        out += self.corr_d @ phi - 1j * self.gamma * (self.corr_s @ phi)
        out += 0.5 * phi
        self.apply_time += time.perf_counter() - t0
        self.n_applies += 1
        return out

    __call__ = apply


# ----------------------------------------------------------------------------
# pipeline
# ----------------------------------------------------------------------------

@dataclass
class SolveResult:
    density: np.ndarray
    iterations: int
    residuals: List[float]
    converged: bool
    gamma: float
    k: float
    strategy: Optional[str]
    timings: dict = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)


def solve(mesh: SurfaceMesh, incident, config: SolveConfig, operator: CombinedOperator = None) -> SolveResult:
    """Build the operator, run GMRES on ``-u_inc`` and collect timings.

    Raises :class:`ConvergenceError` (carrying the partial result) when the
    tolerance is not reached.
    """
    t_start = time.perf_counter()
    op = operator or CombinedOperator(mesh, config)
    _, rhs = incident_trace(incident, mesh, config.k)
    t0 = time.perf_counter()
    try:
        g = gmres_solve(op.apply, rhs, config.tol, config.max_iter, config.restart)
        err = None
    except ConvergenceError as exc:
        g, err = exc.result, exc
    t_gmres = time.perf_counter() - t0
    timings = dict(op.timings)
    timings["gmres"] = t_gmres
    timings["apply_mean"] = op.apply_time / max(op.n_applies, 1)
    timings["total"] = time.perf_counter() - t_start
    meta = {"n_nodes": mesh.n_nodes, "n_patches": mesh.n_patches, "n_pairs": op.precompute.n_pairs}
    if op.ifgf is not None:
        meta["levels"] = op.ifgf.depth
    result = SolveResult(density=g.x, iterations=g.iterations, residuals=g.residuals, converged=g.converged,
                         gamma=op.gamma, k=config.k, strategy=op.strategy, timings=timings, metadata=meta)
    if err is not None or not g.converged:
        raise ConvergenceError(str(err) if err else f"GMRES did not reach tol={config.tol} in {g.iterations} "
                               "iterations", result)
    return result
