"""Helmholtz kernels and their box-centred factorizations.

For a source box with centre ``y0`` and side ``H`` (radius ``h = sqrt(3)/2 H``)
a target ``x`` is described by cone coordinates ``(s, theta, phi)`` with
``s = h / |x - y0|``.  Each kernel splits as ``centered(r) * analytic(s, ...)``
where the analytic factor stays smooth up to ``s = 0``::

    Phi      = e^{ikr}/(4 pi r)   * W1
    dPhi/dnu = e^{ikr}/(4 pi r^2) * W2  - ik e^{ikr}/(4 pi r) * W3
             = e^{ikr}/(4 pi r)   * W4,   W4 = (s/h) W2 - ik W3

Everything here is vectorized numpy and serves as the reference that the
compiled kernels are checked against.
"""

from dataclasses import dataclass
import math

import numpy as np

FOUR_PI = 4.0 * math.pi
ETA = math.sqrt(3.0) / 3.0
COINCIDENT_TOL = 1e-14

# centred-factor exponent q_j of |x - y0| per analytic factor
Q_EXPONENT = {1: 1, 2: 2, 3: 1, 4: 1}


class CoincidentPointError(ValueError):
    pass


@dataclass(frozen=True)
class BoxFrame:
    center: np.ndarray
    side: float

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float))
        if not self.side > 0:
            raise ValueError("box side must be positive")

    @property
    def radius(self):
        return 0.5 * math.sqrt(3.0) * self.side


def _distance(x, y):
    d = np.asarray(x, dtype=float) - np.asarray(y, dtype=float)
    r = np.sqrt(np.sum(d * d, axis=-1))
    if np.any(r < COINCIDENT_TOL):
        raise CoincidentPointError("kernel evaluated at coincident points")
    return d, r


def green(x, y, k):
    _, r = _distance(x, y)
    return np.exp(1j * k * r) / (FOUR_PI * r)


def dlayer_kernel(x, y, normal_y, k):
    """Normal derivative of the Green function with respect to the source ``y``."""
    d, r = _distance(x, y)
    dot = np.sum(d * np.asarray(normal_y, dtype=float), axis=-1)
    return np.exp(1j * k * r) * (1.0 - 1j * k * r) * dot / (FOUR_PI * r**3)


def v_terms(x, y, normal_y, k):
    """``(V1, V2, V3)`` so that ``Phi = V1/4pi`` and ``dPhi/dnu = V2/4pi - ik V3/4pi``.

    ``V2`` and ``V3`` are returned without their ``1/4pi`` so that the
    decomposition reads uniformly.
    """
    d, r = _distance(x, y)
    e = np.exp(1j * k * r)
    dot = np.sum(d * np.asarray(normal_y, dtype=float), axis=-1)
    return e / r, e * dot / r**3, e * dot / r**2


def cone_to_cartesian(s, theta, phi, frame: BoxFrame):
    s = np.asarray(s, dtype=float)
    if np.any(s <= 0):
        raise ValueError("cone coordinate s must be positive")
    r = frame.radius / s
    st = np.sin(theta)
    dirn = np.stack([st * np.cos(phi), st * np.sin(phi), np.cos(theta) * np.ones_like(st)], axis=-1)
    return frame.center + r[..., None] * dirn


def cartesian_to_cone(x, frame: BoxFrame):
    """Inverse of :func:`cone_to_cartesian`; ``phi`` is returned in ``[0, 2 pi)``."""
    d = np.asarray(x, dtype=float) - frame.center
    r = np.sqrt(np.sum(d * d, axis=-1))
    if np.any(r == 0):
        raise ValueError("point coincides with the box centre")
    theta = np.arccos(np.clip(d[..., 2] / r, -1.0, 1.0))
    phi = np.arctan2(d[..., 1], d[..., 0])
    phi = np.where(phi < 0, phi + 2 * math.pi, phi)
    phi = np.where(phi >= 2 * math.pi, 0.0, phi)
    return frame.radius / r, theta, phi


def _unit_direction(theta, phi):
    st = np.sin(theta)
    return np.stack([st * np.cos(phi), st * np.sin(phi), np.cos(theta) * np.ones_like(st)], axis=-1)


def _shifted(s, theta, phi, y, frame):
    # w = xhat - s (y - y0)/h,  |w|,  and the phase (h/s)(|w| - 1) without cancellation
    h = frame.radius
    xhat = _unit_direction(theta, phi)
    u = (np.asarray(y, dtype=float) - frame.center) / h
    s_ = np.asarray(s, dtype=float)[..., None]
    w = xhat - s_ * u
    nw = np.sqrt(np.sum(w * w, axis=-1))
    # |w|^2 - 1 = -2 s xhat.u + s^2 |u|^2
    xu = np.sum(xhat * u, axis=-1)
    uu = np.sum(u * u, axis=-1)
    phase = h * (-2.0 * xu + np.asarray(s) * uu) / (nw + 1.0)
    return w, nw, phase


def analytic_factor(which, s, theta, phi, y, frame: BoxFrame, k, normal_y=None):
    """Analytic factor ``W1..W4`` of a source ``y`` in the box ``frame``."""
    s = np.asarray(s, dtype=float)
    if np.any(s >= 1) or np.any(s < 0):
        raise ValueError("analytic factors need 0 <= s < 1")
    w, nw, phase = _shifted(s, theta, phi, y, frame)
    e = np.exp(1j * k * phase)
    if which == 1:
        return e / nw
    if normal_y is None:
        raise ValueError(f"W{which} needs the source normal")
    dot = np.sum(w * np.asarray(normal_y, dtype=float), axis=-1)
    w2 = e * dot / nw**3
    w3 = e * dot / nw**2
    if which == 2:
        return w2
    if which == 3:
        return w3
    if which == 4:
        return (s / frame.radius) * w2 - 1j * k * w3
    raise ValueError(f"unknown analytic factor W{which}")


def centered_factor(j, s, frame: BoxFrame, k):
    s = np.asarray(s, dtype=float)
    if np.any(s <= 0):
        raise ValueError("cone coordinate s must be positive")
    r = frame.radius / s
    return np.exp(1j * k * r) / (FOUR_PI * r ** Q_EXPONENT[j])
