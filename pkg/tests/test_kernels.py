import cmath
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from ifgf_rp.kernels import (BoxFrame, CoincidentPointError, ETA, analytic_factor, cartesian_to_cone,
                             centered_factor, cone_to_cartesian, dlayer_kernel, green, v_terms)


def green_ref(x, y, k):
    r = math.dist(x, y)
    return cmath.exp(1j * k * r) / (4 * math.pi * r)


def dlayer_ref(x, y, nu, k):
    # independent oracle: central finite difference of the Green function along nu at the source
    eps = 1e-5
    yp = np.asarray(y) + eps * np.asarray(nu)
    ym = np.asarray(y) - eps * np.asarray(nu)
    return (green_ref(x, yp, k) - green_ref(x, ym, k)) / (2 * eps)


def test_box_frame_radius():
    f = BoxFrame(np.zeros(3), 2.0)
    assert f.radius / f.side == pytest.approx(math.sqrt(3) / 2, abs=1e-15)
    with pytest.raises(ValueError):
        BoxFrame(np.zeros(3), 0.0)


def test_green_examples(rng):
    assert green([0, 0, 0], [1, 0, 0], 0.0) == pytest.approx(1 / (4 * math.pi))
    lam = 0.7
    assert green([0, 0, 0], [0, lam, 0], 2 * math.pi / lam) == pytest.approx(1 / (4 * math.pi * lam), abs=1e-15)
    x, y = rng.standard_normal((100, 3)), rng.standard_normal((100, 3))
    assert np.max(np.abs(green(x, y, 3.0) - green(y, x, 3.0))) <= 1e-15
    with pytest.raises(CoincidentPointError):
        green([0, 0, 0], [0, 0, 0], 1.0)


def test_dlayer_examples(rng):
    y = np.array([0.0, 0.6, 0.8])
    assert dlayer_kernel(np.zeros(3), y, y, 0.0) == pytest.approx(-1 / (4 * math.pi))
    assert dlayer_kernel([1, 0, 0], [0, 0, 0], [0, 0, 1], 2.0) == 0
    x, y = rng.standard_normal((100, 3)), rng.standard_normal((100, 3))
    nu = rng.standard_normal((100, 3))
    nu /= np.linalg.norm(nu, axis=1)[:, None]
    v1, v2, v3 = v_terms(x, y, nu, 2.5)
    ref = (v2 - 2.5j * v3) / (4 * math.pi)
    assert np.max(np.abs(dlayer_kernel(x, y, nu, 2.5) - ref) / np.abs(ref)) <= 1e-14
    assert np.allclose(v1 / (4 * math.pi), green(x, y, 2.5), rtol=1e-15)
    for i in range(5):
        assert dlayer_kernel(x[i], y[i], nu[i], 2.5) == pytest.approx(dlayer_ref(x[i], y[i], nu[i], 2.5), rel=1e-7)


def test_cone_coordinate_examples():
    f = BoxFrame(np.zeros(3), 2.0)
    assert np.allclose(cone_to_cartesian(ETA, math.pi / 2, 0.0, f), [3.0, 0.0, 0.0])
    x = cone_to_cartesian(0.3, 0.0, 1.234, f)
    assert np.allclose(x[:2], 0, atol=1e-15) and x[2] > 0
    with pytest.raises(ValueError):
        cone_to_cartesian(0.0, 0.1, 0.1, f)


def test_cone_roundtrip(rng):
    f = BoxFrame(rng.standard_normal(3), 0.7)
    s = rng.uniform(1e-3, ETA, 1000)
    th = rng.uniform(0, math.pi, 1000)
    ph = rng.uniform(0, 2 * math.pi, 1000)
    s2, th2, ph2 = cartesian_to_cone(cone_to_cartesian(s, th, ph, f), f)
    assert np.max(np.abs(s2 - s) / s) <= 1e-13
    assert np.max(np.abs(th2 - th)) <= 1e-7  # arccos is ill-conditioned only at the poles
    back = cone_to_cartesian(s2, th2, ph2, f)
    assert np.max(np.abs(back - cone_to_cartesian(s, th, ph, f))) <= 1e-12


def _random_config(rng, n):
    # kr stays below ~200 so the direct kernel oracle keeps ~1e-14 phase accuracy
    f = BoxFrame(rng.standard_normal(3), rng.uniform(0.2, 1.0))
    k = rng.uniform(0.5, 10.0)
    s = rng.uniform(0.05, ETA / 3, n)  # x outside three box radii
    th = rng.uniform(0, math.pi, n)
    ph = rng.uniform(0, 2 * math.pi, n)
    y = f.center + rng.uniform(-0.5, 0.5, (n, 3)) * f.side
    nu = rng.standard_normal((n, 3))
    nu /= np.linalg.norm(nu, axis=1)[:, None]
    return f, k, s, th, ph, y, nu


def test_w1_is_one_at_centre():
    f = BoxFrame(np.ones(3), 1.0)
    assert analytic_factor(1, 0.4, 1.0, 2.0, f.center, f, 7.0) == 1.0


def test_factorizations_reconstruct_kernels(rng):
    f, k, s, th, ph, y, nu = _random_config(rng, 1000)
    x = cone_to_cartesian(s, th, ph, f)
    g = green(x, y, k)
    dg = dlayer_kernel(x, y, nu, k)
    e1 = np.abs(centered_factor(1, s, f, k) * analytic_factor(1, s, th, ph, y, f, k) - g) / np.abs(g)
    e4 = np.abs(centered_factor(4, s, f, k) * analytic_factor(4, s, th, ph, y, f, k, nu) - dg) / np.abs(dg)
    e23 = np.abs(centered_factor(2, s, f, k) * analytic_factor(2, s, th, ph, y, f, k, nu)
                 - 1j * k * centered_factor(3, s, f, k) * analytic_factor(3, s, th, ph, y, f, k, nu) - dg) / np.abs(dg)
    assert e1.max() <= 1e-13
    # the double-layer kernel vanishes where <x - y, nu> = 0; measure relative to its scale there
    scale = np.abs(green(x, y, k)) * (k + 1 / np.linalg.norm(x - y, axis=1))
    assert np.max(np.abs(e4 * np.abs(dg)) / scale) <= 1e-13
    assert np.max(np.abs(e23 * np.abs(dg)) / scale) <= 1e-13


@given(st.integers(0, 2**32 - 1))
def test_w4_identity(seed):
    rng = np.random.default_rng(seed)
    f, k, s, th, ph, y, nu = _random_config(rng, 50)
    w2 = analytic_factor(2, s, th, ph, y, f, k, nu)
    w3 = analytic_factor(3, s, th, ph, y, f, k, nu)
    w4 = analytic_factor(4, s, th, ph, y, f, k, nu)
    ref = (s / f.radius) * w2 - 1j * k * w3
    assert np.max(np.abs(w4 - ref) / np.maximum(np.abs(ref), 1e-300)) <= 1e-14


def test_analytic_factor_rejects_bad_s():
    f = BoxFrame(np.zeros(3), 1.0)
    with pytest.raises(ValueError):
        analytic_factor(1, 1.0, 0.1, 0.1, np.zeros(3), f, 1.0)
    with pytest.raises(ValueError):
        analytic_factor(2, 0.1, 0.1, 0.1, np.zeros(3), f, 1.0)


def test_centered_factor_examples():
    f = BoxFrame(np.zeros(3), 2 / math.sqrt(3))  # h = 1
    assert centered_factor(1, 1.0, f, 0.0) == pytest.approx(1 / (4 * math.pi))
    assert centered_factor(2, 0.5, f, 3.0) == pytest.approx(centered_factor(1, 0.5, f, 3.0) / 2)


@given(st.floats(-0.5, 0.5), st.floats(-0.5, 0.5), st.floats(-0.5, 0.5), st.floats(0, math.pi),
       st.floats(0, 2 * math.pi))
def test_w1_bounded_near_zero(a, b, c, th, ph):
    f = BoxFrame(np.zeros(3), 1.0)
    y = np.array([a, b, c])
    for s in (1e-6, 0.1, 0.3, ETA):
        bound = 1 / (1 - s * np.linalg.norm(y) / f.radius)
        assert abs(analytic_factor(1, s, th, ph, y, f, 5.0)) <= bound * (1 + 1e-12)
    # the limit is the unimodular plane-wave factor exp(-ik xhat.(y - y0))
    xhat = np.array([math.sin(th) * math.cos(ph), math.sin(th) * math.sin(ph), math.cos(th)])
    w = analytic_factor(1, 1e-6, th, ph, y, f, 5.0)
    assert abs(w - cmath.exp(-5j * xhat @ y)) < 1e-5
    assert abs(abs(w) - 1) < 1e-5


def _sign_changes(v):
    sgn = np.sign(v)
    sgn = sgn[sgn != 0]
    return int(np.count_nonzero(np.diff(sgn)))


def test_w3_oscillates_less_than_v3():
    f = BoxFrame(np.zeros(3), 1.0)
    k = 4 * math.pi  # kH = 4 pi
    y = np.array([0.5, 0.5, 0.5])  # corner source
    nu = np.array([1.0, 0.0, 0.0])
    s = np.linspace(1e-3, ETA, 2000)
    th, ph = 1.1, 0.4
    x = cone_to_cartesian(s, th, ph, f)
    _, _, v3 = v_terms(x, np.broadcast_to(y, x.shape), np.broadcast_to(nu, x.shape), k)
    w3 = analytic_factor(3, s, th, ph, y, f, k, nu)
    assert _sign_changes(w3.real) < _sign_changes(v3.real)
