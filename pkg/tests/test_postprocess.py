import csv
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from ifgf_rp.geometry import build_sphere
from ifgf_rp.postprocess import (FarFieldGrid, NearFieldGrid, eps_far, eps_near, far_field, far_field_values,
                                 interior_mask, layer_potential, mie_far_field, mie_truncation, near_field,
                                 surface_distance, write_far_field_csv, write_near_field_csv)
from ifgf_rp.solver import PlaneWave, SolveConfig, solve

Z = np.array([0.0, 0.0, 1.0])


def rotation(axis, angle):
    axis = np.asarray(axis, float) / np.linalg.norm(axis)
    K = np.array([[0, -axis[2], axis[1]], [axis[2], 0, -axis[0]], [-axis[1], axis[0], 0]])
    return np.eye(3) + math.sin(angle) * K + (1 - math.cos(angle)) * K @ K


# ----------------------------------------------------------------------------
# grids
# ----------------------------------------------------------------------------

def test_far_grid_layout():
    g = FarFieldGrid(5, 9)
    assert g.phi[1] == pytest.approx(math.pi / 4) and g.phi[-1] == pytest.approx(math.pi)
    assert g.theta[1] == pytest.approx(math.pi / 4) and g.theta[-1] == pytest.approx(2 * math.pi)
    d = g.directions()
    assert d.shape == (45, 3)
    assert np.allclose(np.linalg.norm(d, axis=1), 1.0, atol=1e-15)
    assert np.allclose(d[:9], Z)  # phi = 0 row is the north pole
    assert np.allclose(d[9 * 2 + 2], [0, 1, 0], atol=1e-15)  # phi = pi/2, theta = pi/2
    with pytest.raises(ValueError):
        FarFieldGrid(1, 5)


def test_near_grid_layout():
    g = NearFieldGrid("xz", 0.25, (-2.0, 2.0), (-1.0, 3.0), 5, 9)
    assert g.spacing == (1.0, 0.5)
    p = g.points()
    assert p.shape == (45, 3)
    assert np.array_equal(p[0], [-2.0, 0.25, -1.0])
    assert np.array_equal(p[1], [-2.0, 0.25, -0.5])  # second index fastest
    assert np.array_equal(p[-1], [2.0, 0.25, 3.0])
    assert np.array_equal(NearFieldGrid("yz", 1.0, (0, 1), (0, 1), 2, 2).points()[3], [1.0, 1.0, 1.0])
    with pytest.raises(ValueError):
        NearFieldGrid("ab", 0.0, (0, 1), (0, 1), 3, 3)
    with pytest.raises(ValueError):
        NearFieldGrid("xy", 0.0, (0, 1), (0, 1), 1, 3)


# ----------------------------------------------------------------------------
# error metrics
# ----------------------------------------------------------------------------

def test_eps_examples(rng):
    ref = rng.standard_normal(20) + 1j * rng.standard_normal(20)
    assert eps_far(ref, ref) == 0.0
    assert eps_far(ref, 2 * ref) == pytest.approx(1.0)
    assert eps_far(ref, -ref) == 0.0
    assert eps_near(ref, 1j * ref) == 0.0
    with pytest.raises(ValueError):
        eps_far(ref, ref[:5])


def test_eps_zero_reference_excluded():
    ref = np.array([1.0, 0.0, 2.0, 0.0])
    apx = np.array([1.1, 5.0, 2.0, 7.0])
    e, excluded = eps_far(ref, apx, return_excluded=True)
    assert excluded == 2 and e == pytest.approx(0.1)
    e, excluded = eps_near(np.zeros(3), np.ones(3), return_excluded=True)
    assert math.isnan(e) and excluded == 3


@given(st.floats(0, 2 * math.pi), st.integers(0, 10 ** 6))
def test_eps_phase_invariant(angle, seed):
    r = np.random.default_rng(seed)
    ref = r.standard_normal(30) + 1j * r.standard_normal(30)
    apx = ref * (1 + 0.01 * r.standard_normal(30))
    assert eps_far(ref, apx * np.exp(1j * angle)) == pytest.approx(eps_far(ref, apx), rel=1e-12, abs=1e-15)


# ----------------------------------------------------------------------------
# Mie reference
# ----------------------------------------------------------------------------

def test_mie_truncation_rule():
    assert mie_truncation(4 * math.pi) == math.ceil(4 * math.pi + 6 * (4 * math.pi) ** (1 / 3) + 20)


@pytest.mark.parametrize("kr", [math.pi, 2 * math.pi, 4 * math.pi])
def test_mie_rotational_symmetry(kr, rng):
    d = np.array([0.3, -0.5, 0.8])
    d /= np.linalg.norm(d)
    x = rng.standard_normal((10, 3))
    x /= np.linalg.norm(x, axis=1)[:, None]
    # rotate every direction about the incidence axis: the angle to d is unchanged
    y = x @ rotation(d, 1.234).T
    assert np.max(np.abs(mie_far_field(1.0, kr, d, x) - mie_far_field(1.0, kr, d, y))) <= 1e-12


@pytest.mark.parametrize("kr", [math.pi, 2 * math.pi, 4 * math.pi])
def test_mie_truncation_converged(kr):
    c = np.linspace(-1, 1, 101)
    dirs = np.column_stack([np.sqrt(1 - c ** 2), np.zeros_like(c), c])
    a = mie_far_field(1.0, kr, Z, dirs)
    b = mie_far_field(1.0, kr, Z, dirs, n_terms=mie_truncation(kr) + 10)
    assert np.max(np.abs(a - b)) < 1e-12


@pytest.mark.parametrize("kr", [math.pi, 2 * math.pi, 4 * math.pi])
def test_mie_optical_theorem(kr):
    k = kr / 1.5
    c, w = np.polynomial.legendre.leggauss(200)
    dirs = np.column_stack([np.sqrt(1 - c ** 2), np.zeros_like(c), c])
    f = mie_far_field(1.5, k, Z, dirs)
    sigma = 2 * math.pi * np.sum(w * np.abs(f) ** 2)
    forward = 4 * math.pi / k * mie_far_field(1.5, k, Z, Z[None])[0].imag
    assert abs(sigma - forward) <= 1e-8 * abs(forward)


def test_mie_low_frequency_limit():
    # a small sound-soft sphere radiates like a monopole of strength -R
    k, R = 1e-3, 1.0
    val = mie_far_field(R, k, Z, np.array([[1.0, 0, 0], [0, 0, -1.0]]))
    assert np.allclose(val, -R, rtol=2e-3)
    with pytest.raises(ValueError):
        mie_far_field(1.0, 0.0, Z, Z[None])


# ----------------------------------------------------------------------------
# fields
# ----------------------------------------------------------------------------

@pytest.fixture(scope="module")
def sphere_density():
    mesh = build_sphere(1.0, 0, (8, 8))
    k = 3.0
    phi = np.exp(1j * k * mesh.points @ np.array([0.0, 0.6, 0.8])) * (1 + mesh.points[:, 0])
    return mesh, k, phi


def test_far_field_zero_and_shape(sphere_density):
    mesh, k, _ = sphere_density
    g = far_field(mesh, np.zeros(mesh.n_nodes), 3.0, k, FarFieldGrid(4, 6))
    assert g.values.shape == (4, 6) and not np.any(g.values)
    with pytest.raises(ValueError):
        far_field_values(mesh, np.ones(3), 3.0, k, Z)


def test_far_field_linear(sphere_density, rng):
    mesh, k, phi = sphere_density
    psi = rng.standard_normal(mesh.n_nodes)
    d = FarFieldGrid(6, 7).directions()
    lhs = far_field_values(mesh, 2 * phi - 3j * psi, 3.0, k, d)
    rhs = 2 * far_field_values(mesh, phi, 3.0, k, d) - 3j * far_field_values(mesh, psi, 3.0, k, d)
    assert np.max(np.abs(lhs - rhs)) <= 1e-13 * np.max(np.abs(lhs))


def test_far_field_gamma_linear(sphere_density):
    mesh, k, phi = sphere_density
    d = FarFieldGrid(6, 7).directions()
    diff = far_field_values(mesh, phi, 1.0, k, d) - far_field_values(mesh, phi, 0.0, k, d)
    e = np.exp(-1j * k * d @ mesh.points.T)
    ref = -1j / (4 * math.pi) * e @ (phi * mesh.area_weights)
    assert np.max(np.abs(diff - ref)) <= 1e-13 * np.max(np.abs(ref))


def test_far_field_is_potential_asymptote(sphere_density):
    mesh, k, phi = sphere_density
    d = FarFieldGrid(5, 5).directions()
    R = 1e6
    us = layer_potential(mesh, phi, 3.0, k, R * d)
    ff = far_field_values(mesh, phi, 3.0, k, d)
    assert np.max(np.abs(us * R * np.exp(-1j * k * R) - ff)) <= 1e-4 * np.max(np.abs(ff))


def test_layer_potential_zero(sphere_density):
    mesh, k, _ = sphere_density
    assert not np.any(layer_potential(mesh, np.zeros(mesh.n_nodes), 3.0, k, [[0, 0, 3.0]]))


def test_interior_mask(sphere_density):
    mesh, _, _ = sphere_density
    pts = np.array([[0, 0, 0], [0.5, 0.2, -0.3], [1.2, 0, 0], [0, 0, -3.0], [0.9, 0.1, 0.1]])
    assert interior_mask(mesh, pts).tolist() == [True, True, False, False, True]


def test_surface_distance(sphere_density):
    mesh, _, _ = sphere_density
    x = np.array([[1.5, 0, 0], [0, 0.8, 0.6], [0, 0, 0.9], [0, 0, 4.0]]) * np.array([[1], [1.02], [1], [1]])
    dist = surface_distance(mesh, x, 0.6)
    assert dist[0] == pytest.approx(0.5, abs=1e-8)
    assert dist[1] == pytest.approx(0.02, abs=1e-8)
    assert dist[2] == pytest.approx(0.1, abs=1e-8)
    assert dist[3] == math.inf


def test_near_field_flags_and_total(sphere_density):
    mesh, k, phi = sphere_density
    g = NearFieldGrid("xy", 0.0, (-2.0, 2.0), (-2.0, 2.0), 9, 9)
    pw = PlaneWave(0.0, math.pi)
    out = near_field(mesh, phi, 3.0, k, g, incident=pw)
    pts = g.points()
    r = np.linalg.norm(pts, axis=1).reshape(9, 9)
    assert np.array_equal(out.interior, r < 1.0)
    assert np.all(out.near[np.abs(r - 1.0) < 1e-9])
    assert not np.any(out.near[r > 1.9])
    assert np.array_equal(out.total, out.scattered + pw(pts, k).reshape(9, 9))
    zero = near_field(mesh, np.zeros(mesh.n_nodes), 3.0, k, g)
    assert not np.any(zero.scattered)


# ----------------------------------------------------------------------------
# CSV output
# ----------------------------------------------------------------------------

def test_far_csv_roundtrip(tmp_path, rng):
    g = FarFieldGrid(3, 4, rng.standard_normal((3, 4)) + 1j * rng.standard_normal((3, 4)))
    path = tmp_path / "far.csv"
    write_far_field_csv(path, g)
    raw = path.read_bytes()
    assert b"\r" not in raw
    rows = list(csv.reader(raw.decode("utf-8").splitlines()))
    assert rows[0] == ["m", "n", "phi", "theta", "x", "y", "z", "re", "im", "abs"]
    assert len(rows) == 13
    m, n = int(rows[7][0]), int(rows[7][1])
    assert (m, n) == (1, 2)
    assert complex(float(rows[7][7]), float(rows[7][8])) == g.values[1, 2]
    assert float(rows[7][3]) == g.theta[2]


def test_near_csv_roundtrip(tmp_path, rng):
    g = NearFieldGrid("xy", 2.0, (0.0, 1.0), (0.0, 1.0), 2, 3)
    g.scattered = rng.standard_normal((2, 3)) + 1j * rng.standard_normal((2, 3))
    g.total = g.scattered + 1.0
    g.interior = np.zeros((2, 3), bool)
    g.near = np.eye(2, 3, dtype=bool)
    path = tmp_path / "near.csv"
    write_near_field_csv(path, g)
    rows = list(csv.reader(path.read_text(encoding="utf-8").splitlines()))
    assert rows[0][:5] == ["i", "j", "x", "y", "z"] and rows[0][-2:] == ["interior", "near"]
    assert len(rows) == 7
    assert float(rows[5][5]) == g.scattered[1, 1].real and rows[5][-1] == "1"
    assert [float(v) for v in rows[5][2:5]] == [1.0, 0.5, 2.0]


# ----------------------------------------------------------------------------
# solved scattering problem
# ----------------------------------------------------------------------------

def test_low_frequency_mie():
    # sphere half a wavelength across
    mesh = build_sphere(1.0, 1, (8, 8))
    k = math.pi / 2
    pw = PlaneWave(0.0, math.pi)
    res = solve(mesh, pw, SolveConfig(k=k, tol=1e-8))
    assert res.converged
    grid = FarFieldGrid(40, 40)
    ff = far_field(mesh, res.density, res.gamma, k, grid)
    ref = mie_far_field(1.0, k, pw.direction, grid.directions()).reshape(40, 40)
    assert eps_far(ref, ff.values) <= 1e-4
