"""Acceptance criteria 1-8.

Each test prints one ``CRITERION n: PASS|FAIL ...`` line as it finishes and
the lines are repeated in the terminal summary.  Wall-clock budgets are
reported next to each result; only the numerical thresholds decide
PASS/FAIL, since run times depend on the machine.
"""

import math
import subprocess
import sys
import time

import numpy as np
import pytest

from ifgf_rp.geometry import build_sphere, sphere_for_wavelengths
from ifgf_rp.ifgf import IFGFOperator, brute_force
from ifgf_rp.ifgf.harness import single_box_radial_error
from ifgf_rp.postprocess import FarFieldGrid, eps_far, far_field, mie_far_field
from ifgf_rp.rp_quadrature import CovParams, beta_precompute, classify_targets, correction_matrix
from ifgf_rp.selftest import check_factorizations, run_selftest
from ifgf_rp.solver import CombinedOperator, PlaneWave, SolveConfig, solve

pytestmark = pytest.mark.acceptance

REPORT = []

# sphere runs: (diameter in wavelengths, patch splits, reference iterations, SolveConfig overrides)
# at 8 wavelengths the W4 finest level leaves eps_far near 6e-4, so the two-channel double layer is kept on the
# finest (half-wavelength) level and GMRES is tightened
MIE_RUNS = {1: (4.0, 2, 12, dict(tol=1e-4, p_ang=6)),
            2: (8.0, 3, 14, dict(tol=1e-6, dl_strategy="hybrid", hybrid_threshold=0.75))}
EPS_FAR_MAX = 5e-4


def report(capsys, n, passed, detail):
    line = f"CRITERION {n}: {'PASS' if passed else 'FAIL'} {detail}"
    REPORT.append(line)
    with capsys.disabled():
        print("\n" + line)
    assert passed, line


def mie_regression(n):
    size, splits, ref_iter, overrides = MIE_RUNS[n]
    t0 = time.perf_counter()
    mesh, k = sphere_for_wavelengths(size, splits, 12)
    incident = PlaneWave(0.0, math.pi)
    res = solve(mesh, incident, SolveConfig(k=k, **overrides))
    grid = FarFieldGrid(200, 200)
    ff = far_field(mesh, res.density, res.gamma, k, grid)
    ref = mie_far_field(1.0, k, incident.direction, grid.directions()).reshape(grid.n_phi, grid.n_theta)
    err = eps_far(ref, ff.values)
    wall = time.perf_counter() - t0
    ok = abs(res.iterations - ref_iter) <= 4 and err <= EPS_FAR_MAX
    detail = (f"N={mesh.n_nodes} iterations={res.iterations} (target {ref_iter}+-4) eps_far={err:.2e} "
              f"(<= {EPS_FAR_MAX:g}) strategy={res.strategy} tol={overrides['tol']:g} "
              f"apply_mean={res.timings['apply_mean']:.1f}s wall={wall:.0f}s")
    return ok, detail


def test_criterion_1_mie_4lambda(capsys):
    report(capsys, 1, *mie_regression(1))


def test_criterion_2_mie_8lambda(capsys):
    report(capsys, 2, *mie_regression(2))


def test_criterion_3_acceleration_fidelity(capsys):
    t0 = time.perf_counter()
    mesh = build_sphere(1.0, 1, (12, 12))
    k = 2 * math.pi  # two wavelengths across
    acc = CombinedOperator(mesh, SolveConfig(k=k))
    direct = CombinedOperator(mesh, SolveConfig(k=k, accelerate=False), precompute=acc.precompute)
    rng = np.random.default_rng(0)
    worst = 0.0
    for phi in (rng.standard_normal(mesh.n_nodes) + 1j * rng.standard_normal(mesh.n_nodes),
                np.exp(1j * k * mesh.points @ np.array([0.0, 0.6, 0.8]))):
        a, b = acc.apply(phi), direct.apply(phi)
        worst = max(worst, float(np.max(np.abs(a - b)) / np.max(np.abs(b))))
    cfg = acc.config
    report(capsys, 3, worst <= 1e-3, f"N={mesh.n_nodes} P_s={cfg.p_s} P_ang={cfg.p_ang} max rel diff={worst:.2e} "
                                     f"(<= 1e-3) wall={time.perf_counter() - t0:.0f}s")


APPLY_TIMING = """
import sys, time, numpy as np
from ifgf_rp.geometry import sphere_for_wavelengths
from ifgf_rp.ifgf import IFGFOperator
from ifgf_rp.solver import SolveConfig
mesh, k = sphere_for_wavelengths(float(sys.argv[1]), int(sys.argv[2]), 12)
cfg = SolveConfig(k=k)
op = IFGFOperator(mesh.points, mesh.normals, k, cfg.cone_config(), "W4", cfg.finest_box_lambda)
a = np.random.default_rng(0).standard_normal(mesh.n_nodes) + 1j * np.random.default_rng(1).standard_normal(mesh.n_nodes)
op.apply(a, a)  # warm-up
times = []
for _ in range(3):
    t0 = time.perf_counter()
    op.apply(a, a)
    times.append(time.perf_counter() - t0)
print(mesh.n_nodes, min(times))
"""


def test_criterion_4_scaling(capsys):
    # each size runs in a fresh interpreter so heap state left by earlier tests does not skew the timings
    t0 = time.perf_counter()
    rows = []
    for size, splits in ((2.0, 1), (4.0, 2), (8.0, 3)):
        out = subprocess.run([sys.executable, "-c", APPLY_TIMING, str(size), str(splits)], capture_output=True,
                             text=True, check=True)
        n, t = out.stdout.split()
        rows.append((int(n), float(t)))
    growth = [b[1] / a[1] for a, b in zip(rows, rows[1:])]
    ok = all(3.5 <= g <= 6.0 for g in growth)
    table = " ".join(f"N={n}:{t:.2f}s" for n, t in rows)
    report(capsys, 4, ok, f"{table} growth per quadrupling={', '.join(f'{g:.2f}' for g in growth)} "
                          f"(in [3.5, 6.0]) wall={time.perf_counter() - t0:.0f}s")


def identity_errors(mesh, delta):
    pre = beta_precompute(mesh, classify_targets(mesh, delta=delta), CovParams(n_beta=128), 0.0)
    ones = np.ones(mesh.n_nodes)
    aw = mesh.area_weights
    d = brute_force(mesh.points, mesh.normals, None, aw, 0.0) + correction_matrix(pre, mesh, kernel="double") @ ones
    s = brute_force(mesh.points, mesh.normals, aw, None, 0.0) + correction_matrix(pre, mesh, kernel="single") @ ones
    return float(np.max(np.abs(s - 1.0))), float(np.max(np.abs(d + 0.5)))


def test_criterion_5_quadrature_identities(capsys):
    t0 = time.perf_counter()
    coarse = build_sphere(1.0, 1, (6, 6))
    delta = 2 * float(coarse.patch_spacing().max())  # held fixed under refinement
    s6, d6 = identity_errors(coarse, delta)
    s10, d10 = identity_errors(build_sphere(1.0, 1, (10, 10)), delta)
    ok = max(s6, d6) <= 1e-4 and s10 <= s6 / 10 and d10 <= d6 / 10
    report(capsys, 5, ok, f"6x6: S {s6:.1e} D {d6:.1e} (<= 1e-4); 10x10: S {s10:.1e} D {d10:.1e} "
                          f"(gain S {s6 / s10:.0f}x D {d6 / d10:.0f}x, >= 10x) wall={time.perf_counter() - t0:.0f}s")


def test_criterion_6_factorization_identities(capsys):
    checks = [check_factorizations(np.random.default_rng(seed)) for seed in range(5)]
    ok = all(c.passed for c in checks)
    worst = checks[int(np.argmax([not c.passed for c in checks]))] if not ok else checks[0]
    report(capsys, 6, ok, f"5 x 1000 random admissible configurations, first seed: {worst.detail}")


def test_criterion_7_dl_crossover(capsys):
    big = {}
    for H in (0.5, 1.0, 2.0, 4.0):
        big[H] = (single_box_radial_error(H, "DL4"), single_box_radial_error(H, "DL"))
    band = all(max(w4, w23) <= 2.0 * min(w4, w23) for w4, w23 in big.values())
    w4, w23 = single_box_radial_error(0.125, "DL4"), single_box_radial_error(0.125, "DL")
    gain = w4 / w23
    ok = band and gain >= 5.0
    ratios = " ".join(f"H={H:g}:{a / b:.2f}" for H, (a, b) in big.items())
    report(capsys, 7, ok, f"W4/W2W3 error ratio {ratios} (within 2x: {band}); H=0.125: W2W3 {gain:.2f}x more "
                          f"accurate (>= 5x)")


def test_criterion_8_selftest(capsys):
    checks = run_selftest(seed=0)
    failed = [c.line() for c in checks if not c.passed]
    report(capsys, 8, not failed, f"{len(checks) - len(failed)}/{len(checks)} selftest checks pass"
                                  + (f"; {'; '.join(failed)}" if failed else ""))
