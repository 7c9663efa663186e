"""Compare the numba kernels with the pure-numpy fallback.

Kernel-level timings call both implementations in-process; the end-to-end
row times one IFGF apply in a subprocess per backend, since the backend
is fixed at import through ``IFGF_RP_BACKEND``.

Usage: ``python benchmarks/bench_backends.py [--n 2000] [--size 2] [--repeats 3]``
"""

import argparse
import os
import subprocess
import sys
import time

import numpy as np

from ifgf_rp._kernels import get_impl
from ifgf_rp.geometry import build_sphere

E2E = """
import time, numpy as np
from ifgf_rp.geometry import sphere_for_wavelengths
from ifgf_rp.ifgf import IFGFOperator
mesh, k = sphere_for_wavelengths({size}, {splits}, 12)
op = IFGFOperator(mesh.points, mesh.normals, k)
a = np.random.default_rng(0).standard_normal(mesh.n_nodes) + 0j
op.apply(a, a)
t0 = time.perf_counter(); out = op.apply(a, a); dt = time.perf_counter() - t0
print(mesh.n_nodes, dt, float(np.abs(out).sum()))
"""


def best_of(fn, repeats):
    fn()  # compile / warm caches
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def kernel_rows(n, repeats):
    rng = np.random.default_rng(0)
    mesh = build_sphere(1.0, 0, (int(np.sqrt(n / 6)) + 1,) * 2)
    x = np.ascontiguousarray(mesh.points)
    aw = np.ascontiguousarray(rng.standard_normal(mesh.n_nodes) + 1j * rng.standard_normal(mesh.n_nodes))
    dirs = np.ascontiguousarray(rng.standard_normal((400, 3)))
    dirs /= np.linalg.norm(dirs, axis=1)[:, None]
    rows = []
    for name, call in [
        ("direct_all", lambda m: m.direct_all(x, mesh.points, mesh.normals, aw, aw, 6.0, True)),
        ("far_field_sum", lambda m: m.far_field_sum(dirs, mesh.points, mesh.normals, aw, 6.0, 3.0)),
    ]:
        t = {b: best_of(lambda: call(get_impl(b)), repeats) for b in ("numpy", "numba")}
        rows.append((name, mesh.n_nodes, t["numpy"], t["numba"]))
    return rows


def e2e_row(size, splits):
    t = {}
    for b in ("numpy", "numba"):
        env = dict(os.environ, IFGF_RP_BACKEND=b)
        out = subprocess.run([sys.executable, "-c", E2E.format(size=size, splits=splits)], env=env,
                             capture_output=True, text=True, check=True)
        n, dt, _ = out.stdout.split()
        t[b] = float(dt)
    return ("ifgf_apply", int(n), t["numpy"], t["numba"])


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    p.add_argument("--n", type=int, default=2000, help="approximate point count for kernel rows")
    p.add_argument("--size", type=float, default=2.0, help="sphere diameter in wavelengths for the apply row")
    p.add_argument("--repeats", type=int, default=3)
    args = p.parse_args(argv)
    splits = max(0, int(np.ceil(np.log2(args.size)))) if args.size > 1 else 0
    rows = kernel_rows(args.n, args.repeats) + [e2e_row(args.size, splits)]
    print(f"{'kernel':<16}{'N':>8}{'numpy [s]':>12}{'numba [s]':>12}{'speedup':>10}")
    for name, n, tn, tb in rows:
        print(f"{name:<16}{n:>8}{tn:>12.4f}{tb:>12.4f}{tn / tb:>10.1f}")


if __name__ == "__main__":
    main()
