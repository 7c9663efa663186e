"""Command-line front end: ``ifgf-rp solve | mie-validate | benchmark | selftest``.

Settings come from built-in defaults, then an optional ``key = value``
config file (``--config``), then command-line flags, later sources
winning.  Exit codes: 0 success, 2 configuration error, 3 geometry file
parse error, 4 GMRES convergence failure, 5 selftest failure.
"""

import argparse
import csv
import logging
import math
import os
import re
import sys
import time

import numpy as np

from . import _backend
from .geometry import GeometryError, build_sphere, load_patch_file, refine_split
from .ifgf import IFGFOperator, relation_counts
from .postprocess import (FarFieldGrid, NearFieldGrid, eps_far, far_field, mie_far_field, near_field,
                          write_far_field_csv, write_near_field_csv)
from .selftest import run_selftest
from .solver import ConvergenceError, PlaneWave, PointSources, SolveConfig, resolve_strategy, solve

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_PARSE = 3
EXIT_CONVERGENCE = 4
EXIT_SELFTEST = 5

log = logging.getLogger("ifgf_rp")


class ConfigError(ValueError):
    pass


# name -> (type, default); names double as config-file keys and flag names
OPTIONS = {
    "geometry": (str, "sphere"),
    "patch_file": (str, None),
    "size_lambda": (float, 4.0),
    "k": (float, None),
    "radius": (float, 1.0),
    "splits": (int, None),
    "points_per_patch": (int, 12),
    "incidence": (str, "0,pi"),
    "point_sources": (str, None),
    "tol": (float, 1e-4),
    "max_iter": (int, 200),
    "restart": (int, None),
    "gamma": (float, None),
    "workers": (int, None),
    "out": (str, "ifgf_out"),
    "seed": (int, 0),
    "delta": (float, None),
    "delta_factor": (float, 1.0),
    "nbeta": (int, 64),
    "cov_d": (float, 4.0),
    "ps": (int, 3),
    "pang": (int, 5),
    "nc0": (int, 2),
    "ns0": (int, 1),
    "refine_threshold": (float, 0.25),
    "hybrid_threshold": (float, 0.5),
    "finest_box_lambda": (float, 0.5),
    "dl_strategy": (str, "auto"),
    "cache_dir": (str, None),
    "far_grid": (str, "200,200"),
    "near_plane": (str, None),
    "sizes": (str, "2,4,8"),
    "repeats": (int, 3),
    "no_accelerate": (bool, False),
}


def _parse_bool(v):
    if isinstance(v, bool):
        return v
    s = str(v).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {v!r}")


def _convert(name, value):
    typ, _ = OPTIONS[name]
    if value is None or (isinstance(value, str) and value.strip().lower() in ("none", "auto") and name not in
                         ("dl_strategy",)):
        return None if name != "dl_strategy" else "auto"
    try:
        return _parse_bool(value) if typ is bool else typ(value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad value for {name}: {value!r}") from exc


def read_config_file(path):
    """``key = value`` lines; ``#`` starts a comment; keys may use dashes or underscores."""
    out = {}
    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    for lineno, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key = value")
        key, value = (p.strip() for p in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in OPTIONS:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        out[key] = _convert(key, value)
    return out


def resolve_settings(args):
    """Defaults, then config file, then flags that were given."""
    settings = {name: default for name, (_, default) in OPTIONS.items()}
    if getattr(args, "config", None):
        settings.update(read_config_file(args.config))
    for name in OPTIONS:
        v = getattr(args, name, None)
        if v is not None and not (OPTIONS[name][0] is bool and v is False):
            settings[name] = _convert(name, v)
    if settings["workers"] is None:
        settings["workers"] = _backend.default_workers()
    if settings["geometry"] not in ("sphere", "file"):
        raise ConfigError("geometry must be 'sphere' or 'file'")
    if settings["geometry"] == "file" and not settings["patch_file"]:
        raise ConfigError("geometry=file needs --patch-file")
    if settings["geometry"] == "sphere" and settings["patch_file"]:
        raise ConfigError("give exactly one geometry source (sphere or --patch-file)")
    return settings


_ANGLE_CHARS = re.compile(r"^[0-9.eE+\-*/() ]+$")


def _angle(tok):
    """Angle from a number or simple arithmetic in ``pi`` such as ``pi/2`` or ``5*pi/4``."""
    expr = tok.strip().lower().replace("pi", f"({math.pi!r})")
    if not _ANGLE_CHARS.match(expr):
        raise ConfigError(f"bad angle {tok!r}")
    try:
        return float(eval(expr, {"__builtins__": {}}, {}))
    except Exception as exc:
        raise ConfigError(f"bad angle {tok!r}") from exc


def build_incident(settings):
    if settings["point_sources"]:
        try:
            locs = [tuple(float(c) for c in p.split(",")) for p in settings["point_sources"].split(";") if p.strip()]
            return PointSources(tuple(locs))
        except ValueError as exc:
            raise ConfigError(f"bad point_sources: {exc}") from exc
    parts = settings["incidence"].split(",")
    if len(parts) != 2:
        raise ConfigError("incidence must be 'theta,phi'")
    return PlaneWave(_angle(parts[0]), _angle(parts[1]))


def build_geometry(settings):
    """Mesh and wavenumber from the settings."""
    if settings["geometry"] == "file":
        try:
            mesh = load_patch_file(settings["patch_file"])
        except OSError as exc:
            raise ConfigError(f"cannot read patch file: {exc}") from exc
    else:
        size = settings["size_lambda"]
        splits = settings["splits"]
        if splits is None:
            splits = max(0, int(math.ceil(math.log2(size) - 1e-9))) if size and size > 1 else 0
        n = settings["points_per_patch"]
        mesh = build_sphere(settings["radius"], splits, (n, n))
    if settings["k"] is not None:
        k = settings["k"]
    else:
        if not settings["size_lambda"] or settings["size_lambda"] <= 0:
            raise ConfigError("give k or a positive size_lambda")
        # exact diameter for the sphere, convex-hull diameter otherwise
        diam = 2.0 * settings["radius"] if settings["geometry"] == "sphere" else mesh.diameter()
        k = 2 * math.pi * settings["size_lambda"] / diam
    return mesh, k


def solve_config(settings, k):
    try:
        return SolveConfig(k=k, gamma=settings["gamma"], tol=settings["tol"], max_iter=settings["max_iter"],
                           restart=settings["restart"], finest_box_lambda=settings["finest_box_lambda"],
                           n_c0=settings["nc0"], n_s0=settings["ns0"], p_s=settings["ps"], p_ang=settings["pang"],
                           dl_strategy=settings["dl_strategy"], refine_threshold=settings["refine_threshold"],
                           hybrid_threshold=settings["hybrid_threshold"], delta=settings["delta"],
                           delta_factor=settings["delta_factor"], n_beta=settings["nbeta"], cov_d=settings["cov_d"],
                           workers=settings["workers"], cache_dir=settings["cache_dir"],
                           accelerate=not settings["no_accelerate"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _far_grid(settings):
    try:
        n_phi, n_theta = (int(v) for v in settings["far_grid"].split(","))
        return FarFieldGrid(n_phi, n_theta)
    except ValueError as exc:
        raise ConfigError(f"bad far_grid: {exc}") from exc


def _near_grid(settings):
    spec = settings["near_plane"]
    if not spec:
        return None
    try:
        plane, off, a0, a1, b0, b1, na, nb = spec.split(":")
        return NearFieldGrid(plane, float(off), (float(a0), float(a1)), (float(b0), float(b1)), int(na), int(nb))
    except ValueError as exc:
        raise ConfigError(f"near_plane must be plane:offset:amin:amax:bmin:bmax:na:nb ({exc})") from exc


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (list, tuple)):
        return " ".join(_fmt(x) for x in v)
    return str(v)


def write_report(path, items):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for key, value in items:
            fh.write(f"{key} = {_fmt(value)}\n")


def write_density(path, density):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["index", "re", "im"])
        for i, v in enumerate(density):
            w.writerow([i, repr(float(v.real)), repr(float(v.imag))])


def _report_items(settings, cfg, result, extra=()):
    items = [("backend", _backend.backend_name())]
    items += [(f"setting.{k}", v) for k, v in sorted(settings.items())]
    items += [(f"config.{k}", v) for k, v in sorted(cfg.as_dict().items())]
    items += [("n_nodes", result.metadata.get("n_nodes")), ("n_patches", result.metadata.get("n_patches")),
              ("levels", result.metadata.get("levels")), ("n_proximity_pairs", result.metadata.get("n_pairs")),
              ("k", result.k), ("gamma", result.gamma), ("dl_strategy_used", result.strategy),
              ("converged", result.converged), ("iterations", result.iterations),
              ("residuals", list(result.residuals))]
    items += [(f"time.{k}", v) for k, v in sorted(result.timings.items())]
    items += list(extra)
    return items


def _run_solve(settings):
    """Shared part of ``solve`` and ``mie-validate``; returns (mesh, cfg, incident, result, exit code)."""
    mesh, k = build_geometry(settings)
    cfg = solve_config(settings, k)
    incident = build_incident(settings)
    far_grid = _far_grid(settings)
    near_grid = _near_grid(settings)
    out = settings["out"]
    try:
        result = solve(mesh, incident, cfg)
        code = EXIT_OK
    except ConvergenceError as exc:
        result = exc.result
        code = EXIT_CONVERGENCE
        log.error("%s", exc)
    os.makedirs(out, exist_ok=True)
    if code == EXIT_OK:
        write_density(os.path.join(out, "density.csv"), result.density)
        ff = far_field(mesh, result.density, result.gamma, k, far_grid)
        write_far_field_csv(os.path.join(out, "farfield.csv"), ff)
        if near_grid is not None:
            nf = near_field(mesh, result.density, result.gamma, k, near_grid, incident, cfg.delta, cfg.delta_factor)
            write_near_field_csv(os.path.join(out, "nearfield.csv"), nf)
    else:
        ff = None
    return mesh, cfg, incident, result, ff, code


def cmd_solve(settings):
    mesh, cfg, incident, result, ff, code = _run_solve(settings)
    write_report(os.path.join(settings["out"], "metadata.txt"), _report_items(settings, cfg, result))
    print(f"iterations={result.iterations} converged={result.converged} gamma={result.gamma:.6g} "
          f"apply_mean={result.timings.get('apply_mean', 0.0):.3f}s")
    return code


def cmd_mie_validate(settings):
    if settings["geometry"] != "sphere":
        raise ConfigError("mie-validate needs the built-in sphere")
    if settings["point_sources"]:
        raise ConfigError("mie-validate needs plane-wave incidence")
    mesh, cfg, incident, result, ff, code = _run_solve(settings)
    extra = []
    if ff is not None:
        ref = mie_far_field(settings["radius"], cfg.k, incident.direction, ff.directions())
        err = eps_far(ref.reshape(ff.values.shape), ff.values)
        extra.append(("eps_far", err))
        print(f"eps_far={err:.3e} iterations={result.iterations} N={mesh.n_nodes}")
    write_report(os.path.join(settings["out"], "metadata.txt"), _report_items(settings, cfg, result, extra))
    return code


def cmd_benchmark(settings):
    """Per-apply wall time over sphere sizes refined by patch splitting."""
    sizes = [float(s) for s in settings["sizes"].split(",") if s.strip()]
    rng = np.random.default_rng(settings["seed"])
    out = settings["out"]
    os.makedirs(out, exist_ok=True)
    rows = []
    mesh = None
    for i, size in enumerate(sizes):
        s = dict(settings, size_lambda=size)
        if mesh is None:
            mesh, k = build_geometry(s)
        else:
            factor = sizes[i] / sizes[i - 1]
            if abs(factor - 2.0) > 1e-12:
                mesh, k = build_geometry(s)
            else:
                mesh = refine_split(mesh)
                k = k * factor
        cfg = solve_config(s, k)
        op = IFGFOperator(mesh.points, mesh.normals, k, cfg.cone_config(), "W4", cfg.finest_box_lambda,
                          workers=cfg.workers)
        strategy = resolve_strategy(cfg, op)
        if strategy != "W4":
            op = IFGFOperator(mesh.points, mesh.normals, k, cfg.cone_config(), strategy, cfg.finest_box_lambda,
                              workers=cfg.workers)
        a = rng.standard_normal(mesh.n_nodes) + 1j * rng.standard_normal(mesh.n_nodes)
        op.apply(a, a)  # warm-up
        times = []
        for _ in range(max(1, settings["repeats"])):
            t0 = time.perf_counter()
            op.apply(a, a)
            times.append(time.perf_counter() - t0)
        segs = sum(lc.n_segments for lc in op.store.levels)
        rows.append(dict(size_lambda=size, n=mesh.n_nodes, levels=op.depth, apply_time=min(times),
                         segments=segs, boxes=sum(r[0] for r in relation_counts(op.tree))))
        print(f"size={size:g} N={mesh.n_nodes} levels={op.depth} apply={min(times):.3f}s segments={segs}")
    for a, b in zip(rows, rows[1:]):
        quad = math.log(b["n"] / a["n"], 4.0)
        b["growth_per_quadrupling"] = (b["apply_time"] / a["apply_time"]) ** (1.0 / quad) if quad > 0 else float("nan")
    with open(os.path.join(out, "benchmark.csv"), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        keys = ["size_lambda", "n", "levels", "apply_time", "segments", "boxes", "growth_per_quadrupling"]
        w.writerow(keys)
        for r in rows:
            w.writerow([repr(r[k]) if isinstance(r.get(k), float) else r.get(k, "") for k in keys])
    for r in rows[1:]:
        print(f"growth per quadrupling up to N={r['n']}: {r['growth_per_quadrupling']:.2f}")
    return EXIT_OK


def cmd_selftest(settings):
    checks = run_selftest(seed=settings["seed"], p_ang=settings["pang"])
    for c in checks:
        print(c.line())
    failed = [c for c in checks if not c.passed]
    print(f"{len(checks) - len(failed)}/{len(checks)} checks passed")
    return EXIT_SELFTEST if failed else EXIT_OK


COMMANDS = {"solve": cmd_solve, "mie-validate": cmd_mie_validate, "benchmark": cmd_benchmark,
            "selftest": cmd_selftest}


def build_parser():
    p = argparse.ArgumentParser(prog="ifgf-rp", description=__doc__.split("\n")[0])
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", help="key = value settings file")
    p.add_argument("--geometry", choices=["sphere", "file"])
    p.add_argument("--patch-file", dest="patch_file")
    p.add_argument("--size-lambda", dest="size_lambda", type=float, help="diameter in wavelengths")
    p.add_argument("--k", type=float, help="wavenumber (overrides --size-lambda)")
    p.add_argument("--radius", type=float)
    p.add_argument("--splits", type=int, help="sphere patch splits (default from the size)")
    p.add_argument("--points-per-patch", dest="points_per_patch", type=int)
    p.add_argument("--incidence", help="plane wave angles 'theta,phi' (e.g. 0,pi)")
    p.add_argument("--point-sources", dest="point_sources", help="'x,y,z;x,y,z;...'")
    p.add_argument("--tol", type=float)
    p.add_argument("--max-iter", dest="max_iter", type=int)
    p.add_argument("--restart", type=int)
    p.add_argument("--gamma", type=float)
    p.add_argument("--workers", type=int)
    p.add_argument("--out")
    p.add_argument("--seed", type=int)
    p.add_argument("--delta", type=float, help="absolute proximity distance")
    p.add_argument("--delta-factor", dest="delta_factor", type=float)
    p.add_argument("--nbeta", type=int)
    p.add_argument("--cov-d", dest="cov_d", type=float)
    p.add_argument("--ps", type=int)
    p.add_argument("--pang", type=int)
    p.add_argument("--nc0", type=int)
    p.add_argument("--ns0", type=int)
    p.add_argument("--refine-threshold", dest="refine_threshold", type=float)
    p.add_argument("--hybrid-threshold", dest="hybrid_threshold", type=float)
    p.add_argument("--finest-box-lambda", dest="finest_box_lambda", type=float)
    p.add_argument("--dl-strategy", dest="dl_strategy", choices=["auto", "W4", "W2W3", "hybrid"])
    p.add_argument("--cache-dir", dest="cache_dir")
    p.add_argument("--far-grid", dest="far_grid", help="'n_phi,n_theta'")
    p.add_argument("--near-plane", dest="near_plane", help="plane:offset:amin:amax:bmin:bmax:na:nb")
    p.add_argument("--sizes", help="benchmark sizes in wavelengths, e.g. 2,4,8")
    p.add_argument("--repeats", type=int)
    p.add_argument("--no-accelerate", dest="no_accelerate", action="store_true", default=None)
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        settings = resolve_settings(args)
        if settings["workers"] is not None:
            _backend.set_workers(settings["workers"])
        return COMMANDS[args.command](settings)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except GeometryError as exc:
        print(f"geometry error: {exc}", file=sys.stderr)
        return EXIT_PARSE


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
