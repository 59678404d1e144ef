"""Command-line front end: solves, Green-bundle reports, experiment sweeps.

Configuration is a single JSON document; command-line flags override its
fields.  Exit codes: 0 ok, 1 property/assertion failure, 2 configuration
error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__, pendulum_oracle
from .dynamics import (IntegrationError, PhasePoint, UnboundedModelError,
                       model_from_name, shifted_model)
from .green import (ConjugatePointError, GreenMonotonicityError,
                    OrbitUnboundedError, check_height_monotonicity,
                    detect_conjugate_points, green_minus, green_plus,
                    height_of_pushed_vertical, monotonicity_check)
from .grid import GridFunction
from .lo_solver import (AlphaEstimationError, AlphaMismatchError,
                        ConfigurationError, SolverConfig, SolverError,
                        estimate_alpha, hj_residual, iterate_steps, lo_step,
                        make_kernel, solve_discounted, solve_weak_kam)
from .semiconcave import graph_cloud, hausdorff_distance, leb_measure_exceed

EXIT_OK = 0
EXIT_PROPERTY = 1
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3

_CONFIG_ERRORS = (ConfigurationError, ValueError, KeyError)
_NUMERICAL_ERRORS = (SolverError, AlphaEstimationError, AlphaMismatchError,
                     IntegrationError, ConjugatePointError, OrbitUnboundedError,
                     GreenMonotonicityError, UnboundedModelError)

METRIC_COLUMNS = {
    "C0": "c0_sup",
    "hausdorff": "hausdorff",
    "fiberwise": "fiberwise",
    "d21": "d21",
    "measure_exceed": "measure_exceed",
    "sup_d2_gap": "sup_d2_gap",
}


def _fmt(x):
    return "%.17g" % float(x)


@dataclass
class ExperimentSpec:
    """One sweep: which model, which variable ranges over, what to record."""

    name: str
    model: str = "pendulum"
    c: float = 0.0
    sweep_variable: str = "lambda"   # lambda | t | I
    sweep_values: list = field(default_factory=list)
    n: int = 128
    tau: float = 0.05
    metrics: list = field(default_factory=lambda: ["C0"])
    out_dir: str = "."
    seed: int = 0
    fix_tol: float = 1e-6
    max_iters: int = 40000

    def validate(self):
        vals = list(self.sweep_values)
        if not vals:
            raise ConfigurationError("sweep_values must be non-empty")
        diffs = np.diff(vals)
        if not (np.all(diffs > 0) or np.all(diffs < 0)):
            raise ConfigurationError("sweep_values must be strictly monotone")
        if not self.metrics:
            raise ConfigurationError("metrics must be non-empty")
        for m in self.metrics:
            if m not in METRIC_COLUMNS:
                raise ConfigurationError(f"unknown metric {m!r}")
        if self.sweep_variable not in ("lambda", "t", "I"):
            raise ConfigurationError("sweep_variable must be lambda, t or I")


@dataclass
class RunManifest:
    config_hash: str
    version: str
    rows: list
    wall_clock: list


def _hash_config(payload):
    canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()


# ----------------------------------------------------------------------
# solve / discounted
# ----------------------------------------------------------------------
def _load_config(path):
    if path is None:
        return {}
    try:
        with open(path) as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigurationError(f"cannot read config file: {exc}") from exc


def _merged(args, cfg, key, default):
    flag = getattr(args, key, None)
    if flag is not None:
        return flag
    if key in cfg:
        return cfg[key]
    return default


def cmd_solve(args, discounted=False):
    cfg = _load_config(args.config)
    name = _merged(args, cfg, "model", "pendulum")
    dim = int(_merged(args, cfg, "dim", 1))
    model = model_from_name(name, dim=dim)
    lam = float(_merged(args, cfg, "lam", 0.1 if discounted else 0.0))
    if discounted and lam <= 0:
        raise ConfigurationError("field 'lam': discounted solve needs lambda > 0")
    if not discounted and lam != 0:
        raise ConfigurationError("field 'lam': weak-KAM solve needs lambda = 0")
    alpha_mode = _merged(args, cfg, "alpha", "auto")
    if alpha_mode != "auto":
        alpha_mode = float(alpha_mode)
    config = SolverConfig(
        n=int(_merged(args, cfg, "n", 128)),
        tau=float(_merged(args, cfg, "tau", 0.05)),
        lam=lam,
        c=float(_merged(args, cfg, "c", 0.0)),
        alpha_mode=alpha_mode,
        fix_tol=float(_merged(args, cfg, "fix_tol", 1e-6)),
        max_iters=int(_merged(args, cfg, "max_iters", 40000)),
        dim=dim,
    )
    out = Path(_merged(args, cfg, "out", "."))
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    if discounted:
        u, info = solve_discounted(model, config, return_info=True)
    else:
        u, info = solve_weak_kam(model, config, return_info=True)
    elapsed = time.perf_counter() - t0
    stem = "u_discounted" if discounted else "u_weak_kam"
    grid_path = out / f"{stem}.grid"
    u.save(grid_path, c=[config.c] * dim, lam=lam, alpha=info["alpha"])
    res = hj_residual(model, u, lam=lam, c=config.c, alpha=info["alpha"])
    report = {
        "model": name, "n": config.n, "tau": config.tau, "lambda": lam,
        "c": config.c, "alpha": info["alpha"], "iterations": info["iterations"],
        "hj_residual_sup": res.sup, "wall_clock": elapsed,
        "grid_file": str(grid_path),
    }
    report_path = out / f"{stem}_report.json"
    with open(report_path, "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
    print(f"wrote {grid_path} (alpha={info['alpha']:.8g}, "
          f"sup residual={res.sup:.3e}, {info['iterations']} iterations)")
    return EXIT_OK


# ----------------------------------------------------------------------
# green
# ----------------------------------------------------------------------
def cmd_green(args):
    cfg = _load_config(args.config)
    name = _merged(args, cfg, "model", "pendulum")
    dim = int(_merged(args, cfg, "dim", 1))
    model = model_from_name(name, dim=dim)
    lam = float(_merged(args, cfg, "lam", 0.0))
    q = np.array([float(v) for v in args.q.split(",")]) if args.q else np.zeros(dim)
    p = np.array([float(v) for v in args.p.split(",")]) if args.p else np.zeros(dim)
    x = PhasePoint(q, p)
    violated = False

    if args.monotonicity:
        times = [float(v) for v in args.times.split(",")] if args.times else [0.5, 1, 2, 4]
        if args.swap_fixture:
            # internal negative control: feed the checker deliberately
            # disordered heights to exercise the failure path
            plus = [(t, np.eye(dim) / t) for t in times]
            minus = [(t, -np.eye(dim) / t) for t in times]
            report = check_height_monotonicity(list(reversed(plus)), minus)
        else:
            report = monotonicity_check(model, x, lam, times)
        print(f"monotonicity ok={report.ok} worst_margin={report.worst_margin:.3e}")
        for line in report.details:
            print("  " + line)
        violated = not report.ok
    elif args.conjugate:
        rep = detect_conjugate_points(model, x, lam, float(args.t or 4.0))
        print(f"conjugate times: {[f'{t:.8f}' for t in rep.times]} "
              f"min|det X|={rep.min_abs_det:.3e}")
    elif args.plus or args.minus:
        fn = green_plus if args.plus else green_minus
        res = fn(model, x, lam=lam, t_max=float(args.t_max), tol=float(args.tol))
        h = res.height[0, 0] if dim == 1 else res.height
        print(f"height={h if dim > 1 else f'{h:.10g}'} t_used={res.t_used:g} "
              f"converged={res.converged} cauchy_gap={res.cauchy_gap:.3e}")
    else:
        t = float(args.t or 1.0)
        S = height_of_pushed_vertical(model, x, t, lam=lam)
        h = S[0, 0] if dim == 1 else S
        print(f"height={h if dim > 1 else f'{h:.10g}'} at t={t:g}")
    if args.do_assert and violated:
        return EXIT_PROPERTY
    return EXIT_OK


# ----------------------------------------------------------------------
# experiment
# ----------------------------------------------------------------------
def _preset_spec(name, out_dir):
    ip = pendulum_oracle.I_PLUS
    if name == "discounted-pendulum":
        return ExperimentSpec(
            name=name, model="pendulum", c=1.5, sweep_variable="lambda",
            sweep_values=[0.2, 0.1, 0.05, 0.025], n=128, tau=0.05,
            metrics=["hausdorff", "C0"], out_dir=out_dir, fix_tol=1e-5)
    if name == "cohom-pendulum":
        return ExperimentSpec(
            name=name, model="pendulum", sweep_variable="I",
            sweep_values=[ip + 0.1, ip + 0.03, ip + 0.01, ip + 0.003],
            n=4096, tau=0.05, metrics=["d21", "sup_d2_gap", "measure_exceed"],
            out_dir=out_dir)
    if name == "lo-iteration":
        return ExperimentSpec(
            name=name, model="free", c=0.3, sweep_variable="t",
            sweep_values=[0.25, 0.5, 1.0, 2.0, 4.0], n=128, tau=0.05,
            metrics=["C0"], out_dir=out_dir)
    raise ConfigurationError(f"unknown preset {name!r}")


def _run_lambda_point(spec, model, lam, ref_cloud, ref_vals, alpha):
    config = SolverConfig(n=spec.n, tau=spec.tau, lam=lam, c=spec.c,
                          alpha_mode=alpha, fix_tol=spec.fix_tol,
                          max_iters=spec.max_iters)
    u = solve_discounted(model, config)
    row = {}
    if "hausdorff" in spec.metrics:
        cloud = graph_cloud(u, c=spec.c, tag=f"lambda={lam:g}")
        row["hausdorff"] = hausdorff_distance(cloud, ref_cloud)
    if "C0" in spec.metrics:
        row["c0_sup"] = float(np.max(np.abs(
            (u.values - u.values.mean()) - ref_vals)))
    return row


def _run_experiment_rows(spec):
    """Compute metric rows for every sweep point (order preserved)."""
    model = model_from_name(spec.model)
    rows = [None] * len(spec.sweep_values)
    clocks = [None] * len(spec.sweep_values)

    if spec.sweep_variable == "lambda":
        config0 = SolverConfig(n=spec.n, tau=spec.tau, lam=0.0, c=spec.c,
                               fix_tol=spec.fix_tol, max_iters=spec.max_iters)
        alpha = estimate_alpha(model, config0)
        u_ref = solve_weak_kam(model, config0, kernel=None,
                               drift_tol=1e-2)
        ref_cloud = graph_cloud(u_ref, c=spec.c, tag="limit")
        ref_vals = u_ref.values - u_ref.values.mean()

        def work(i):
            t0 = time.perf_counter()
            row = _run_lambda_point(spec, model, spec.sweep_values[i],
                                    ref_cloud, ref_vals, alpha)
            return i, row, time.perf_counter() - t0

    elif spec.sweep_variable == "t":
        config = SolverConfig(n=spec.n, tau=spec.tau, lam=0.0, c=spec.c,
                              fix_tol=spec.fix_tol, max_iters=spec.max_iters)
        alpha = estimate_alpha(model, config)
        kernel = make_kernel(model, config)
        theta = np.arange(spec.n) / spec.n
        u0 = GridFunction(0.3 * np.cos(2 * np.pi * theta))
        u_fix = solve_weak_kam(model, config, kernel=kernel)
        ref_vals = u_fix.values - u_fix.values.mean()

        def work(i):
            t0 = time.perf_counter()
            steps = int(round(spec.sweep_values[i] / spec.tau))
            ut = iterate_steps(model, u0, config, steps, kernel=kernel, alpha=alpha)
            row = {"c0_sup": float(np.max(np.abs(
                (ut.values - ut.values.mean()) - ref_vals)))}
            return i, row, time.perf_counter() - t0

    else:  # sweep over the pendulum cohomology value I
        if spec.model != "pendulum":
            raise ConfigurationError("I sweeps are defined for the pendulum chart")
        ip = pendulum_oracle.I_PLUS
        u_plus_vals, _ = pendulum_oracle.u_grid(ip, spec.n)
        u_plus = GridFunction(u_plus_vals)

        def work(i):
            t0 = time.perf_counter()
            I = spec.sweep_values[i]
            row = {}
            if "d21" in spec.metrics:
                row["d21"] = pendulum_oracle.d21_gap(I)
            if "sup_d2_gap" in spec.metrics:
                row["sup_d2_gap"] = pendulum_oracle.oracle_sup_d2_gap(I)[0]
            if "measure_exceed" in spec.metrics:
                vals, _ = pendulum_oracle.u_grid(I, spec.n)
                res = leb_measure_exceed(GridFunction(vals), u_plus, 0.05)
                row["measure_exceed"] = res.measure
            return i, row, time.perf_counter() - t0

    with ThreadPoolExecutor(max_workers=spec_workers(spec)) as pool:
        for i, row, dt in pool.map(work, range(len(spec.sweep_values))):
            rows[i] = row
            clocks[i] = dt
    return rows, clocks


def spec_workers(spec):
    return max(1, int(getattr(spec, "workers", 1)))


def cmd_experiment(args):
    cfg = _load_config(args.config)
    out_dir = args.out or cfg.get("out_dir", ".")
    if args.preset:
        spec = _preset_spec(args.preset, out_dir)
    else:
        if not cfg:
            raise ConfigurationError("experiment needs --preset or --config")
        known = {f for f in ExperimentSpec.__dataclass_fields__}
        spec = ExperimentSpec(**{k: v for k, v in cfg.items() if k in known})
        spec.out_dir = out_dir
    if args.workers:
        spec.workers = int(args.workers)
    spec.validate()

    out = Path(spec.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    payload = {k: getattr(spec, k) for k in ExperimentSpec.__dataclass_fields__}
    cfg_hash = _hash_config(payload)

    rows, clocks = _run_experiment_rows(spec)

    columns = [spec.sweep_variable] + [METRIC_COLUMNS[m] for m in spec.metrics]
    csv_path = out / f"{spec.name}.csv"
    with open(csv_path, "w") as fh:
        fh.write(",".join(columns) + "\n")
        for val, row in zip(spec.sweep_values, rows):
            cells = [_fmt(val)]
            for m in spec.metrics:
                key = METRIC_COLUMNS[m]
                cells.append(_fmt(row[key]) if row and key in row else "failed")
            fh.write(",".join(cells) + "\n")

    plot_path = out / f"{spec.name}.dat"
    first_metric = METRIC_COLUMNS[spec.metrics[0]]
    with open(plot_path, "w") as fh:
        for val, row in zip(spec.sweep_values, rows):
            if row and first_metric in row:
                fh.write(f"{_fmt(val)} {_fmt(row[first_metric])}\n")

    manifest = RunManifest(config_hash=cfg_hash, version=__version__,
                           rows=[dict(r) if r else None for r in rows],
                           wall_clock=clocks)
    manifest_path = out / f"{spec.name}_manifest.json"
    with open(manifest_path, "w") as fh:
        json.dump(manifest.__dict__, fh, indent=2, sort_keys=True)
    print(f"wrote {csv_path}, {plot_path}, {manifest_path}")
    return EXIT_OK


# ----------------------------------------------------------------------
# oracle
# ----------------------------------------------------------------------
def cmd_oracle(args):
    if args.e is not None:
        print(_fmt(pendulum_oracle.c_of_e(float(args.e))))
        return EXIT_OK
    I = float(args.I) if args.I is not None else 1.5
    n = int(args.n or 256)
    vals, closure = pendulum_oracle.u_grid(I, n)
    dus = pendulum_oracle.du_grid(I, n)
    d2us = pendulum_oracle.d2u_grid(I, n)
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"oracle_I{I:g}.csv"
    with open(path, "w") as fh:
        fh.write("theta,u,du,d2u\n")
        for j in range(n):
            fh.write(",".join(_fmt(x) for x in (j / n, vals[j], dus[j], d2us[j])) + "\n")
    print(f"wrote {path} (e={_fmt(pendulum_oracle.e_of_I(I))}, "
          f"periodicity defect={closure:.3e})")
    return EXIT_OK


# ----------------------------------------------------------------------
# entry point
# ----------------------------------------------------------------------
def build_parser():
    parser = argparse.ArgumentParser(
        prog="weakkam",
        description="Weak-KAM toolkit: value iteration, Green bundles, experiments.",
        epilog="Exit codes: 0 ok, 1 property/assertion failure, 2 config error, "
               "3 numerical failure.  Experiment CSV columns are the sweep "
               "variable followed by one fixed column per metric: "
               + ", ".join(f"{k} -> {v}" for k, v in METRIC_COLUMNS.items()))
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", help="JSON config file (flags override fields)")
        p.add_argument("--model", help="pendulum | free | mechanical:<json terms>")
        p.add_argument("--dim", type=int)

    p_solve = sub.add_parser("solve", help="weak-KAM fixed point (lambda = 0)")
    add_common(p_solve)
    for flag, typ in (("--c", float), ("--n", int), ("--tau", float),
                      ("--fix-tol", float), ("--max-iters", int)):
        p_solve.add_argument(flag, dest=flag.strip("-").replace("-", "_"), type=typ)
    p_solve.add_argument("--alpha", help='"auto" or a number')
    p_solve.add_argument("--out")

    p_disc = sub.add_parser("discounted", help="discounted fixed point (lambda > 0)")
    add_common(p_disc)
    for flag, typ in (("--c", float), ("--n", int), ("--tau", float), ("--lam", float),
                      ("--fix-tol", float), ("--max-iters", int)):
        p_disc.add_argument(flag, dest=flag.strip("-").replace("-", "_"), type=typ)
    p_disc.add_argument("--alpha", help='"auto" or a number')
    p_disc.add_argument("--out")

    p_green = sub.add_parser("green", help="Green bundle / conjugate point reports")
    add_common(p_green)
    p_green.add_argument("--q", help="comma-separated torus point")
    p_green.add_argument("--p", help="comma-separated covector")
    p_green.add_argument("--lam", type=float)
    p_green.add_argument("--t", type=float, help="duration for a single height")
    p_green.add_argument("--t-max", default="16384")
    p_green.add_argument("--tol", default="1e-6")
    p_green.add_argument("--plus", action="store_true")
    p_green.add_argument("--minus", action="store_true")
    p_green.add_argument("--monotonicity", action="store_true")
    p_green.add_argument("--times", help="comma-separated durations")
    p_green.add_argument("--conjugate", action="store_true")
    p_green.add_argument("--assert", dest="do_assert", action="store_true",
                         help="exit 1 on property violation")
    p_green.add_argument("--swap-fixture", action="store_true",
                         help="internal: feed the checker a disordered fixture")

    p_exp = sub.add_parser("experiment", help="run a sweep preset or custom spec")
    p_exp.add_argument("--preset",
                       choices=["discounted-pendulum", "cohom-pendulum", "lo-iteration"])
    p_exp.add_argument("--config", help="JSON ExperimentSpec document")
    p_exp.add_argument("--out")
    p_exp.add_argument("--workers", type=int)

    p_oracle = sub.add_parser("oracle", help="dump pendulum closed forms")
    p_oracle.add_argument("--I", type=float, help="cohomology value (>= 4/pi)")
    p_oracle.add_argument("--e", type=float, help="print c(e) and exit")
    p_oracle.add_argument("--n", type=int)
    p_oracle.add_argument("--out")
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if exc.code is not None else EXIT_CONFIG
    try:
        if args.command == "solve":
            return cmd_solve(args, discounted=False)
        if args.command == "discounted":
            return cmd_solve(args, discounted=True)
        if args.command == "green":
            return cmd_green(args)
        if args.command == "experiment":
            return cmd_experiment(args)
        if args.command == "oracle":
            return cmd_oracle(args)
        raise ConfigurationError(f"unknown command {args.command!r}")
    except _CONFIG_ERRORS as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except _NUMERICAL_ERRORS as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
