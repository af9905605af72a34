"""Command-line driver.

Exit codes: 0 success, 1 solver failure (or a failed check), 2 usage or
configuration error.  Outputs are written under ``--out`` and are
bitwise reproducible unless ``--wall-clock`` is given.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .adjoint import OptimizerOptions, adjoint_gradient, lbfgs, polak_ribiere_cg, reduced_objective
from .admm import solve
from .burgers import (BurgersConfig, explicit_rollout, initial_profile, make_implicit_problem,
                      newton_implicit_rollout)
from .config import Scenario, build_scenario, bundled_config, certify_scenario, load_config
from .diagnostics import RunManifest, source_revision, write_csv, write_svg
from .errors import ConfigurationError, DimensionError, DynAdmmError, ParameterError
from .lagrangian import aug_lagrangian_block_gradient, augmented_lagrangian_value
from .lorenz import rmse
from .problem import (ControlledProblem, Shape, check_map_transpose, check_term_gradient,
                      fd_gradient, feasibility_rollout, relative_error)
from .tuning import BoxWatch

__all__ = ["main", "build_parser"]

CONFIG_ERRORS = (ConfigurationError, ParameterError, DimensionError)
CHECKGRAD_TOL = 1e-4
BUNDLED = ("lorenz4dvar", "burgers", "synthetic", "lq")

log = logging.getLogger("dynadmm")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(2, f"{self.prog}: error: {message}\n")


def _global_flags():
    # SUPPRESS defaults let the flags appear before or after the subcommand
    p = argparse.ArgumentParser(add_help=False)
    S = argparse.SUPPRESS
    p.add_argument("--out", default=S, help="output directory (default: current directory)")
    p.add_argument("--max-iter", type=int, default=S, help="iteration cap")
    p.add_argument("--tol", type=float, default=S,
                   help="feasibility and KKT tolerance of the ADMM stopping rule")
    p.add_argument("--svg", action="store_true", default=S,
                   help="write objective and constraint-error plots")
    p.add_argument("--wall-clock", action="store_true", default=S,
                   help="record wall times and timestamps (outputs stop being reproducible)")
    p.add_argument("-v", "--verbose", action="store_true", default=S)
    return p


def build_parser():
    flags = _global_flags()
    parser = _Parser(prog="dynadmm", parents=[flags],
                     description="Proximal ADMM for dynamics-constrained optimization.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    cfg_help = "config file, or the name of a bundled config (" + ", ".join(BUNDLED) + ")"
    p = sub.add_parser("solve", parents=[flags], help="run ADMM on a configured instance")
    p.add_argument("config", help=cfg_help)
    p = sub.add_parser("tune", parents=[flags], help="emit a penalty certificate")
    p.add_argument("config", help=cfg_help)
    p = sub.add_parser("lorenz4dvar", parents=[flags], help="Lorenz-63 4DVar twin experiment")
    p.add_argument("--seed", type=int, default=None, help="observation noise seed (default 0)")
    p.add_argument("--rho", type=float, default=None, help="uniform penalty (default 0.3)")
    p.add_argument("--eta", type=float, default=None, help="uniform proximal weight (default 10)")
    p.add_argument("--baseline", choices=("cg", "lbfgs", "none"), default="none",
                   help="also run an adjoint-gradient baseline from the first observation")
    p = sub.add_parser("burgers", parents=[flags], help="viscous Burgers experiment")
    p.add_argument("--dt", type=float, choices=(0.1, 0.02), default=0.1,
                   help="time step; 0.1 gives n = 20 steps, 0.02 gives n = 100")
    p.add_argument("--scheme", choices=("explicit", "implicit", "admm"), default="admm",
                   help="explicit rollout, Newton-implicit rollout, or implicit by ADMM")
    p = sub.add_parser("checkgrad", parents=[flags], help="finite-difference gradient checks")
    p.add_argument("config", help=cfg_help)
    return parser


class _Run:
    """Shared output plumbing for one invocation."""

    def __init__(self, args):
        self.out = Path(getattr(args, "out", "."))
        self.max_iter = getattr(args, "max_iter", None)
        self.tol = getattr(args, "tol", None)
        self.svg = getattr(args, "svg", False)
        self.wall = getattr(args, "wall_clock", False)
        self.started = self._now()

    def _now(self):
        return datetime.now(timezone.utc).isoformat() if self.wall else None

    def clock(self):
        return time.perf_counter if self.wall else None

    def overrides(self):
        kw = {"max_iter": self.max_iter}
        if self.tol is not None:
            kw.update(feas_tol=self.tol, kkt_tol=self.tol)
        return kw

    def prepare(self):
        self.out.mkdir(parents=True, exist_ok=True)

    def write_log(self, records, stem="iterations"):
        write_csv(records, self.out / f"{stem}.csv")
        if self.svg:
            write_svg(records, self.out / f"{stem}.svg")

    def write_array(self, name, arr, header):
        arr = np.atleast_2d(np.asarray(arr, dtype=float))
        with open(self.out / name, "w", newline="\n") as fh:
            fh.write(header + "\n")
            for row in arr:
                fh.write(",".join(format(float(v), ".17g") for v in row) + "\n")

    def write_json(self, name, obj):
        (self.out / name).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")

    def manifest(self, config, seed=None, certificate=None):
        RunManifest(config=config, seed=seed, certificate=certificate,
                    revision=source_revision(), started=self.started,
                    finished=self._now()).write(self.out / "manifest.json")


def _block_header(prefix, d):
    return ",".join(f"{prefix}{k}" for k in range(d))


def _summary(records, state):
    last = records[-1] if records else None
    return {
        "status": state.status,
        "iterations": len(records),
        "objective": None if last is None else last.objective,
        "constraint_inf": None if last is None else last.constraint_inf,
        "kkt_stat": None if last is None else last.kkt_stat,
    }


def _print_summary(name, summ):
    parts = [f"{name}: {summ['status']} after {summ['iterations']} iterations"]
    if summ["iterations"]:
        parts.append(f"objective {summ['objective']:.6g}")
        parts.append(f"constraint_inf {summ['constraint_inf']:.3e}")
    print(", ".join(parts))


def _run_admm(run, cfg, scenario, name, **param_overrides):
    kw = run.overrides()
    kw.update(param_overrides)
    cert_dict = watch = None
    if cfg.tuning and "rho" not in cfg.admm and kw.get("rho") is None:
        _, cert, box = certify_scenario(cfg, scenario)
        kw.update(rho=cert.rho, eta=cert.eta)
        cert_dict = cert.to_dict()
        watch = BoxWatch(*box)
    params = cfg.admm_params(**kw)
    try:
        state, records = solve(scenario.problem, scenario.x0, scenario.lam0, params,
                               callback=watch, clock=run.clock())
    except CONFIG_ERRORS:
        raise
    except DynAdmmError as err:
        records = getattr(err, "log", [])
        run.write_log(records)
        print(f"{name}: solver failure: {err}", file=sys.stderr)
        return None, records, cert_dict
    run.write_log(records)
    return state, records, cert_dict


def _load(name):
    """A config file path, or the stem of a bundled config such as ``lorenz4dvar``."""
    path = Path(name)
    if not path.exists() and path.suffix == "" and path.parent == Path("."):
        return bundled_config(name)
    return load_config(path)


def _cmd_solve(args, run):
    cfg = _load(args.config)
    scenario = build_scenario(cfg)
    run.prepare()
    state, records, cert = _run_admm(run, cfg, scenario, "solve")
    run.manifest(cfg.snapshot(), seed=cfg.instance.get("seed"), certificate=cert)
    if state is None:
        return 1
    d = scenario.problem.d
    run.write_array("solution.csv", state.x, _block_header("x", d))
    if isinstance(scenario.problem, ControlledProblem):
        run.write_array("controls.csv", state.u, _block_header("u", scenario.problem.m))
    summ = _summary(records, state)
    if scenario.oracle is not None:
        summ["oracle_gap_inf"] = float(np.max(np.abs(state.x - scenario.oracle.x_star)))
    run.write_json("summary.json", summ)
    _print_summary("solve", summ)
    return 0


def _cmd_tune(args, run):
    cfg = _load(args.config)
    scenario = build_scenario(cfg)
    if isinstance(scenario.problem, ControlledProblem):
        raise ConfigurationError("the tuner covers uncontrolled problems only")
    consts, cert, _ = certify_scenario(cfg, scenario)
    run.prepare()
    out = {"constants": consts.to_dict(), "certificate": cert.to_dict()}
    run.write_json("certificate.json", out)
    run.manifest(cfg.snapshot(), seed=cfg.instance.get("seed"), certificate=cert.to_dict())
    worst = max(r.total / r.bound for r in cert.rows) if cert.rows else 0.0
    print(f"tune: certified={cert.certified}, worst row ratio {worst:.3f}, "
          f"rho in [{cert.rho.min():.3g}, {cert.rho.max():.3g}]")
    return 0 if cert.certified else 1


def _cmd_lorenz(args, run):
    cfg = bundled_config("lorenz4dvar")
    if args.seed is not None:
        cfg.instance["seed"] = args.seed
    scenario = build_scenario(cfg)
    data = scenario.data
    run.prepare()
    state, records, _ = _run_admm(run, cfg, scenario, "lorenz4dvar", rho=args.rho, eta=args.eta)
    snap = cfg.snapshot()
    snap["baseline"] = args.baseline
    run.manifest(snap, seed=cfg.instance["seed"])
    if state is None:
        return 1
    run.write_array("trajectory.csv", state.x, "x,y,z")
    summ = _summary(records, state)
    summ["rmse_admm"] = rmse(state.x, data.truth)
    summ["rmse_init"] = rmse(scenario.x0, data.truth)
    if args.baseline != "none":
        method = polak_ribiere_cg if args.baseline == "cg" else lbfgs
        opts = OptimizerOptions(max_iter=run.max_iter or 1000)
        v0, trace = method(scenario.problem, data.background, opts)
        traj = feasibility_rollout(scenario.problem, v0)
        run.write_array(f"trajectory_{args.baseline}.csv", traj, "x,y,z")
        run.write_array(f"trace_{args.baseline}.csv",
                        np.column_stack([trace.values, trace.grad_norms]), "objective,grad_norm")
        summ[f"rmse_{args.baseline}"] = rmse(traj, data.truth)
        summ["baseline_status"] = trace.status
    run.write_json("summary.json", summ)
    _print_summary("lorenz4dvar", summ)
    print("rmse: " + ", ".join(f"{k[5:]} {v:.4f}" for k, v in summ.items() if k.startswith("rmse_")))
    return 0


def _cmd_burgers(args, run):
    cfg = bundled_config("burgers")
    cfg.instance["dt"] = args.dt
    bc = BurgersConfig(scheme=args.scheme, **cfg.instance)
    run.prepare()
    header = _block_header("u", bc.d)
    snap = cfg.snapshot()
    snap["scheme"] = args.scheme
    u0 = initial_profile(bc)
    if args.scheme == "explicit":
        run.write_array("solution.csv", explicit_rollout(bc, u0), header)
        run.manifest(snap)
        print(f"burgers: explicit Lax-Friedrichs, {bc.n} steps")
        return 0
    newton = newton_implicit_rollout(bc, u0)
    if args.scheme == "implicit":
        run.write_array("solution.csv", newton, header)
        run.manifest(snap)
        print(f"burgers: implicit Lax-Friedrichs by Newton, {bc.n} steps")
        return 0
    problem = make_implicit_problem(bc)
    scenario = Scenario(problem, np.zeros((problem.n + 1, problem.d)))
    state, records, _ = _run_admm(run, cfg, scenario, "burgers")
    run.manifest(snap)
    if state is None:
        return 1
    run.write_array("solution.csv", state.x, header)
    summ = _summary(records, state)
    summ["newton_gap_inf"] = float(np.max(np.abs(state.x - newton)))
    run.write_json("summary.json", summ)
    _print_summary("burgers", summ)
    print(f"burgers: inf-norm gap to Newton {summ['newton_gap_inf']:.3e}")
    return 0


def _checkgrad_rows(scenario, rng, probes=10):
    """``(name, worst relative error)`` for every finite-difference oracle."""
    problem = scenario.problem
    if isinstance(problem, ControlledProblem):
        raise ConfigurationError("checkgrad covers uncontrolled problems only")
    n, d = problem.n, problem.d
    base = np.asarray(scenario.x0, dtype=float)
    pts = lambda i: [base[i] + rng.standard_normal(d) for _ in range(probes)]
    rows = [("objective terms", max(check_term_gradient(t, pts(i))
                                    for i, t in enumerate(problem.terms)))]
    # phi acts on block j (explicit, semi-implicit) or j + 1 (implicit)
    offset = 1 if problem.shape is Shape.IMPLICIT else 0
    rows.append(("dynamics transpose products",
                 max(check_map_transpose(problem.step_map(j), pts(j + offset), rng)
                     for j in range(n))))
    rho = 0.5 + rng.random(n)
    worst = 0.0
    for _ in range(1 if n > 20 else 3):
        x = base + 0.1 * rng.standard_normal((n + 1, d))
        lam = rng.standard_normal((n, d))
        for i in range(n + 1):
            def f(z, i=i, x=x):
                y = x.copy()
                y[i] = z
                return augmented_lagrangian_value(problem, y, lam, rho)
            worst = max(worst, relative_error(aug_lagrangian_block_gradient(problem, x, lam, rho, i),
                                              fd_gradient(f, x[i])))
    rows.append(("augmented Lagrangian blocks", worst))
    if problem.shape is Shape.EXPLICIT:
        F = lambda z: reduced_objective(problem, z)
        rows.append(("adjoint gradient",
                     max(relative_error(adjoint_gradient(problem, v), fd_gradient(F, v))
                         for v in pts(0))))
    return rows


def _cmd_checkgrad(args, run):
    cfg = _load(args.config)
    scenario = build_scenario(cfg)
    rng = np.random.default_rng(cfg.instance.get("seed", 0))
    if scenario.x0 is None:
        raise ConfigurationError("checkgrad covers uncontrolled problems only")
    rows = _checkgrad_rows(scenario, rng)
    ok = True
    for name, err in rows:
        good = err <= CHECKGRAD_TOL
        ok &= good
        print(f"checkgrad {name}: max relative error {err:.2e} {'ok' if good else 'FAIL'}")
    return 0 if ok else 1


COMMANDS = {"solve": _cmd_solve, "tune": _cmd_tune, "lorenz4dvar": _cmd_lorenz,
            "burgers": _cmd_burgers, "checkgrad": _cmd_checkgrad}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    run = _Run(args)
    try:
        return COMMANDS[args.command](args, run)
    except CONFIG_ERRORS as err:
        print(f"dynadmm: configuration error: {err}", file=sys.stderr)
        return 2
    except DynAdmmError as err:
        print(f"dynadmm: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
