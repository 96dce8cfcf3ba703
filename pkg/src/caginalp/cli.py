"""Command line entry point: simulate, optimize, verify, sweep.

Exit codes: 0 success, 1 configuration or validation error, 2 numerical
failure, 3 verification failure. Errors are reported on stderr as one JSON
line.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
import time
from datetime import datetime, timezone

import numpy as np

from . import __version__
from .artifacts import (
    write_coefficients,
    write_control,
    write_csv,
    write_diagnostics,
    write_history,
    write_json_atomic,
    write_trajectory,
)
from .config import ConfigError, RunConfig, load_config, validated_schedule
from .control import (
    ContinuationError,
    OptimizationError,
    projected_gradient,
    solve_obstacle_deep_quench,
)
from .forward import InitialData, SolverError, as_control_array, solve_state
from .spectral import smooth_random_field
from .verify import (
    energy_dissipation_probe,
    fd_gradient_check,
    frechet_probe,
    regularization_sweep,
    smooth_random_control,
    stability_probe,
    tiny_instance_oracle,
)

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_VERIFY = 0, 1, 2, 3
OUTPUT_ROOT_ENV = "CAGINALP_OUTPUT_ROOT"


class _Run:
    """Bookkeeping shared by the subcommands: output dir, file list, manifest."""

    def __init__(self, command: str, config_path: str, cfg: RunConfig | None, out: str | None,
                 seed: int | None, quiet: bool):
        self.command, self.config_path, self.cfg = command, config_path, cfg
        self.seed, self.quiet = seed, quiet
        self.started = time.perf_counter()
        self.timestamp = datetime.now(timezone.utc).isoformat(timespec="seconds")
        if out is None:
            root = os.environ.get(OUTPUT_ROOT_ENV, "runs")
            tag = cfg.digest[:12] if cfg is not None else "invalid"
            out = os.path.join(root, f"{command}-{tag}-{os.getpid()}-{time.time_ns()}")
        self.out = out
        self.outputs: list[str] = []

    def path(self, name: str) -> str:
        os.makedirs(self.out, exist_ok=True)
        p = os.path.join(self.out, name)
        self.outputs.append(name)
        return p

    def say(self, msg: str) -> None:
        if not self.quiet:
            print(msg)

    def finish(self, status: str, code: int, extra: dict | None = None) -> int:
        payload = {
            "tool": "caginalp",
            "version": __version__,
            "command": self.command,
            "config": os.path.abspath(self.config_path),
            "config_sha256": self.cfg.digest if self.cfg is not None else None,
            "seed": self.seed,
            "started_utc": self.timestamp,
            "wall_clock_seconds": time.perf_counter() - self.started,
            "inputs": [os.path.abspath(self.config_path)],
            "outputs": sorted(self.outputs),
            "guard": self.cfg.guard.as_dict() | {"warnings": self.cfg.guard.warnings} if self.cfg else None,
            "termination": status,
            "exit_code": code,
        }
        if extra:
            payload.update(extra)
        os.makedirs(self.out, exist_ok=True)
        write_json_atomic(os.path.join(self.out, "manifest.json"), payload)
        return code


def _error(kind: str, code: int, message: str, **fields) -> None:
    rec = {"error": kind, "exit_code": code, "message": message, **fields}
    print(json.dumps(rec, sort_keys=True), file=sys.stderr)


def _solver_failure(run: _Run, exc: Exception) -> int:
    cause = exc if isinstance(exc, SolverError) else getattr(exc, "cause", None) or exc.__cause__
    kind = getattr(cause, "kind", type(exc).__name__)
    fields = {"step": getattr(cause, "step", None)}
    if isinstance(exc, OptimizationError):
        fields["iteration"] = exc.iteration
    _error(kind, EXIT_NUMERICAL, str(exc), **fields)
    return run.finish(kind, EXIT_NUMERICAL, {"error": kind})


def cmd_simulate(cfg: RunConfig, run: _Run) -> int:
    sp = cfg.state
    u = as_control_array(cfg.initial_control, sp)
    try:
        traj = solve_state(sp, u)
    except SolverError as exc:
        return _solver_failure(run, exc)
    write_trajectory(run.path("trajectory.csv"), traj)
    write_coefficients(run.path("coefficients.csv"), traj)
    write_diagnostics(run.path("diagnostics.csv"), traj)
    run.say(f"simulated {sp.time.steps} steps; phi in [{traj.phi_grid.min():.6g}, {traj.phi_grid.max():.6g}]")
    return run.finish("completed", EXIT_OK, {"bounds": traj.bound_diagnostics()})


def cmd_optimize(cfg: RunConfig, run: _Run) -> int:
    try:
        res = projected_gradient(cfg.control_problem, cfg.initial_control, cfg.optimizer)
    except (OptimizationError, SolverError) as exc:
        return _solver_failure(run, exc)
    write_history(run.path("history.csv"), res.history)
    write_control(run.path("control.csv"), res.control, cfg.state)
    write_trajectory(run.path("trajectory.csv"), res.state)
    run.say(f"{res.termination} after {len(res.history) - 1} iterations; cost {res.cost:.12g}, "
            f"stationarity {res.stationarity:.3e}")
    return run.finish(res.termination, EXIT_OK, {
        "cost": res.cost, "stationarity": res.stationarity, "iterations": len(res.history) - 1,
    })


def cmd_sweep(cfg: RunConfig, run: _Run, schedule=None) -> int:
    alphas = validated_schedule(cfg.alphas if schedule is None else schedule)
    try:
        res = solve_obstacle_deep_quench(cfg.control_problem, alphas, cfg.anchor_weight, cfg.optimizer,
                                         u0=cfg.initial_control)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    except ContinuationError as exc:
        _write_continuation(run, exc.records)
        return _solver_failure(run, exc)
    _write_continuation(run, res.records)
    write_control(run.path("control.csv"), res.result.control, cfg.state)
    run.say(f"continuation over {len(alphas)} stages; final cost {res.records[-1].cost:.12g}")
    return run.finish("completed", EXIT_OK, {"stages": len(res.records)})


def _write_continuation(run: _Run, records) -> None:
    keys = ["alpha", "cost", "a_R", "b_R", "increment_norm", "multiplier_dual_proxy"]
    write_csv(run.path("continuation.csv"), keys + ["h_integral", "termination", "stationarity"],
              ([r.row()[k] for k in keys] + [r.h_integral, r.result.termination, r.result.stationarity]
               for r in records))


def _verify_reports(cfg: RunConfig, seed: int, halvings: int | None):
    pr = cfg.probe
    th = pr.thresholds
    sp, cp = cfg.state, cfg.control_problem
    u0 = np.array(as_control_array(cfg.initial_control, sp))
    R = float(cp.box.R)
    for name in pr.suite:
        if name == "fd_gradient":
            yield fd_gradient_check(sp, cp.cost, u0, k=pr.directions, eps=pr.eps,
                                    halvings=pr.halvings if halvings is None else halvings,
                                    seed=seed, adjoint=pr.adjoint, R=R, direction_kind=pr.direction_kind,
                                    thresholds=th)
        elif name == "frechet":
            h = smooth_random_control(sp, np.random.default_rng(seed), 1.0)
            yield frechet_probe(sp, u0, h, pr.frechet_scales, R=R, thresholds=th)
        elif name == "stability":
            yield stability_probe(sp, R, pairs=pr.pairs, seed=seed,
                                  halvings=pr.stability_halvings if halvings is None else halvings,
                                  amplitude=0.9 * min(R, max(abs(cp.box.u_min), abs(cp.box.u_max))),
                                  thresholds=th)
        elif name == "regularization_sweep":
            yield regularization_sweep(sp, u0, pr.sweep_mode, pr.sweep_levels, thresholds=th)
        elif name == "energy":
            rng = np.random.default_rng(seed)
            inits = [InitialData(smooth_random_field(sp.basis_A, rng, 0.3), smooth_random_field(sp.basis_B, rng, 0.5))
                     for _ in range(pr.energy_states)]
            yield energy_dissipation_probe(sp, [sp.initial] + inits, thresholds=th)
        elif name == "tiny_oracle":
            yield tiny_instance_oracle(cp, cfg.optimizer, cfg.initial_control, thresholds=th)


def cmd_verify(cfg: RunConfig, run: _Run, seed: int, halvings: int | None) -> int:
    summary = run.path("summary.csv")
    statuses = {}
    try:
        for rep in _verify_reports(cfg, seed, halvings):
            rep.write(run.out, summary)
            run.outputs.append(f"{rep.name}.csv")
            statuses[rep.name] = rep.status
            run.say(f"{rep.name}: {rep.status.upper()}")
    except (SolverError, OptimizationError) as exc:
        return _solver_failure(run, exc)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    ok = all(s == "pass" for s in statuses.values())
    return run.finish("pass" if ok else "fail", EXIT_OK if ok else EXIT_VERIFY, {"probes": statuses})


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="caginalp", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"caginalp {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_ in [("simulate", "solve the state system for the configured control"),
                        ("optimize", "projected-gradient optimal control"),
                        ("verify", "run the configured probe suite"),
                        ("sweep", "deep-quench continuation for the obstacle problem")]:
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", required=True, help="INI run configuration")
        p.add_argument("--out", help=f"output directory (default: unique dir under ${OUTPUT_ROOT_ENV} or ./runs)")
        p.add_argument("--seed", type=int, help="override probe.seed")
        p.add_argument("--tau-halvings", type=int, default=None,
                       help="refine the time grid n times (verify: number of refinement levels)")
        p.add_argument("--quiet", action="store_true")
        if name == "sweep":
            p.add_argument("--schedule", help="comma-separated alpha values, strictly decreasing")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    cfg = None
    run = None
    try:
        cfg = load_config(args.config)
        halvings = args.tau_halvings
        if halvings is not None and halvings < 0:
            raise ConfigError("--tau-halvings must be nonnegative")
        if args.seed is not None and args.seed < 0:
            raise ConfigError("--seed must be nonnegative")
        seed = cfg.probe.seed if args.seed is None else args.seed
        if args.command != "verify" and halvings:
            cfg = cfg.refined(halvings)
        run = _Run(args.command, args.config, cfg, args.out, seed, args.quiet)
        if args.command == "simulate":
            return cmd_simulate(cfg, run)
        if args.command == "optimize":
            return cmd_optimize(cfg, run)
        if args.command == "sweep":
            schedule = None
            if args.schedule is not None:
                try:
                    schedule = [float(s) for s in args.schedule.split(",") if s.strip()]
                except ValueError:
                    raise ConfigError(f"cannot parse schedule {args.schedule!r}") from None
            return cmd_sweep(cfg, run, schedule)
        return cmd_verify(cfg, run, seed, halvings)
    except ConfigError as exc:
        _error("ConfigError", EXIT_CONFIG, str(exc))
        if run is not None:
            run.finish("config_error", EXIT_CONFIG)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
