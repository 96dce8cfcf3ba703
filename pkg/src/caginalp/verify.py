"""Independent oracles and refinement sweeps with pass/fail reports."""
from __future__ import annotations

import csv
import dataclasses
import hashlib
import itertools
import os
from dataclasses import dataclass, field

import numpy as np

from .control import ControlProblem, OptimizerOptions, projected_gradient
from .cost import CostSpec, evaluate_cost, l2q_inner, l2q_norm
from .forward import SolverError, StateProblem, as_control_array, solve_state
from .potentials import DOUBLE_OBSTACLE, LN2, LOGARITHMIC, eval_F1
from .sensitivity import (
    adjoint_for,
    frechet_remainder_probe,
    loglog_slope,
    reduced_gradient,
    state_difference_norm,
)

__all__ = [
    "ProbeReport",
    "ProbeThresholds",
    "energy_dissipation_probe",
    "fd_gradient_check",
    "frechet_probe",
    "inputs_digest",
    "refine_control",
    "regularization_sweep",
    "smooth_random_control",
    "stability_probe",
    "tiny_instance_oracle",
]


@dataclass(frozen=True)
class ProbeThresholds:
    fd_relative_error: float = 1e-2
    fd_min_slope: float = 0.9
    frechet_slope: tuple[float, float] = (1.8, 2.2)
    stability_relative_change: float = 0.2
    energy_tolerance: float = 1e-10
    oracle_resolution: int = 41
    stationarity: float = 1e-6
    uniform_bound: float | None = None
    sweep_growth: float = 2.0


DEFAULT_THRESHOLDS = ProbeThresholds()


@dataclass
class ProbeReport:
    """Measurements of one probe. ``flags`` maps a check to ``(passed, threshold)``."""

    name: str
    digest: str
    seed: int | None
    measured: dict = field(default_factory=dict)
    slopes: dict = field(default_factory=dict)
    flags: dict = field(default_factory=dict)
    rows: list = field(default_factory=list)
    inconclusive: bool = False
    notes: list = field(default_factory=list)

    def flag(self, check: str, passed: bool, threshold) -> None:
        self.flags[check] = (bool(passed), threshold)

    @property
    def passed(self) -> bool:
        return not self.inconclusive and all(p for p, _ in self.flags.values())

    @property
    def status(self) -> str:
        if self.inconclusive:
            return "inconclusive"
        return "pass" if self.passed else "fail"

    def summary_row(self) -> dict:
        failed = [k for k, (p, _) in self.flags.items() if not p]
        return {
            "probe": self.name,
            "digest": self.digest,
            "seed": "" if self.seed is None else str(self.seed),
            "status": self.status,
            "failed_checks": ";".join(failed),
        }

    def write(self, directory: str, summary_file: str | None = None) -> str:
        os.makedirs(directory, exist_ok=True)
        path = os.path.join(directory, f"{self.name}.csv")
        fields = sorted({k for r in self.rows for k in r})
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=fields or ["empty"])
            w.writeheader()
            for r in self.rows:
                w.writerow({k: _fmt(v) for k, v in r.items()})
        if summary_file is not None:
            row = self.summary_row()
            new = not os.path.exists(summary_file)
            with open(summary_file, "a", newline="") as fh:
                w = csv.DictWriter(fh, fieldnames=list(row))
                if new:
                    w.writeheader()
                w.writerow(row)
        return path


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def _feed(h, obj) -> None:
    if obj is None or isinstance(obj, (bool, int, float, str, np.integer, np.floating)):
        h.update(f"{type(obj).__name__}:{obj!r};".encode())
    elif isinstance(obj, np.ndarray):
        a = np.ascontiguousarray(obj, dtype=float)
        h.update(f"nd{a.shape};".encode())
        h.update(a.tobytes())
    elif isinstance(obj, dict):
        for k in sorted(obj, key=str):
            _feed(h, str(k))
            _feed(h, obj[k])
    elif isinstance(obj, (list, tuple)):
        h.update(f"seq{len(obj)};".encode())
        for v in obj:
            _feed(h, v)
    elif dataclasses.is_dataclass(obj):
        h.update(type(obj).__name__.encode())
        for f in dataclasses.fields(obj):
            _feed(h, f.name)
            _feed(h, getattr(obj, f.name))
    else:
        h.update(repr(obj).encode())


def inputs_digest(*objs) -> str:
    """SHA-256 over the numerical content of the probe inputs."""
    h = hashlib.sha256()
    for o in objs:
        _feed(h, o)
    return h.hexdigest()[:16]


def refine_control(u: np.ndarray, halvings: int) -> np.ndarray:
    """Same piecewise-constant control on a time grid refined ``halvings`` times."""
    return np.repeat(np.asarray(u, float), 2**halvings, axis=0)


def smooth_random_control(problem: StateProblem, rng: np.random.Generator, amplitude: float,
                          time_modes: int = 3, space_modes: int = 4) -> np.ndarray:
    """Random control built from a few cosines in time and A-modes in space,
    scaled to sup-norm ``amplitude``."""
    M = problem.time.steps
    t = (np.arange(M) + 0.5) / M
    k = min(space_modes, problem.basis_A.mode_count)
    coef = rng.standard_normal((time_modes, k))
    temporal = np.cos(np.pi * np.arange(time_modes)[:, None] * t[None, :])
    u = temporal.T @ coef @ problem.E_A[:, :k].T
    peak = np.max(np.abs(u))
    return amplitude * u / peak if peak > 0 else u


def _relative(a: float, b: float) -> float:
    if a == 0 and b == 0:
        return 0.0
    return abs(a - b) / max(abs(a), abs(b))


def fd_gradient_check(state_problem: StateProblem, cost: CostSpec, u_bar, directions=None,
                      k: int = 2, eps=(1e-4,), halvings: int = 3, seed: int = 0,
                      adjoint: str = "continuous", R: float | None = None, direction_kind: str = "random",
                      thresholds: ProbeThresholds = DEFAULT_THRESHOLDS) -> ProbeReport:
    """Adjoint directional derivative versus central differences of the discrete cost.

    ``u_bar`` and ``directions`` live on the coarsest time grid and are refined
    by row repetition. Relative errors are recorded per (direction, eps, tau);
    the slope of the error against tau is fitted for the smallest eps.
    Without explicit ``directions``, ``direction_kind`` selects ``k`` seeded
    smooth random fields or the single steepest descent direction of the
    discrete reduced cost at ``u_bar``.
    """
    rng = np.random.default_rng(seed)
    u0 = np.array(as_control_array(u_bar, state_problem))
    kind = "explicit" if directions is not None else direction_kind
    if directions is None and direction_kind == "gradient":
        st = solve_state(state_problem, u0)
        g = reduced_gradient(u0, adjoint_for(st, cost, "discrete"), cost.beta5, st)
        peak = np.max(np.abs(g))
        directions = [-g / peak if peak > 0 else g]
    elif directions is None and direction_kind == "random":
        directions = [smooth_random_control(state_problem, rng, 1.0) for _ in range(k)]
    elif directions is None:
        raise ValueError(f"unknown direction kind {direction_kind!r}")
    directions = [np.array(as_control_array(h, state_problem)) for h in directions]
    eps = tuple(sorted(eps, reverse=True))
    if R is not None:
        for h in directions:
            if np.max(np.abs(u0)) + max(eps) * np.max(np.abs(h)) >= R:
                raise ValueError("perturbed control leaves the ball of radius R")
    rep = ProbeReport("fd_gradient_check",
                      inputs_digest(state_problem, cost, u0, directions, eps, halvings, adjoint), seed)
    rep.measured["direction_kind"] = kind
    errors = np.zeros((len(directions), halvings + 1))
    taus = []
    for lvl in range(halvings + 1):
        p = state_problem.replace(time=state_problem.time.refined(lvl))
        taus.append(p.time.tau)
        u = refine_control(u0, lvl)
        st = solve_state(p, u)
        g = reduced_gradient(u, adjoint_for(st, cost, adjoint), cost.beta5, st)

        def J(v, p=p):
            return evaluate_cost(solve_state(p, v), v, cost)

        for i, h0 in enumerate(directions):
            h = refine_control(h0, lvl)
            ad = l2q_inner(g, h, p)
            for e in eps:
                fd = 0.0 if not np.any(h) else (J(u + e * h) - J(u - e * h)) / (2 * e)
                err = _relative(ad, fd)
                rep.rows.append({"direction": i, "eps": e, "tau": p.time.tau, "adjoint": ad,
                                 "finite_difference": fd, "relative_error": err})
            errors[i, lvl] = err
    rep.measured["relative_error_coarse"] = float(errors[:, 0].max())
    rep.measured["relative_error_fine"] = float(errors[:, -1].max())
    rep.flag("relative_error_coarse", errors[:, 0].max() <= thresholds.fd_relative_error,
             thresholds.fd_relative_error)
    if adjoint == "continuous":
        slopes = [loglog_slope(taus, errors[i]) for i in range(len(directions))]
        rep.slopes["tau_order"] = slopes
        if any(s is None for s in slopes):
            if any(np.any(errors[i] > 0) for i in range(len(directions))):
                rep.inconclusive = True
                rep.notes.append("fewer than 3 usable refinement levels")
        else:
            rep.flag("tau_order", min(slopes) >= thresholds.fd_min_slope, thresholds.fd_min_slope)
    return rep


def frechet_probe(state_problem: StateProblem, u_bar, h, scales=(1e-1, 10**-1.5, 1e-2),
                  R: float | None = None, thresholds: ProbeThresholds = DEFAULT_THRESHOLDS) -> ProbeReport:
    """Quadratic decay of the linearisation remainder of the control-to-state map."""
    u = np.array(as_control_array(u_bar, state_problem))
    h = np.array(as_control_array(h, state_problem))
    rep = ProbeReport("frechet_remainder", inputs_digest(state_problem, u, h, tuple(scales)), None)
    sr = frechet_remainder_probe(state_problem, u, h, scales, R)
    rep.rows = [{"scale": s, "remainder": r} for s, r in zip(sr.scales, sr.remainders)]
    rep.slopes["remainder"] = sr.slope
    lo, hi = thresholds.frechet_slope
    if sr.slope is None:
        rep.inconclusive = True
        rep.notes.append("remainder vanished or fewer than 3 scales")
    else:
        rep.flag("remainder_slope", lo <= sr.slope <= hi, thresholds.frechet_slope)
    return rep


def stability_probe(state_problem: StateProblem, R: float, pairs: int = 20, seed: int = 0,
                    halvings: int = 1, amplitude: float | None = None,
                    control_pairs=None, thresholds: ProbeThresholds = DEFAULT_THRESHOLDS) -> ProbeReport:
    """Max ratio ``||S(u1) - S(u2)|| / ||u1 - u2||_{L^2(Q)}`` and its change under refinement."""
    rng = np.random.default_rng(seed)
    amp = 0.9 * R if amplitude is None else amplitude
    if not amp < R:
        raise ValueError("control amplitude must stay below R")
    if control_pairs is None:
        control_pairs = [(smooth_random_control(state_problem, rng, amp * rng.uniform(0.2, 1.0)),
                          smooth_random_control(state_problem, rng, amp * rng.uniform(0.2, 1.0)))
                         for _ in range(pairs)]
    control_pairs = [(np.array(as_control_array(a, state_problem)), np.array(as_control_array(b, state_problem)))
                     for a, b in control_pairs]
    for a, b in control_pairs:
        if max(np.max(np.abs(a)), np.max(np.abs(b))) >= R:
            raise ValueError("control pair leaves the ball of radius R")
        if np.array_equal(a, b):
            raise ValueError("control pairs must be distinct")
    rep = ProbeReport("stability_probe", inputs_digest(state_problem, control_pairs, R, halvings), seed)
    maxima = []
    for lvl in range(halvings + 1):
        p = state_problem.replace(time=state_problem.time.refined(lvl))
        ratios = []
        for i, (a, b) in enumerate(control_pairs):
            a, b = refine_control(a, lvl), refine_control(b, lvl)
            sa, sb = solve_state(p, a), solve_state(p, b)
            r = state_difference_norm(sa, sb.theta, sb.phi) / l2q_norm(a - b, p)
            ratios.append(r)
            rep.rows.append({"pair": i, "tau": p.time.tau, "ratio": r})
        maxima.append(max(ratios))
    rep.measured["max_ratio"] = maxima
    if len(maxima) > 1:
        change = max(abs(m - maxima[0]) / maxima[0] for m in maxima[1:])
        rep.measured["relative_change"] = change
        rep.flag("refinement_stable", change < thresholds.stability_relative_change,
                 thresholds.stability_relative_change)
    else:
        rep.inconclusive = True
        rep.notes.append("no refinement level")
    return rep


def _l2q_state(p: StateProblem, a, b) -> float:
    """``L^2(Q)`` norm of a coefficient-space trajectory pair, rows ``1..M``."""
    return float(np.sqrt(p.time.tau * (np.sum(a[1:] ** 2) + np.sum(b[1:] ** 2))))


def regularization_sweep(state_problem: StateProblem, control, mode: str, levels,
                         thresholds: ProbeThresholds = DEFAULT_THRESHOLDS) -> ProbeReport:
    """Trajectories along a Moreau-Yosida (``lam``) or deep-quench (``alpha``) schedule.

    Passes when successive ``L^2(Q)`` differences do not increase and the
    level diagnostics stay below one constant. For the deep quench the
    diagnostic is ``int_Q alpha h(phi_alpha)``, bounded by ``2 ln 2 |Q|`` unless
    a bound is configured; for Moreau-Yosida it is the ``L^inf(H)`` size of the
    state, bounded by ``sweep_growth`` times its value at the first level.
    """
    base = state_problem.potential
    if mode == "moreau_yosida":
        if base.kind not in (DOUBLE_OBSTACLE, LOGARITHMIC):
            raise ValueError("Moreau-Yosida sweep needs a singular potential")
        pots = [base.with_yosida(v) for v in levels]
    elif mode == "deep_quench":
        if base.kind != DOUBLE_OBSTACLE:
            raise ValueError("deep-quench sweep needs the double obstacle potential")
        pots = [base.with_deep_quench(v) for v in levels]
    else:
        raise ValueError(f"unknown sweep mode {mode!r}")
    u = np.array(as_control_array(control, state_problem))
    p = state_problem
    rep = ProbeReport(f"regularization_sweep_{mode}", inputs_digest(p, u, mode, tuple(levels)), None)
    trajs = []
    diags = []
    Q = p.time.T * float(p.weights.sum())
    for v, pot in zip(levels, pots):
        try:
            tr = solve_state(p, u, potential=pot)
        except SolverError as exc:
            rep.rows.append({"level": v, "error": exc.record()})
            rep.notes.append(f"level {v}: {exc.record()}")
            trajs.append(None)
            continue
        if mode == "deep_quench":
            d = float(p.time.tau * np.sum(np.asarray(eval_F1(pot, tr.phi_grid[1:])) @ p.weights))
        else:
            d = float(np.max(np.linalg.norm(tr.theta, axis=1)) + np.max(np.linalg.norm(tr.phi, axis=1)))
        trajs.append(tr)
        diags.append(d)
        rep.rows.append({"level": v, "diagnostic": d, "min_phi": float(tr.phi_grid.min()),
                         "max_phi": float(tr.phi_grid.max())})
    diffs = []
    for a, b in itertools.pairwise(trajs):
        if a is None or b is None:
            diffs.append(float("nan"))
        else:
            diffs.append(_l2q_state(p, b.theta - a.theta, b.phi - a.phi))
    rep.measured["differences"] = diffs
    rep.measured["diagnostics"] = diags
    ok = [d for d in diffs if np.isfinite(d)]
    scale = max(ok) if ok else 0.0
    decreasing = all(np.isfinite(d1) and np.isfinite(d0) and d1 <= d0 + 1e-13 * max(scale, 1.0)
                     for d0, d1 in itertools.pairwise(diffs))
    rep.flag("differences_nonincreasing", decreasing and len(ok) == len(diffs), "monotone")
    if mode == "deep_quench":
        bound = thresholds.uniform_bound if thresholds.uniform_bound is not None else 2 * LN2 * Q
    else:
        bound = thresholds.sweep_growth * diags[0] if diags else 0.0
    rep.measured["bound"] = bound
    rep.flag("uniform_bound", bool(diags) and max(diags) <= bound, bound)
    rep.flag("all_levels_solved", all(t is not None for t in trajs), "no solver failure")
    return rep


def energy_dissipation_probe(state_problem: StateProblem, initial_states=None, potential=None,
                             thresholds: ProbeThresholds = DEFAULT_THRESHOLDS) -> ProbeReport:
    """Discrete energy monotonicity of the uncoupled phase dynamics (no latent heat, no control)."""
    lat = state_problem.latent
    if not (lat.form == "constant" and lat.value == 0):
        raise ValueError("energy probe needs a vanishing latent heat")
    if initial_states is None:
        initial_states = [state_problem.initial]
    rep = ProbeReport("energy_dissipation",
                      inputs_digest(state_problem, list(initial_states), potential), None)
    worst = -np.inf
    for i, init in enumerate(initial_states):
        p = state_problem.replace(initial=init)
        tr = solve_state(p, 0.0, potential=potential)
        E = tr.diagnostics["energy"]
        slack = np.diff(E) - thresholds.energy_tolerance * abs(E[0])
        worst = max(worst, float(slack.max()) if slack.size else -np.inf)
        for n, e in enumerate(E):
            rep.rows.append({"state": i, "step": n, "energy": float(e)})
    rep.measured["max_increase_over_tolerance"] = worst
    rep.flag("energy_nonincreasing", worst <= 0, thresholds.energy_tolerance)
    return rep


def tiny_instance_oracle(problem: ControlProblem, options: OptimizerOptions | None = None,
                         u0=None, thresholds: ProbeThresholds = DEFAULT_THRESHOLDS) -> ProbeReport:
    """Exhaustive grid search of the reduced cost against projected gradient.

    The control space must have at most two scalar parameters and scalar
    box bounds.
    """
    sp = problem.state
    dims = problem.space.values(np.zeros(sp.control_shape), sp).size
    if dims > 2:
        raise ValueError("tiny-instance oracle handles at most two control parameters")
    lo, hi = np.asarray(problem.box.u_min, float), np.asarray(problem.box.u_max, float)
    if lo.ndim or hi.ndim:
        raise ValueError("tiny-instance oracle needs scalar box bounds")
    n = thresholds.oracle_resolution
    axis = np.linspace(float(lo), float(hi), n)
    spacing = float(axis[1] - axis[0]) if n > 1 else 0.0
    rep = ProbeReport("tiny_instance_oracle", inputs_digest(sp, problem.cost, problem.box, problem.space, n), None)
    shape = (n,) * dims
    values = np.empty(shape)
    for idx in np.ndindex(*shape):
        params = axis[list(idx)]
        values[idx] = problem.reduced_cost(problem.space.expand(params.reshape(-1, 1), sp))
    best = np.unravel_index(int(np.argmin(values)), shape)
    grid_arg = axis[list(best)]
    grid_min = float(values[best])
    res = projected_gradient(problem, u0, options)
    pg_arg = problem.space.values(res.control, sp).ravel()
    # curvature estimate from second differences around the grid minimiser
    curv = 0.0
    for ax in range(dims):
        for off in (-1, 0, 1):
            c = list(best)
            c[ax] += off
            if 1 <= c[ax] <= n - 2:
                a, b = list(c), list(c)
                a[ax] -= 1
                b[ax] += 1
                curv = max(curv, abs(values[tuple(a)] - 2 * values[tuple(c)] + values[tuple(b)]) / spacing**2)
    resolution = float(0.5 * curv * dims * (spacing / 2) ** 2)
    gap = grid_min - res.cost
    rep.measured.update({
        "grid_argmin": grid_arg.tolist(), "grid_min": grid_min, "pg_argmin": pg_arg.tolist(),
        "pg_cost": res.cost, "grid_spacing": spacing, "resolution_bound": resolution,
        "stationarity": res.stationarity, "iterations": len(res.history) - 1,
        "termination": res.termination,
    })
    rep.rows = [{"index": i, "grid_argmin": float(g), "pg_argmin": float(q)} for i, (g, q) in enumerate(zip(grid_arg, pg_arg))]
    rep.rows.append({"index": "cost", "grid_argmin": grid_min, "pg_argmin": res.cost})
    rep.flag("argmin_within_spacing", float(np.max(np.abs(grid_arg - pg_arg))) <= spacing * (1 + 1e-9), spacing)
    rep.flag("value_within_resolution", -1e-10 * max(1.0, abs(grid_min)) <= gap <= resolution + 1e-12, resolution)
    rep.flag("stationarity", res.stationarity <= thresholds.stationarity, thresholds.stationarity)
    return rep
