"""Box-constrained optimal control: projection, projected gradient, deep quench."""
from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .cost import CostSpec, evaluate_cost, l2q_inner, l2q_norm
from .forward import (
    SolverError,
    StateProblem,
    StateTrajectory,
    as_control_array,
    measure_separation,
    solve_state,
)
from .potentials import DOUBLE_OBSTACLE, eval_F1
from .sensitivity import (
    AdjointTrajectory,
    adjoint_for,
    extract_multiplier,
    reduced_gradient,
    solve_adjoint,
)

__all__ = [
    "BoxConstraints",
    "ControlProblem",
    "ControlSpace",
    "CostSpec",
    "OptimizationError",
    "OptimizationResult",
    "OptimizerOptions",
    "evaluate_cost",
    "project_admissible",
    "projected_gradient",
    "solve_obstacle_deep_quench",
    "stationarity_residual",
]

log = logging.getLogger(__name__)


class OptimizationError(RuntimeError):
    """A forward or adjoint solve failed at an accepted iterate."""

    def __init__(self, message: str, iteration: int, cause: SolverError | None = None):
        super().__init__(f"iteration {iteration}: {message}")
        self.iteration = iteration
        self.cause = cause


@dataclass(frozen=True, eq=False)
class BoxConstraints:
    u_min: np.ndarray | float
    u_max: np.ndarray | float
    R: float

    def __post_init__(self):
        lo, hi = np.asarray(self.u_min, float), np.asarray(self.u_max, float)
        if np.any(lo > hi):
            raise ValueError("u_min must not exceed u_max")
        bound = max(float(np.max(np.abs(lo))), float(np.max(np.abs(hi))))
        if not bound < self.R:
            raise ValueError(f"box must lie strictly inside the ball of radius R={self.R}")

    def bounds(self, problem: StateProblem) -> tuple[np.ndarray, np.ndarray]:
        return as_control_array(self.u_min, problem), as_control_array(self.u_max, problem)


def project_admissible(u, box: BoxConstraints, problem: StateProblem | None = None) -> np.ndarray:
    """Pointwise clamp ``max(u_min, min(u, u_max))``."""
    if problem is None:
        return np.maximum(box.u_min, np.minimum(np.asarray(u, float), box.u_max))
    lo, hi = box.bounds(problem)
    return np.maximum(lo, np.minimum(as_control_array(u, problem), hi))


def stationarity_residual(u_bar, q, beta5: float, box: BoxConstraints, problem: StateProblem) -> float:
    """``|| u - max(u_min, min(-q/beta5, u_max)) ||_{L^2(Q)}``."""
    if not beta5 > 0:
        raise ValueError("stationarity residual via the projection formula needs beta5 > 0")
    target = project_admissible(-np.asarray(q, float) / beta5, box, problem)
    return l2q_norm(as_control_array(u_bar, problem) - target, problem)


@dataclass(frozen=True)
class ControlSpace:
    """Subspace of admissible control shapes.

    ``time_blocks=K`` makes controls constant on K equal groups of time steps;
    ``spatially_constant`` makes them constant in space. The default is the
    full space-time grid.
    """

    time_blocks: int | None = None
    spatially_constant: bool = False

    def _blocks(self, M: int) -> np.ndarray:
        if self.time_blocks is None:
            return np.arange(M)
        K = int(self.time_blocks)
        if not 1 <= K <= M:
            raise ValueError(f"time_blocks must lie in [1, {M}]")
        return (np.arange(M) * K) // M

    def project(self, u, problem: StateProblem) -> np.ndarray:
        """``L^2(Q)``-orthogonal projection onto the subspace."""
        u = np.array(as_control_array(u, problem))
        if self.spatially_constant:
            w = problem.weights
            u = np.repeat((u @ w / w.sum())[:, None], u.shape[1], axis=1)
        if self.time_blocks is not None:
            ids = self._blocks(u.shape[0])
            for b in np.unique(ids):
                rows = ids == b
                u[rows] = u[rows].mean(axis=0)
        return u

    def values(self, u, problem: StateProblem) -> np.ndarray:
        u = self.project(u, problem)
        ids = self._blocks(u.shape[0])
        firsts = np.array([np.flatnonzero(ids == b)[0] for b in np.unique(ids)])
        vals = u[firsts]
        return vals[:, :1] if self.spatially_constant else vals

    def expand(self, values, problem: StateProblem) -> np.ndarray:
        M, G = problem.control_shape
        vals = np.asarray(values, float)
        ids = self._blocks(M)
        if vals.ndim == 1:
            vals = vals[:, None]
        return np.broadcast_to(vals[ids], (M, G)).copy() if vals.shape[1] in (1, G) else vals

    @property
    def dimension_hint(self) -> str:
        t = "per-step" if self.time_blocks is None else f"{self.time_blocks} blocks"
        return f"{t}, {'constant' if self.spatially_constant else 'grid'} in space"


@dataclass(frozen=True, eq=False)
class ControlProblem:
    state: StateProblem
    cost: CostSpec
    box: BoxConstraints
    space: ControlSpace = field(default_factory=ControlSpace)

    def with_state(self, **changes) -> ControlProblem:
        return replace(self, state=self.state.replace(**changes))

    def reduced_cost(self, u) -> float:
        return evaluate_cost(solve_state(self.state, u), u, self.cost)

    def admissible(self, u, tol: float = 1e-12) -> bool:
        lo, hi = self.box.bounds(self.state)
        u = as_control_array(u, self.state)
        return bool(np.all(u >= lo - tol) and np.all(u <= hi + tol))


@dataclass(frozen=True)
class OptimizerOptions:
    max_iters: int = 200
    armijo_c: float = 1e-4
    backtrack: float = 0.5
    initial_step: float = 1.0
    tol: float = 1e-6
    max_backtracks: int = 30
    allow_beta5_zero: bool = False
    gradient: str = "discrete"

    def __post_init__(self):
        if not 0 < self.armijo_c < 1:
            raise ValueError("armijo_c must lie in (0, 1)")
        if not 0 < self.backtrack < 1:
            raise ValueError("backtrack must lie in (0, 1)")
        if not (self.initial_step > 0 and self.tol > 0):
            raise ValueError("initial_step and tol must be positive")
        if self.gradient not in ("discrete", "continuous"):
            raise ValueError("gradient must be 'discrete' or 'continuous'")


@dataclass(frozen=True, eq=False)
class OptimizationResult:
    control: np.ndarray
    cost: float
    history: list[dict]
    state: StateTrajectory
    adjoint: AdjointTrajectory
    gradient: np.ndarray
    termination: str
    stationarity: float
    projected_gradient_norm: float

    @property
    def converged(self) -> bool:
        return self.termination == "converged"


@dataclass(frozen=True, eq=False)
class _Anchor:
    weight: float
    reference: np.ndarray


def _evaluate(problem: ControlProblem, u, anchor):
    state = solve_state(problem.state, u)
    J = evaluate_cost(state, u, problem.cost)
    if anchor is not None and anchor.weight:
        J += 0.5 * anchor.weight * l2q_inner(u - anchor.reference, u - anchor.reference, problem.state)
    return state, J


def projected_gradient(problem: ControlProblem, u0=None, options: OptimizerOptions | None = None,
                       anchor: tuple[float, np.ndarray] | None = None) -> OptimizationResult:
    """Projected gradient with Armijo backtracking on the discrete reduced cost.

    ``anchor=(weight, u_ref)`` adds ``weight/2 ||u - u_ref||^2`` to the cost.
    """
    opts = options or OptimizerOptions()
    sp, box, space = problem.state, problem.box, problem.space
    beta5 = problem.cost.beta5
    if beta5 == 0 and not opts.allow_beta5_zero:
        raise ValueError("beta5 = 0 gives no coercivity; set allow_beta5_zero to proceed")
    anc = None if anchor is None else _Anchor(float(anchor[0]), np.array(as_control_array(anchor[1], sp)))
    u0 = 0.0 if u0 is None else u0
    u = space.project(u0, sp)
    if not problem.admissible(u):
        raise ValueError("initial control is not admissible")
    u = project_admissible(u, box, sp)

    def gradient_at(state, u):
        adj = adjoint_for(state, problem.cost, opts.gradient)
        g = reduced_gradient(u, adj, beta5, state)
        if anc is not None and anc.weight:
            g = g + anc.weight * (u - anc.reference)
        return adj, space.project(g, sp)

    def residuals(u, g, adj, state):
        pg = l2q_norm(u - project_admissible(u - g, box, sp), sp)
        if beta5 > 0:
            q = space.project(adj.q[:-1] @ sp.E_A.T, sp)
            if anc is not None and anc.weight:
                # stationarity of the anchored functional: u = P(-(q - a u_ref)/(beta5 + a))
                q = q - anc.weight * anc.reference
                st = stationarity_residual(u, q, beta5 + anc.weight, box, sp)
            else:
                st = stationarity_residual(u, q, beta5, box, sp)
        else:
            st = pg
        return pg, st

    try:
        state, J = _evaluate(problem, u, anc)
        adj, g = gradient_at(state, u)
    except SolverError as exc:
        raise OptimizationError(str(exc), 0, exc) from exc
    solves = 1
    history: list[dict] = []
    termination = "max_iters"
    step = 0.0
    for it in range(opts.max_iters + 1):
        pg, st = residuals(u, g, adj, state)
        history.append({"iter": it, "cost": J, "stationarity": st, "step": step, "forward_solves": solves})
        log.debug("iter %d cost %.12g stationarity %.3e", it, J, st)
        if max(pg, st) <= opts.tol:
            termination = "converged"
            break
        if it == opts.max_iters:
            break
        s = opts.initial_step
        accepted = False
        solves = 0
        for _ in range(opts.max_backtracks):
            trial = project_admissible(u - s * g, box, sp)
            solves += 1
            try:
                t_state, t_J = _evaluate(problem, trial, anc)
            except SolverError:
                s *= opts.backtrack
                continue
            if t_J <= J + opts.armijo_c * l2q_inner(g, trial - u, sp):
                accepted = True
                break
            s *= opts.backtrack
        if not accepted:
            termination = "line_search_exhausted"
            break
        u, state, J, step = trial, t_state, t_J, s
        try:
            adj, g = gradient_at(state, u)
        except SolverError as exc:
            raise OptimizationError(str(exc), it + 1, exc) from exc
    pg, st = residuals(u, g, adj, state)
    return OptimizationResult(
        control=u, cost=J, history=history, state=state, adjoint=adj, gradient=g,
        termination=termination, stationarity=st, projected_gradient_norm=pg,
    )


@dataclass(frozen=True, eq=False)
class StageRecord:
    alpha: float
    cost: float
    a_R: float
    b_R: float
    increment_norm: float
    multiplier_dual_proxy: float
    h_integral: float
    multiplier_sign: dict
    result: OptimizationResult

    def row(self) -> dict:
        return {
            "alpha": self.alpha,
            "cost": self.cost,
            "a_R": self.a_R,
            "b_R": self.b_R,
            "increment_norm": self.increment_norm,
            "multiplier_dual_proxy": self.multiplier_dual_proxy,
        }


@dataclass(frozen=True, eq=False)
class DeepQuenchResult:
    result: OptimizationResult
    records: list[StageRecord]
    completed: bool = True
    error: str | None = None


class ContinuationError(RuntimeError):
    def __init__(self, message, records):
        super().__init__(message)
        self.records = records


def validate_schedule(alphas) -> list[float]:
    a = [float(v) for v in alphas]
    if not a:
        raise ValueError("alpha schedule is empty")
    if any(not 0 < v <= 1 for v in a):
        raise ValueError("alpha values must lie in (0, 1]")
    if any(b >= c for c, b in itertools.pairwise(a)):
        raise ValueError("alpha schedule must be strictly decreasing")
    return a


def solve_obstacle_deep_quench(problem: ControlProblem, alphas, anchor_weight: float = 1.0,
                               options: OptimizerOptions | None = None, u0=None) -> DeepQuenchResult:
    """Continuation in the deep-quench parameter for the double obstacle problem.

    Stage ``k`` minimises ``J + anchor_weight/2 ||u - u_{k-1}||^2`` with the
    potential ``alpha_k h + F2``; the first stage is unanchored. Each stage is
    warm-started from the previous optimum.
    """
    alphas = validate_schedule(alphas)
    base = problem.state.potential
    if base.kind != DOUBLE_OBSTACLE:
        raise ValueError("deep-quench continuation needs the double obstacle potential")
    records: list[StageRecord] = []
    prev = None
    u = u0
    tau, w = problem.state.time.tau, problem.state.weights
    for k, alpha in enumerate(alphas):
        stage = problem.with_state(potential=base.with_deep_quench(alpha))
        anchor = None if prev is None else (anchor_weight, prev)
        try:
            res = projected_gradient(stage, u, options, anchor=anchor)
        except (OptimizationError, SolverError) as exc:
            raise ContinuationError(f"stage alpha={alpha} failed: {exc}", records) from exc
        sep = measure_separation(res.state)
        cost = evaluate_cost(res.state, res.control, problem.cost)
        inc = float("nan") if prev is None else l2q_norm(res.control - prev, stage.state)
        cont_adj = solve_adjoint(res.state, problem.cost)
        lam = extract_multiplier(res.state, cont_adj, alpha)
        h_int = float(tau * np.sum(np.asarray(eval_F1(res.state.potential, res.state.phi_grid[1:])) @ w))
        records.append(StageRecord(
            alpha=alpha, cost=cost, a_R=sep.a_R, b_R=sep.b_R, increment_norm=inc,
            multiplier_dual_proxy=lam.dual_norm_proxy(res.state), h_integral=h_int,
            multiplier_sign=lam.sign_statistics(cont_adj.p @ stage.state.E_B.T), result=res,
        ))
        prev = res.control
        u = res.control
    return DeepQuenchResult(records[-1].result, records)
