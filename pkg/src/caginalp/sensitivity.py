"""Linearized system, adjoint systems, reduced gradient and multiplier extraction.

Two adjoints are provided:

``solve_adjoint``
    The continuous adjoint system discretised backward in time with the
    mirror of the forward scheme (optimize-then-discretize). Its gradient is
    consistent with the discrete reduced cost up to O(tau).
``solve_discrete_adjoint``
    The exact transpose of :func:`solve_linearized`, i.e. the gradient of the
    discrete reduced cost to rounding. The optimizer uses this one by default.

Control rows and adjoint rows pair as ``u[n] <-> q^n`` for ``n = 0..M-1``.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .cost import CostSpec, cost_residuals
from .forward import (
    NonFinite,
    StateTrajectory,
    as_control_array,
    measure_separation,
    solve_state,
)
from .potentials import (
    DEEP_QUENCH,
    convex_reaction,
    deep_quench_h_second,
    eval_ell,
    eval_F2_second,
)


class SeparationError(ValueError):
    """The reference state touches the singular endpoints of the potential."""


@dataclass(frozen=True, eq=False)
class TangentTrajectory:
    eta: np.ndarray  # (M+1, N_A)
    xi: np.ndarray   # (M+1, N_B)


@dataclass(frozen=True, eq=False)
class AdjointTrajectory:
    """Costates ``q`` (A-basis) and ``p`` (B-basis) on ``n = 0..M``."""

    q: np.ndarray
    p: np.ndarray
    q_terminal: np.ndarray
    p_terminal: np.ndarray
    kind: str = "continuous"


class _Linearization:
    """Grid coefficients of the linearized dynamics along a state trajectory."""

    def __init__(self, state: StateTrajectory):
        sep = measure_separation(state)
        if not sep.satisfied:
            raise SeparationError(
                f"state range [{sep.a_R}, {sep.b_R}] is not strictly inside the potential domain"
            )
        p = state.problem
        self.state = state
        self.problem = p
        self.tau = p.time.tau
        x = state.phi_grid
        self.x = x
        self.th = state.theta_grid
        self.f1pp = convex_reaction(state.potential, x)[1]
        self.f2pp = np.asarray(eval_F2_second(state.potential, x))
        self.ell = np.asarray(eval_ell(p.latent, x))
        self.ellp = np.asarray(eval_ell(p.latent, x, 1))
        self.DA = 1.0 + self.tau * p.diffusion_A
        self.DB = 1.0 + self.tau * p.diffusion_B
        self.w = p.weights

    def phase_matrix(self, n: int, second: np.ndarray) -> np.ndarray:
        E = self.problem.E_B
        return np.diag(self.DB) + self.tau * ((E.T * (self.w * second[n])) @ E)

    @cached_property
    def implicit_matrices(self) -> list[np.ndarray]:
        return [self.phase_matrix(n, self.f1pp) for n in range(self.x.shape[0])]


def solve_linearized(state: StateTrajectory, h) -> TangentTrajectory:
    """Directional derivative ``(eta, xi)`` of the discrete control-to-state map.

    This is the exact linearisation of the forward step, so ``F1''`` is taken
    at the new level and ``F2''`` at the old one, mirroring the state solve.
    """
    lin = _Linearization(state)
    p = lin.problem
    h = as_control_array(h, p)
    E_A, E_B, P_A, P_B = p.E_A, p.E_B, p.P_A, p.P_B
    tau, M = lin.tau, p.time.steps
    eta = np.zeros((M + 1, p.basis_A.mode_count))
    xi = np.zeros((M + 1, p.basis_B.mode_count))
    th_h = tau * (h @ P_A.T)
    for n in range(M):
        xg = E_B @ xi[n]
        eg = E_A @ eta[n]
        rhs = xi[n] + tau * (P_B @ ((-lin.f2pp[n] + lin.ellp[n] * lin.th[n]) * xg + lin.ell[n] * eg))
        xi[n + 1] = np.linalg.solve(lin.implicit_matrices[n + 1], rhs)
        xg_new = E_B @ xi[n + 1]
        dx = lin.x[n + 1] - lin.x[n]
        coupling = (lin.ellp[n + 1] * dx) * xg_new + lin.ell[n + 1] * (xg_new - xg)
        eta[n + 1] = (eta[n] - P_A @ coupling + th_h[n]) / lin.DA
    if not (np.all(np.isfinite(eta)) and np.all(np.isfinite(xi))):
        raise NonFinite("non-finite tangent")
    return TangentTrajectory(eta, xi)


def solve_adjoint(state: StateTrajectory, cost: CostSpec) -> AdjointTrajectory:
    """Backward Euler discretisation of the continuous adjoint system.

    ``q``-step first, then the discrete ``d_t q`` is substituted into the
    ``p``-step, whose ``F''`` term is implicit.
    """
    lin = _Linearization(state)
    p = lin.problem
    b1, b2, b3, b4, _ = cost.betas
    res = cost_residuals(state, cost)
    E_A, E_B, P_A, P_B = p.E_A, p.E_B, p.P_A, p.P_B
    tau, M = lin.tau, p.time.steps
    q = np.zeros((M + 1, p.basis_A.mode_count))
    pp = np.zeros((M + 1, p.basis_B.mode_count))
    q[M] = b3 * res.theta_final
    pp[M] = b1 * res.phi_final - b3 * (P_B @ (lin.ell[M] * (E_A @ res.theta_final)))
    second = lin.f1pp + lin.f2pp
    for n in range(M - 1, -1, -1):
        pg = E_B @ pp[n + 1]
        q[n] = (q[n + 1] + tau * (P_A @ (lin.ell[n] * pg + b4 * res.theta_running[n]))) / lin.DA
        dq = (q[n + 1] - q[n]) / tau
        rhs = pp[n + 1] + tau * (P_B @ (lin.ell[n] * (E_A @ dq) + lin.ellp[n] * lin.th[n] * pg
                                         + b2 * res.phi_running[n]))
        pp[n] = np.linalg.solve(lin.phase_matrix(n, second), rhs)
    if not (np.all(np.isfinite(q)) and np.all(np.isfinite(pp))):
        raise NonFinite("non-finite adjoint")
    return AdjointTrajectory(q, pp, q[M].copy(), pp[M].copy(), "continuous")


def solve_discrete_adjoint(state: StateTrajectory, cost: CostSpec) -> AdjointTrajectory:
    """Reverse sweep through the tangent scheme (its exact transpose)."""
    lin = _Linearization(state)
    p = lin.problem
    b1, b2, b3, b4, _ = cost.betas
    res = cost_residuals(state, cost)
    E_A, E_B, P_A, P_B = p.E_A, p.E_B, p.P_A, p.P_B
    tau, M = lin.tau, p.time.steps
    q = np.zeros((M + 1, p.basis_A.mode_count))
    pp = np.zeros((M + 1, p.basis_B.mode_count))
    xi_bar = b1 * res.phi_final
    eta_bar = b3 * res.theta_final
    q[M], pp[M] = eta_bar, xi_bar
    for k in range(M, 0, -1):
        y = eta_bar / lin.DA
        q[k - 1] = y
        yg = E_A @ y
        dx = lin.x[k] - lin.x[k - 1]
        xi_k = xi_bar - P_B @ ((lin.ellp[k] * dx + lin.ell[k]) * yg)
        xi_prev = P_B @ (lin.ell[k] * yg)
        z = np.linalg.solve(lin.implicit_matrices[k], xi_k)
        pp[k - 1] = z
        zg = E_B @ z
        xi_prev = xi_prev + z + tau * (P_B @ ((-lin.f2pp[k - 1] + lin.ellp[k - 1] * lin.th[k - 1]) * zg))
        eta_prev = y + tau * (P_A @ (lin.ell[k - 1] * zg))
        xi_prev = xi_prev + b2 * tau * (P_B @ res.phi_running[k - 1])
        eta_prev = eta_prev + b4 * tau * (P_A @ res.theta_running[k - 1])
        xi_bar, eta_bar = xi_prev, eta_prev
    if not (np.all(np.isfinite(q)) and np.all(np.isfinite(pp))):
        raise NonFinite("non-finite adjoint")
    return AdjointTrajectory(q, pp, q[M].copy(), pp[M].copy(), "discrete")


def reduced_gradient(u, adjoint: AdjointTrajectory, beta5: float, state: StateTrajectory) -> np.ndarray:
    """Grid values of ``q + beta5 * u`` on the control grid ``(M, G)``."""
    p = state.problem
    u = as_control_array(u, p)
    return adjoint.q[:-1] @ p.E_A.T + beta5 * u


def adjoint_for(state: StateTrajectory, cost: CostSpec, kind: str = "discrete") -> AdjointTrajectory:
    if kind == "discrete":
        return solve_discrete_adjoint(state, cost)
    if kind == "continuous":
        return solve_adjoint(state, cost)
    raise ValueError(f"unknown adjoint kind {kind!r}")


def duality_sides(state: StateTrajectory, adjoint: AdjointTrajectory, tangent: TangentTrajectory,
                  h, cost: CostSpec) -> tuple[float, float]:
    """Both sides of ``int_Q q h = beta1 (phi(T)-phi_O, xi(T)) + ... + beta4 int (theta-theta_Q) eta``."""
    p = state.problem
    h = as_control_array(h, p)
    tau, w = p.time.tau, p.weights
    lhs = float(tau * np.sum(((adjoint.q[:-1] @ p.E_A.T) * h) @ w))
    b1, b2, b3, b4, _ = cost.betas
    res = cost_residuals(state, cost)
    xi_g = tangent.xi[:-1] @ p.E_B.T
    eta_g = tangent.eta[:-1] @ p.E_A.T
    rhs = (b1 * float(res.phi_final @ tangent.xi[-1])
           + b2 * tau * float(np.sum((res.phi_running * xi_g) @ w))
           + b3 * float(res.theta_final @ tangent.eta[-1])
           + b4 * tau * float(np.sum((res.theta_running * eta_g) @ w)))
    return lhs, rhs


@dataclass(frozen=True)
class SlopeReport:
    scales: tuple[float, ...]
    remainders: tuple[float, ...]
    slope: float | None

    def rows(self) -> list[dict]:
        return [{
            "scales": ";".join(repr(float(s)) for s in self.scales),
            "remainders": ";".join(repr(float(r)) for r in self.remainders),
            "slope": repr(float(self.slope)) if self.slope is not None else "nan",
        }]


def loglog_slope(x, y) -> float | None:
    """Least-squares slope of ``log y`` against ``log x``; None with fewer than 3 usable points."""
    x, y = np.asarray(x, float), np.asarray(y, float)
    ok = (x > 0) & (y > 0) & np.isfinite(y)
    if ok.sum() < 3:
        return None
    return float(np.polyfit(np.log(x[ok]), np.log(y[ok]), 1)[0])


def state_difference_norm(a: StateTrajectory, b_theta, b_phi) -> float:
    """``||theta_a - b_theta||_{L^inf(H)} + ||phi_a - b_phi||_{L^inf(H)}``."""
    return float(np.max(np.linalg.norm(a.theta - b_theta, axis=1))
                 + np.max(np.linalg.norm(a.phi - b_phi, axis=1)))


def frechet_remainder_probe(state_problem, u_bar, h, scales=(1e-1, 10**-1.5, 1e-2),
                            R: float | None = None) -> SlopeReport:
    """Remainder ``||S(u+sh) - S(u) - s DS(u)h||`` per scale and its log-log slope."""
    u_bar = np.array(as_control_array(u_bar, state_problem))
    h = np.array(as_control_array(h, state_problem))
    if R is not None:
        for s in scales:
            if np.max(np.abs(u_bar + s * h)) >= R:
                raise ValueError(f"scale {s} drives the control outside the ball of radius {R}")
    base = solve_state(state_problem, u_bar)
    if not np.any(h):
        return SlopeReport(tuple(scales), tuple(0.0 for _ in scales), None)
    tan = solve_linearized(base, h)
    rem = []
    for s in scales:
        pert = solve_state(state_problem, u_bar + s * h)
        rem.append(state_difference_norm(pert, base.theta + s * tan.eta, base.phi + s * tan.xi))
    return SlopeReport(tuple(float(s) for s in scales), tuple(rem), loglog_slope(scales, rem))


@dataclass(frozen=True, eq=False)
class MultiplierField:
    """Grid values of ``alpha h''(phi) p`` on ``n = 0..M``."""

    values: np.ndarray
    alpha: float

    def dual_norm_proxy(self, state: StateTrajectory) -> float:
        """Norm of the functional ``v -> int_Q Lambda v`` over B-mode test fields with unit
        ``L^2(0,T;H^1)`` norm."""
        p = state.problem
        proj = self.values[:-1] @ p.P_B.T
        return float(np.sqrt(p.time.tau * np.sum(proj**2 / (1.0 + p.basis_B.eigenvalues))))

    def sign_statistics(self, adjoint_p_grid: np.ndarray) -> dict[str, float]:
        prod = self.values * adjoint_p_grid
        n = prod.size
        return {
            "positive_fraction": float(np.sum(prod > 0) / n),
            "negative_fraction": float(np.sum(prod < 0) / n),
        }


def extract_multiplier(state: StateTrajectory, adjoint: AdjointTrajectory, alpha: float) -> MultiplierField:
    pot = state.potential
    if pot.smoothing == DEEP_QUENCH and pot.alpha != alpha:
        raise ValueError(f"alpha={alpha} does not match the state's deep-quench alpha={pot.alpha}")
    x = state.phi_grid
    if np.any(np.abs(x) >= 1):
        raise SeparationError("multiplier needs the state strictly inside (-1, 1)")
    pg = adjoint.p @ state.problem.E_B.T
    return MultiplierField(alpha * np.asarray(deep_quench_h_second(x)) * pg, float(alpha))
