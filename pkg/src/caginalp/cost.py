"""Tracking-type cost functional and its quadrature.

Spatial integrals use the collocation quadrature of the bases; time integrals
of the state use the left-endpoint rule over ``t_0 .. t_{M-1}`` and the control
(piecewise constant per step) is integrated exactly.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .forward import StateProblem, StateTrajectory, as_control_array
from .spectral import SpectralField


@dataclass(frozen=True, eq=False)
class CostSpec:
    """Weights ``beta1..beta5`` and tracking targets.

    ``phi_omega`` / ``theta_omega`` are final-time targets in the B- and
    A-basis; ``phi_Q`` / ``theta_Q`` are space-time grid fields broadcastable
    to ``(M + 1, G)``. ``None`` means a zero target.
    """

    beta1: float = 0.0
    beta2: float = 0.0
    beta3: float = 0.0
    beta4: float = 0.0
    beta5: float = 0.0
    phi_omega: SpectralField | None = None
    theta_omega: SpectralField | None = None
    phi_Q: np.ndarray | float | None = None
    theta_Q: np.ndarray | float | None = None

    def __post_init__(self):
        if any(not (b >= 0 and np.isfinite(b)) for b in self.betas):
            raise ValueError(f"cost weights must be nonnegative, got {self.betas}")
        if self.beta3 > 0 and self.theta_omega is None:
            raise ValueError("beta3 > 0 requires theta_omega as a field in the A-basis")

    @property
    def betas(self) -> tuple[float, float, float, float, float]:
        return (self.beta1, self.beta2, self.beta3, self.beta4, self.beta5)

    @property
    def state_independent(self) -> bool:
        return not any(self.betas[:4])


def _target_coeffs(target: SpectralField | None, n: int) -> np.ndarray:
    if target is None:
        return np.zeros(n)
    if target.coefficients.shape[0] != n:
        raise ValueError("target lives in a basis of the wrong size")
    return target.coefficients


def _space_time_target(target, problem: StateProblem) -> np.ndarray:
    shape = (problem.time.steps + 1, problem.grid_size)
    if target is None:
        return np.zeros(shape)
    try:
        return np.broadcast_to(np.asarray(target, dtype=float), shape)
    except ValueError:
        raise ValueError(f"space-time target does not broadcast to {shape}") from None


@dataclass(frozen=True)
class CostResiduals:
    """Misfits entering the cost; running misfits on rows ``n = 0..M-1``."""

    phi_final: np.ndarray    # B coefficients
    theta_final: np.ndarray  # A coefficients
    phi_running: np.ndarray  # grid, (M, G)
    theta_running: np.ndarray


def cost_residuals(traj: StateTrajectory, cost: CostSpec) -> CostResiduals:
    p = traj.problem
    phi_Q = _space_time_target(cost.phi_Q, p)
    theta_Q = _space_time_target(cost.theta_Q, p)
    return CostResiduals(
        phi_final=traj.phi[-1] - _target_coeffs(cost.phi_omega, p.basis_B.mode_count),
        theta_final=traj.theta[-1] - _target_coeffs(cost.theta_omega, p.basis_A.mode_count),
        phi_running=traj.phi_grid[:-1] - phi_Q[:-1],
        theta_running=traj.theta_grid[:-1] - theta_Q[:-1],
    )


def l2q_inner(a: np.ndarray, b: np.ndarray, problem: StateProblem) -> float:
    """``L^2(Q)`` quadrature of the product of two control-shaped fields."""
    return float(problem.time.tau * np.sum((a * b) @ problem.weights))


def l2q_norm(a: np.ndarray, problem: StateProblem) -> float:
    return float(np.sqrt(max(l2q_inner(a, a, problem), 0.0)))


def evaluate_cost(traj: StateTrajectory, u, cost: CostSpec) -> float:
    p = traj.problem
    u = as_control_array(u, p)
    b1, b2, b3, b4, b5 = cost.betas
    res = cost_residuals(traj, cost)
    tau, w = p.time.tau, p.weights
    total = 0.0
    if b1:
        total += 0.5 * b1 * float(res.phi_final @ res.phi_final)
    if b2:
        total += 0.5 * b2 * tau * float(np.sum(res.phi_running**2 @ w))
    if b3:
        total += 0.5 * b3 * float(res.theta_final @ res.theta_final)
    if b4:
        total += 0.5 * b4 * tau * float(np.sum(res.theta_running**2 @ w))
    if b5:
        total += 0.5 * b5 * l2q_inner(u, u, p)
    return total
