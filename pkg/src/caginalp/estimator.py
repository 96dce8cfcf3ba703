"""Estimator-style facade over the optimal control pipeline."""
from __future__ import annotations

from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted, check_scalar

from ._validation import check_betas, check_control, check_state_problem, check_targets
from .control import (
    BoxConstraints,
    ControlProblem,
    ControlSpace,
    OptimizerOptions,
    projected_gradient,
)
from .cost import CostSpec, evaluate_cost
from .forward import StateTrajectory, solve_state


class PhaseFieldControl(BaseEstimator):
    """Box-constrained optimal control of the phase-field system.

    ``fit(X, y)`` takes a ``StateProblem`` and a mapping of tracking targets
    (``phi_omega``, ``theta_omega``, ``phi_Q``, ``theta_Q``) and stores the
    optimal control in ``control_``, its state in ``state_``, the adjoint in
    ``adjoint_`` and the iteration log in ``history_``.
    """

    def __init__(self, beta=(0.0, 0.0, 0.0, 0.0, 1.0), u_min=-1.0, u_max=1.0, R=2.0,
                 max_iters=200, tol=1e-6, gradient="discrete", time_blocks=None,
                 spatially_constant=False, initial_control=0.0):
        self.beta = beta
        self.u_min = u_min
        self.u_max = u_max
        self.R = R
        self.max_iters = max_iters
        self.tol = tol
        self.gradient = gradient
        self.time_blocks = time_blocks
        self.spatially_constant = spatially_constant
        self.initial_control = initial_control

    def _control_problem(self, X, y) -> ControlProblem:
        problem = check_state_problem(X)
        targets = check_targets(y, problem)
        cost = CostSpec(*check_betas(self.beta), **targets)
        box = BoxConstraints(self.u_min, self.u_max, self.R)
        return ControlProblem(problem, cost, box, ControlSpace(self.time_blocks, self.spatially_constant))

    def fit(self, X, y=None):
        check_scalar(self.max_iters, "max_iters", int, min_val=0)
        check_scalar(self.tol, "tol", (int, float), min_val=0.0, include_boundaries="neither")
        cp = self._control_problem(X, y)
        opts = OptimizerOptions(max_iters=self.max_iters, tol=self.tol, gradient=self.gradient)
        res = projected_gradient(cp, self.initial_control, opts)
        self.problem_ = cp
        self.control_ = res.control
        self.state_ = res.state
        self.adjoint_ = res.adjoint
        self.history_ = res.history
        self.cost_ = res.cost
        self.termination_ = res.termination
        self.stationarity_ = res.stationarity
        self.n_iter_ = len(res.history) - 1
        return self

    def predict(self, u=None) -> StateTrajectory:
        """State trajectory for ``u`` (default: the fitted control)."""
        check_is_fitted(self, "control_")
        if u is None:
            return self.state_
        return solve_state(self.problem_.state, check_control(u, self.problem_.state))

    def score(self, X=None, y=None) -> float:
        """Negative reduced cost of the fitted control, optionally for new data."""
        check_is_fitted(self, "control_")
        cp = self.problem_ if X is None else self._control_problem(X, y)
        u = self.control_ if X is None else check_control(self.control_, cp.state)
        return -evaluate_cost(solve_state(cp.state, u), u, cp.cost)
