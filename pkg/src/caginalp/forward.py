"""Time integration of the fractional Caginalp system.

One step ``n -> n+1`` of the staggered semi-implicit scheme::

    (I + tau B^{2 sigma}) phi' + tau F1'(phi') = phi - tau F2'(phi) + tau l(phi) theta
    (I + tau A^{2 rho}) theta' = theta - l(phi') (phi' - phi) + tau u'

Diffusion is diagonal in the eigenbases; products and the reaction are
evaluated on the shared collocation grid and projected back. The phi-step is a
strictly monotone nonlinear system solved by damped Newton in coefficient space.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np

from .potentials import (
    LatentHeatSpec,
    PotentialSpec,
    convex_reaction,
    eval_ell,
    eval_F,
    eval_F1,
    eval_F2_prime,
    eval_F_third,
)
from .spectral import EigenBasis, FractionalParams, SpectralField, eigenvalue_powers


class SolverError(RuntimeError):
    """Numerical failure of a time integration; carries the failing step."""

    kind = "SolverError"

    def __init__(self, message: str, step: int | None = None):
        super().__init__(message)
        self.step = step

    def record(self) -> str:
        return f"error={self.kind} step={self.step} message={self}"


class InnerDivergence(SolverError):
    kind = "InnerDivergence"


class DomainEscape(SolverError):
    kind = "DomainEscape"


class NonFinite(SolverError):
    kind = "NonFinite"


@dataclass(frozen=True)
class TimeGrid:
    T: float
    steps: int

    def __post_init__(self):
        if not (self.T > 0 and np.isfinite(self.T)):
            raise ValueError("final time T must be positive")
        if int(self.steps) < 1:
            raise ValueError("steps must be a positive integer")
        object.__setattr__(self, "steps", int(self.steps))

    @property
    def tau(self) -> float:
        return self.T / self.steps

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.T, self.steps + 1)

    def refined(self, halvings: int = 1) -> TimeGrid:
        return TimeGrid(self.T, self.steps * 2**halvings)


@dataclass(frozen=True)
class SolverParams:
    inner_tol: float = 1e-12
    max_inner: int = 60
    damping: float = 1.0
    guard_margin: float = 1e-6

    def __post_init__(self):
        if not self.inner_tol > 0:
            raise ValueError("inner_tol must be positive")
        if not 0 < self.guard_margin < 1:
            raise ValueError("guard_margin must lie in (0, 1)")
        if not 0 < self.damping <= 1:
            raise ValueError("damping must lie in (0, 1]")
        if int(self.max_inner) < 1:
            raise ValueError("max_inner must be positive")


@dataclass(frozen=True, eq=False)
class InitialData:
    theta0: SpectralField
    phi0: SpectralField
    lower: float | None = None
    upper: float | None = None


@dataclass(frozen=True, eq=False)
class StateProblem:
    """Everything the forward solver needs except the control."""

    basis_A: EigenBasis
    basis_B: EigenBasis
    params: FractionalParams
    potential: PotentialSpec
    latent: LatentHeatSpec
    initial: InitialData
    time: TimeGrid
    solver: SolverParams = field(default_factory=SolverParams)

    def __post_init__(self):
        if not self.basis_A.compatible(self.basis_B):
            raise ValueError("operators A and B must share the domain and collocation grid")
        if self.initial.theta0.basis.mode_count != self.basis_A.mode_count:
            raise ValueError("theta0 must be a field in the A-basis")
        if self.initial.phi0.basis.mode_count != self.basis_B.mode_count:
            raise ValueError("phi0 must be a field in the B-basis")
        self.potential.check_differentiable()
        self._check_initial()

    def _check_initial(self):
        phi = self.basis_B.synthesis @ self.initial.phi0.coefficients
        lo, hi = self.initial.lower, self.initial.upper
        lo = float(phi.min()) if lo is None else lo
        hi = float(phi.max()) if hi is None else hi
        tol = 1e-12 * max(1.0, abs(lo), abs(hi))
        if phi.min() < lo - tol or phi.max() > hi + tol:
            raise ValueError(
                f"phi0 grid values [{phi.min():.6g}, {phi.max():.6g}] violate the declared "
                f"bounds [{lo}, {hi}]"
            )
        rm, rp = self.potential.domain
        if not (rm < lo and hi < rp):
            raise ValueError(f"initial bounds [{lo}, {hi}] must lie strictly inside ({rm}, {rp})")

    def replace(self, **changes) -> StateProblem:
        return replace(self, **changes)

    @property
    def grid_size(self) -> int:
        return self.basis_A.grid_size

    @property
    def weights(self) -> np.ndarray:
        return self.basis_A.weights

    @cached_property
    def diffusion_A(self) -> np.ndarray:
        return eigenvalue_powers(self.basis_A.eigenvalues, 2 * self.params.rho)

    @cached_property
    def diffusion_B(self) -> np.ndarray:
        return eigenvalue_powers(self.basis_B.eigenvalues, 2 * self.params.sigma)

    @cached_property
    def E_A(self) -> np.ndarray:
        return np.ascontiguousarray(self.basis_A.synthesis)

    @cached_property
    def E_B(self) -> np.ndarray:
        return np.ascontiguousarray(self.basis_B.synthesis)

    @cached_property
    def P_A(self) -> np.ndarray:
        return np.ascontiguousarray(self.basis_A.analysis)

    @cached_property
    def P_B(self) -> np.ndarray:
        return np.ascontiguousarray(self.basis_B.analysis)

    @property
    def control_shape(self) -> tuple[int, int]:
        return (self.time.steps, self.grid_size)


def as_control_array(u, problem: StateProblem) -> np.ndarray:
    """Broadcast a control to shape ``(M, G)``; row ``n`` drives step ``n -> n+1``."""
    M, G = problem.control_shape
    u = np.asarray(u, dtype=float)
    if u.ndim >= 2 and u.shape[0] == M and u.shape[1:] != (G,):
        u = u.reshape(M, -1)
    try:
        out = np.broadcast_to(u, (M, G))
    except ValueError:
        raise ValueError(f"control of shape {u.shape} does not match grid ({M}, {G})") from None
    if not np.all(np.isfinite(out)):
        raise ValueError("control must be finite")
    return out


@dataclass(frozen=True, eq=False)
class StateTrajectory:
    """Coefficient history ``theta[n], phi[n]`` for ``n = 0..M`` plus diagnostics."""

    problem: StateProblem
    control: np.ndarray
    theta: np.ndarray
    phi: np.ndarray
    inner_iterations: np.ndarray
    potential: PotentialSpec

    @property
    def time(self) -> TimeGrid:
        return self.problem.time

    @property
    def times(self) -> np.ndarray:
        return self.problem.time.times

    @cached_property
    def theta_grid(self) -> np.ndarray:
        return self.theta @ self.problem.E_A.T

    @cached_property
    def phi_grid(self) -> np.ndarray:
        return self.phi @ self.problem.E_B.T

    @cached_property
    def dphi_dt(self) -> np.ndarray:
        """Backward difference quotients in coefficient space, rows ``n = 1..M``."""
        return np.diff(self.phi, axis=0) / self.time.tau

    @cached_property
    def diagnostics(self) -> dict[str, np.ndarray]:
        p = self.problem
        lamA = eigenvalue_powers(p.basis_A.eigenvalues, 2 * p.params.rho)
        dphi = np.zeros(self.time.steps + 1)
        dphi[1:] = np.linalg.norm(self.dphi_dt, axis=1)
        energy = np.array([
            _energy(row, grid, p.diffusion_B, p.weights, self.potential)
            for row, grid in zip(self.phi, self.phi_grid)
        ])
        return {
            "theta_norm": np.linalg.norm(self.theta, axis=1),
            "theta_vrho_norm": np.sqrt(np.sum(self.theta**2 * (1 + lamA), axis=1)),
            "dphi_dt_norm": dphi,
            "min_phi": self.phi_grid.min(axis=1),
            "max_phi": self.phi_grid.max(axis=1),
            "energy": energy,
            "inner_iters": self.inner_iterations.astype(float),
        }

    def theta_field(self, n: int = -1) -> SpectralField:
        return SpectralField(self.problem.basis_A, self.theta[n])

    def phi_field(self, n: int = -1) -> SpectralField:
        return SpectralField(self.problem.basis_B, self.phi[n])

    def bound_diagnostics(self) -> dict[str, float]:
        """Discrete proxies of the uniform a-priori bounds."""
        tau = self.time.tau
        d = self.diagnostics
        with np.errstate(invalid="ignore"):
            f1 = np.asarray(eval_F1(self.potential, self.phi_grid[1:]))
        return {
            "sup_theta_vrho": float(d["theta_vrho_norm"].max()),
            "sum_tau_dphi2": float(tau * np.sum(d["dphi_dt_norm"][1:] ** 2)),
            "integral_F1": float(tau * np.sum(f1 @ self.problem.weights)),
            # reported, not bounded: F''' of the logarithmic family blows up at +-1
            "sup_abs_F_third": float(np.max(np.abs(eval_F_third(self.potential, self.phi_grid)))),
        }


def _energy(coeffs, grid, diffusion_B, weights, potential) -> float:
    return float(0.5 * np.sum(diffusion_B * coeffs**2) + weights @ np.asarray(eval_F(potential, grid)))


def free_energy(phi: SpectralField, sigma: float, potential: PotentialSpec) -> float:
    """``1/2 ||B^sigma phi||^2 + int F(phi)`` with collocation quadrature."""
    basis = phi.basis
    grid = basis.synthesis @ phi.coefficients
    values = np.asarray(eval_F(potential, grid))
    if not np.all(np.isfinite(values)):
        from .potentials import DomainViolation

        raise DomainViolation("phi leaves the domain of the potential")
    lam = eigenvalue_powers(basis.eigenvalues, 2 * sigma)
    return float(0.5 * np.sum(lam * phi.coefficients**2) + basis.weights @ values)


class _PhaseStep:
    """Solver for ``D c + tau P F1'(E c) = rhs`` (D diagonal, F1 convex)."""

    def __init__(self, problem: StateProblem, potential: PotentialSpec):
        self.tau = problem.time.tau
        self.D = 1.0 + self.tau * problem.diffusion_B
        self.E = problem.E_B
        self.P = problem.P_B
        self.w = problem.weights
        self.pot = potential
        self.params = problem.solver
        self.singular = potential.singular
        lo, hi = potential.domain
        if self.singular:
            half = 0.5 * (hi - lo)
            m = problem.solver.guard_margin * half
            self.guard = (lo + m, hi - m)
        else:
            self.guard = None

    def _residual(self, c, x):
        f1, f1p = convex_reaction(self.pot, x)
        return self.D * c + self.tau * (self.P @ f1) - self._rhs, f1p

    def _inside(self, x):
        return not self.singular or (np.all(x > -1.0) and np.all(x < 1.0))

    def solve(self, c0: np.ndarray, rhs: np.ndarray, step: int) -> tuple[np.ndarray, int]:
        self._rhs = rhs
        tol = self.params.inner_tol
        c = c0.copy()
        x = self.E @ c
        if not self._inside(x):
            c = rhs / self.D
            x = self.E @ c
            if not self._inside(x):
                c = np.zeros_like(c)
                x = self.E @ c
        R, f1p = self._residual(c, x)
        rnorm = np.linalg.norm(R)
        floor = 1e-15 * (1.0 + np.linalg.norm(rhs) + np.linalg.norm(self.D * c))
        for it in range(1, self.params.max_inner + 1):
            if rnorm <= floor:
                return self._accept(c, x, it - 1, step)
            J = np.diag(self.D) + self.tau * ((self.E.T * (self.w * f1p)) @ self.E)
            d = -np.linalg.solve(J, R)
            t = self.params.damping
            for _ in range(60):
                cn = c + t * d
                xn = self.E @ cn
                if self._inside(xn):
                    Rn, f1pn = self._residual(cn, xn)
                    rn = np.linalg.norm(Rn)
                    if rn <= (1 - 1e-4 * t) * rnorm or rn <= floor:
                        break
                t *= 0.5
            else:
                if np.linalg.norm(d) <= tol * (1 + np.linalg.norm(c)) or rnorm <= 1e3 * floor:
                    return self._accept(c, x, it, step)
                self._fail(c, x, step, "line search in the reaction solve stalled")
            c, x, R, f1p, rnorm = cn, xn, Rn, f1pn, rn
            if t * np.linalg.norm(d) <= tol * (1 + np.linalg.norm(c)):
                return self._accept(c, x, it, step)
        self._fail(c, x, step, f"reaction solve did not reach tol {tol} in "
                               f"{self.params.max_inner} iterations")

    def _near_boundary(self, x):
        return self.guard is not None and (x.min() <= self.guard[0] or x.max() >= self.guard[1])

    def _fail(self, c, x, step, msg):
        if not np.all(np.isfinite(c)):
            raise NonFinite("non-finite phase field", step)
        if self._near_boundary(x):
            raise DomainEscape(
                f"phase field reached [{x.min():.17g}, {x.max():.17g}] outside the guard band "
                f"{self.guard}", step)
        raise InnerDivergence(msg, step)

    def _accept(self, c, x, iters, step):
        if not np.all(np.isfinite(c)):
            raise NonFinite("non-finite phase field", step)
        if self._near_boundary(x):
            raise DomainEscape(
                f"phase field reached [{x.min():.17g}, {x.max():.17g}] outside the guard band "
                f"{self.guard}", step)
        return c, iters


def solve_state(problem: StateProblem, control, potential: PotentialSpec | None = None) -> StateTrajectory:
    """Integrate the state system for the control ``u`` (see :func:`as_control_array`)."""
    pot = problem.potential if potential is None else potential
    pot.check_differentiable()
    u = as_control_array(control, problem)
    tgrid = problem.time
    tau, M = tgrid.tau, tgrid.steps
    if tau * pot.lipschitz_F2 > 1:
        warnings.warn(
            f"tau * Lip(F2') = {tau * pot.lipschitz_F2:.3g} > 1; explicit F2' treatment may be inaccurate",
            RuntimeWarning, stacklevel=2,
        )
    E_A, E_B, P_A, P_B = problem.E_A, problem.E_B, problem.P_A, problem.P_B
    DA = 1.0 + tau * problem.diffusion_A
    stepper = _PhaseStep(problem, pot)
    latent = problem.latent

    theta = np.empty((M + 1, problem.basis_A.mode_count))
    phi = np.empty((M + 1, problem.basis_B.mode_count))
    iters = np.zeros(M + 1, dtype=int)
    theta[0] = problem.initial.theta0.coefficients
    phi[0] = problem.initial.phi0.coefficients
    x_old = E_B @ phi[0]
    th_old = E_A @ theta[0]
    tu = tau * (u @ P_A.T)
    for n in range(M):
        rhs = phi[n] + tau * (P_B @ (latent_product(latent, x_old, th_old) - eval_F2_prime(pot, x_old)))
        phi[n + 1], iters[n + 1] = stepper.solve(phi[n], rhs, n + 1)
        x_new = E_B @ phi[n + 1]
        coupling = P_A @ (np.asarray(eval_ell(latent, x_new)) * (x_new - x_old))
        theta[n + 1] = (theta[n] - coupling + tu[n]) / DA
        if not np.all(np.isfinite(theta[n + 1])):
            raise NonFinite("non-finite temperature", n + 1)
        x_old = x_new
        th_old = E_A @ theta[n + 1]
    for arr in (theta, phi, iters):
        arr.setflags(write=False)
    u = np.array(u)
    u.setflags(write=False)
    return StateTrajectory(problem, u, theta, phi, iters, pot)


def latent_product(latent: LatentHeatSpec, x, th):
    return np.asarray(eval_ell(latent, x)) * th


def solve_state_moreau_yosida(problem: StateProblem, control, lam: float) -> StateTrajectory:
    """State solve with ``F1'`` replaced by its Moreau-Yosida regularisation."""
    return solve_state(problem, control, potential=problem.potential.with_yosida(lam))


@dataclass(frozen=True)
class SeparationReport:
    a_R: float
    b_R: float
    satisfied: bool


def measure_separation(trajectory: StateTrajectory, potential: PotentialSpec | None = None) -> SeparationReport:
    pot = trajectory.potential if potential is None else potential
    g = trajectory.phi_grid
    a, b = float(g.min()), float(g.max())
    lo, hi = pot.domain
    return SeparationReport(a, b, bool(lo < a and b < hi))
