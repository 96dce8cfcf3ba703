import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from instances import (
    PI,
    generic_control,
    generic_cost,
    generic_problem,
    line,
    obstacle_problem,
    tiny_problem,
)

from caginalp.control import (
    BoxConstraints,
    ContinuationError,
    ControlProblem,
    ControlSpace,
    OptimizerOptions,
    project_admissible,
    projected_gradient,
    solve_obstacle_deep_quench,
    stationarity_residual,
)
from caginalp.cost import CostSpec, evaluate_cost, l2q_inner, l2q_norm
from caginalp.forward import InitialData, StateProblem, TimeGrid, solve_state
from caginalp.potentials import LatentHeatSpec, PotentialSpec
from caginalp.spectral import FractionalParams, SpectralField, build_basis, from_grid

BOX = BoxConstraints(-1.0, 1.0, 2.0)


def _flat_problem(M=10, G=8, N=4):
    d = line(G)
    A, B = build_basis(d, "neumann", N), build_basis(d, "neumann", N)
    return StateProblem(A, B, FractionalParams(0.8, 0.6), PotentialSpec.regular(), LatentHeatSpec.constant(0.0),
                        InitialData(SpectralField.zeros(A), SpectralField.zeros(B)), TimeGrid(1.0, M))


# -- cost ------------------------------------------------------------------------

def test_cost_zero():
    p = _flat_problem()
    assert evaluate_cost(solve_state(p, 0.0), 0.0, CostSpec(1, 1, 0, 1, 1)) == 0.0


def test_cost_half_measure():
    p = _flat_problem()
    x = p.basis_A.domain.nodes()[:, 0]
    one = p.replace(initial=InitialData(SpectralField.zeros(p.basis_A), from_grid(np.ones_like(x), p.basis_B)))
    tr = solve_state(one, 0.0)
    assert evaluate_cost(tr, 0.0, CostSpec(beta2=1.0)) == pytest.approx(PI / 2, rel=1e-13)


def test_cost_matches_refined_quadrature():
    p = generic_problem(M=50)
    u = generic_control(p)
    cost = generic_cost(p)
    tr = solve_state(p, u)
    value = evaluate_cost(tr, u, cost)
    # independent quadrature at twice the spatial resolution, left-endpoint rule in time
    G2 = 2 * p.grid_size
    xf = (np.arange(G2) + 0.5) * PI / G2
    wf = PI / G2
    EA = p.basis_A.eigenfunction_values(xf[:, None])
    EB = p.basis_B.eigenfunction_values(xf[:, None])
    tau = p.time.tau
    th, ph = tr.theta @ EA.T, tr.phi @ EB.T
    tf = np.arange(50) * tau
    uf = 0.5 * np.sin(2 * (tf + tau))[:, None] * np.cos(xf)[None, :] + 0.2
    oracle = 0.5 * wf * np.sum((ph[-1] - 0.5 * np.cos(xf)) ** 2)
    oracle += 0.5 * tau * wf * np.sum((ph[:-1] - 0.3 * np.cos(xf)) ** 2)
    oracle += 0.5 * wf * np.sum((th[-1] - 0.2) ** 2)
    oracle += 0.5 * tau * wf * np.sum((th[:-1] - 0.1) ** 2)
    oracle += 0.5 * 0.1 * tau * wf * np.sum(uf**2)
    assert value == pytest.approx(oracle, rel=1e-4)


def test_cost_requires_theta_target():
    with pytest.raises(ValueError):
        CostSpec(beta3=1.0)
    with pytest.raises(ValueError):
        CostSpec(beta1=-1.0)


# -- projection and stationarity --------------------------------------------------

def test_projection_examples():
    assert np.array_equal(project_admissible(np.full((3, 4), 3.0), BOX), np.ones((3, 4)))
    u = np.array([[-0.5, 0.2], [0.9, -1.0]])
    assert np.array_equal(project_admissible(u, BOX), u)
    v = np.array([[-4.0, 0.3], [7.0, -0.2]])
    assert np.array_equal(project_admissible(v, BOX), np.maximum(-1, np.minimum(v, 1)))


def test_box_validation():
    with pytest.raises(ValueError):
        BoxConstraints(1.0, -1.0, 2.0)
    with pytest.raises(ValueError):
        BoxConstraints(-1.0, 2.0, 2.0)


controls = arrays(float, (10, 8), elements=st.floats(-5, 5))


@settings(max_examples=100, deadline=None)
@given(controls, controls)
def test_projection_nonexpansive_and_idempotent(u, v):
    p = _flat_problem()
    pu, pv = project_admissible(u, BOX, p), project_admissible(v, BOX, p)
    assert l2q_norm(pu - pv, p) <= l2q_norm(u - v, p) * (1 + 1e-14) + 1e-300
    assert np.array_equal(project_admissible(pu, BOX, p), pu)


def test_stationarity_examples():
    p = _flat_problem()
    q = np.full(p.control_shape, -2.0)
    assert stationarity_residual(np.ones(p.control_shape), q, 1.0, BOX, p) == 0.0
    rng = np.random.default_rng(0)
    q = rng.uniform(-3, 3, p.control_shape)
    u = project_admissible(-q / 2.0, BOX, p)
    assert stationarity_residual(u, q, 2.0, BOX, p) == 0.0
    q = rng.uniform(-0.5, 0.5, p.control_shape)
    u = rng.uniform(-0.5, 0.5, p.control_shape)
    assert stationarity_residual(u, q, 1.0, BOX, p) == pytest.approx(l2q_norm(u + q, p), rel=1e-14)
    with pytest.raises(ValueError):
        stationarity_residual(u, q, 0.0, BOX, p)


def test_control_space_projection():
    p = _flat_problem(M=10)
    space = ControlSpace(time_blocks=2, spatially_constant=True)
    u = np.random.default_rng(1).standard_normal(p.control_shape)
    pu = space.project(u, p)
    assert np.allclose(space.project(pu, p), pu)
    assert np.allclose(space.expand(space.values(pu, p), p), pu)
    assert l2q_inner(u - pu, pu, p) == pytest.approx(0.0, abs=1e-12)
    assert space.values(pu, p).shape == (2, 1)


# -- optimizer --------------------------------------------------------------------

def test_state_independent_projection_of_zero():
    p = _flat_problem()
    prob = ControlProblem(p, CostSpec(beta5=1.0), BoxConstraints(1.0, 2.0, 3.0))
    res = projected_gradient(prob, 1.5)
    assert np.allclose(res.control, 1.0, atol=0)
    assert res.converged and len(res.history) - 1 <= 2
    prob = ControlProblem(p, CostSpec(beta5=1.0), BOX)
    res = projected_gradient(prob, 0.7)
    assert np.allclose(res.control, 0.0, atol=1e-12) and res.converged


def test_beta5_zero_requires_opt_in():
    prob = tiny_problem()
    zero = ControlProblem(prob.state, CostSpec(1, 0, 1, 0, 0, phi_omega=prob.cost.phi_omega,
                                               theta_omega=prob.cost.theta_omega), prob.box, prob.space)
    with pytest.raises(ValueError):
        projected_gradient(zero)
    res = projected_gradient(zero, options=OptimizerOptions(allow_beta5_zero=True, max_iters=20))
    assert zero.admissible(res.control)
    assert res.stationarity == res.projected_gradient_norm


def test_inadmissible_start_rejected():
    with pytest.raises(ValueError):
        projected_gradient(tiny_problem(), 1.5)


@pytest.fixture(scope="module")
def tiny_result():
    prob = tiny_problem()
    return prob, projected_gradient(prob, 0.0)


def test_tiny_converges_with_monotone_history(tiny_result):
    prob, res = tiny_result
    assert res.converged
    assert res.stationarity <= 1e-6
    costs = [h["cost"] for h in res.history]
    assert all(b <= a for a, b in itertools.pairwise(costs))
    assert prob.admissible(res.control)


def test_variational_inequality_sign(tiny_result):
    prob, res = tiny_result
    p = prob.state
    g = prob.space.project(res.gradient, p)
    lo, hi = prob.box.bounds(p)
    rng = np.random.default_rng(7)
    for _ in range(20):
        pick = rng.integers(0, 2, p.control_shape).astype(bool)
        vertex = prob.space.project(np.where(pick, hi, lo), p)
        assert l2q_inner(g, vertex - res.control, p) >= -1e-6


def test_tiny_matches_coarse_grid_search(tiny_result):
    prob, res = tiny_result
    axis = np.linspace(-1, 1, 21)
    vals = np.array([[prob.reduced_cost(prob.space.expand([[a], [b]], prob.state)) for b in axis] for a in axis])
    i, j = np.unravel_index(np.argmin(vals), vals.shape)
    got = prob.space.values(res.control, prob.state).ravel()
    assert np.max(np.abs(got - [axis[i], axis[j]])) <= axis[1] - axis[0]
    assert res.cost <= vals[i, j] + 1e-12


def test_optimizer_reduces_generic_cost():
    p = generic_problem(M=50)
    prob = ControlProblem(p, generic_cost(p), BOX)
    u0 = generic_control(p)
    res = projected_gradient(prob, u0, OptimizerOptions(max_iters=15))
    assert res.cost < prob.reduced_cost(u0)
    costs = [h["cost"] for h in res.history]
    assert all(b <= a for a, b in itertools.pairwise(costs))


# -- deep quench --------------------------------------------------------------------

def test_deep_quench_state_independent():
    base = obstacle_problem(M=20)
    box = BoxConstraints(0.2, 1.0, 2.0)
    prob = ControlProblem(base.state, CostSpec(beta5=1.0), box)
    out = solve_obstacle_deep_quench(prob, [1.0, 0.5, 0.25], u0=0.5)
    for rec in out.records:
        assert np.allclose(rec.result.control, 0.2, atol=1e-12)


def test_deep_quench_schedule_validation():
    prob = obstacle_problem(M=10)
    for bad in ([0.5, 0.5], [0.25, 0.5], [2.0, 1.0], []):
        with pytest.raises(ValueError):
            solve_obstacle_deep_quench(prob, bad)
    with pytest.raises(ValueError):
        solve_obstacle_deep_quench(tiny_problem(), [1.0, 0.5])


def test_deep_quench_records_short_schedule():
    prob = obstacle_problem(M=50)
    out = solve_obstacle_deep_quench(prob, [1.0, 0.5, 0.25])
    assert len(out.records) == 3
    assert np.isnan(out.records[0].increment_norm)
    for rec in out.records:
        assert -1 < rec.a_R <= rec.b_R < 1
        assert rec.result.converged
        assert np.isfinite(rec.multiplier_dual_proxy)
        assert 0 <= rec.h_integral
        row = rec.row()
        assert set(row) >= {"alpha", "cost", "a_R", "b_R", "increment_norm", "multiplier_dual_proxy"}


@pytest.mark.filterwarnings("ignore:tau \\* Lip")
def test_continuation_error_reports_stage():
    base = obstacle_problem(M=2)
    x = base.state.basis_A.domain.nodes()[:, 0]
    sp = base.state.replace(potential=PotentialSpec.double_obstacle(10.0).with_deep_quench(1.0), latent=LatentHeatSpec.constant(1.0),
                            time=TimeGrid(100.0, 2),
                            initial=InitialData(SpectralField.zeros(base.state.basis_A),
                                                from_grid(0.5 * np.sin(x), base.state.basis_B)))
    prob = ControlProblem(sp, base.cost, BoxConstraints(-30.0, 30.0, 40.0))
    with pytest.raises(ContinuationError) as info:
        solve_obstacle_deep_quench(prob, [1.0, 0.5], u0=30.0)
    assert info.value.records == []
    assert "alpha=1.0" in str(info.value)
