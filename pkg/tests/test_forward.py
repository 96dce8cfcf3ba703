import itertools

import numpy as np
import pytest
from instances import PI, generic_control, generic_problem, gradient_flow_problem, line
from scipy.integrate import solve_ivp

from caginalp.forward import (
    DomainEscape,
    InitialData,
    StateProblem,
    TimeGrid,
    free_energy,
    measure_separation,
    solve_state,
    solve_state_moreau_yosida,
)
from caginalp.potentials import DomainViolation, LatentHeatSpec, PotentialSpec
from caginalp.sensitivity import loglog_slope
from caginalp.spectral import (
    FractionalParams,
    SpectralField,
    build_basis,
    from_grid,
    to_grid,
)

REG = PotentialSpec.regular()


def _problem(N=8, G=24, pot=REG, latent=None, theta0=None, phi0=None, M=50, T=1.0, bc_B="neumann"):
    d = line(G)
    A, B = build_basis(d, "neumann", N), build_basis(d, bc_B, N)
    t0 = SpectralField.zeros(A) if theta0 is None else from_grid(theta0, A)
    p0 = SpectralField.zeros(B) if phi0 is None else from_grid(phi0, B)
    latent = LatentHeatSpec.constant(0.7) if latent is None else latent
    return StateProblem(A, B, FractionalParams(0.8, 0.6), pot, latent, InitialData(t0, p0), TimeGrid(T, M))


def test_zero_data_is_equilibrium():
    p = _problem(latent=LatentHeatSpec.tanh(0.5, 0.3, 1.0))
    tr = solve_state(p, 0.0)
    assert np.array_equal(tr.theta, np.zeros_like(tr.theta))
    assert np.array_equal(tr.phi, np.zeros_like(tr.phi))


def test_pure_phase_is_steady():
    x = line(24).nodes()[:, 0]
    p = _problem(latent=LatentHeatSpec.constant(0.0), phi0=np.ones_like(x))
    tr = solve_state(p, 0.0)
    assert np.allclose(tr.phi_grid, 1.0, atol=1e-13)
    assert np.allclose(tr.theta, 0.0, atol=1e-15)


def _single_mode(M, T=1.0, phi0=0.5):
    g = np.ones(8)
    return _problem(N=1, G=8, latent=LatentHeatSpec.constant(0.0), phi0=phi0 * g, M=M, T=T)


def _ode_oracle(T, phi0=0.5):
    sol = solve_ivp(lambda t, y: y - y**3, (0.0, T), [phi0], method="DOP853", rtol=1e-13, atol=1e-14)
    return float(sol.y[0, -1])


def test_single_mode_ode_oracle_order():
    ref = _ode_oracle(1.0)
    closed = 0.5 * np.e / np.sqrt(1 + 0.25 * (np.e**2 - 1))
    assert ref == pytest.approx(closed, rel=1e-11)
    taus, errs = [], []
    for k in range(5):
        M = 100 * 2**k
        tr = solve_state(_single_mode(M), 0.0)
        taus.append(1.0 / M)
        errs.append(abs(float(tr.phi_grid[-1].mean()) - ref))
    assert loglog_slope(taus, errs) >= 0.9
    assert errs[-1] < 1e-3


def test_single_mode_monotone_approach_to_one():
    tr = solve_state(_single_mode(400, T=8.0), 0.0)
    vals = tr.phi_grid[:, 0]
    assert np.all(np.diff(vals) > 0)
    assert vals[-1] < 1 and vals[-1] > 0.999


def test_odd_symmetry():
    x = line(24).nodes()[:, 0]
    th0, ph0 = 0.3 * np.cos(x), 0.4 * np.cos(2 * x) + 0.1
    u = 0.5 * np.sin(np.linspace(0, 3, 50))[:, None] * np.cos(x)[None, :]
    a = solve_state(_problem(theta0=th0, phi0=ph0), u)
    b = solve_state(_problem(theta0=-th0, phi0=-ph0), -u)
    assert np.array_equal(a.theta, -b.theta)
    assert np.array_equal(a.phi, -b.phi)


def test_separation_examples():
    tr = solve_state(_problem(), 0.0)
    rep = measure_separation(tr)
    assert (rep.a_R, rep.b_R, rep.satisfied) == (0.0, 0.0, True)
    p = generic_problem(M=100)
    tr = solve_state(p, generic_control(p))
    rep = measure_separation(tr)
    assert rep.satisfied and -1 < rep.a_R <= rep.b_R < 1
    assert rep.b_R == tr.phi_grid.max()


def test_separation_flag_uses_open_interval():
    x = line(24).nodes()[:, 0]
    p = _problem(pot=PotentialSpec.logarithmic(1.5), latent=LatentHeatSpec.constant(0.0),
                 phi0=0.97 * np.ones_like(x), M=1, T=1e-9)
    rep = measure_separation(solve_state(p, 0.0))
    assert rep.b_R == pytest.approx(0.97, abs=1e-8) and rep.satisfied


def test_free_energy_examples():
    B = build_basis(line(24), "neumann", 8)
    assert free_energy(SpectralField.zeros(B), 0.6, REG) == pytest.approx(PI / 4, rel=1e-14)
    one = from_grid(np.ones(24), B)
    assert free_energy(one, 0.6, REG) == pytest.approx(0.0, abs=1e-28)
    with pytest.raises(DomainViolation):
        free_energy(from_grid(1.5 * np.ones(24), B), 0.6, PotentialSpec.logarithmic(1.5))


def test_free_energy_matches_refined_quadrature():
    rng = np.random.default_rng(3)
    B = build_basis(line(48), "neumann", 6)
    fine = build_basis(line(96), "neumann", 6)
    for _ in range(5):
        c = 0.2 * rng.standard_normal(6) / (1 + np.arange(6))
        coarse = free_energy(SpectralField(B, c), 0.6, REG)
        oracle = free_energy(SpectralField(fine, c), 0.6, REG)
        assert coarse == pytest.approx(oracle, rel=1e-6)


def test_moreau_yosida_zero_data():
    p = _problem(pot=PotentialSpec.double_obstacle(1.0).with_yosida(1.0))
    tr = solve_state_moreau_yosida(p, 0.0, 0.1)
    assert np.all(tr.phi == 0) and np.all(tr.theta == 0)


def test_moreau_yosida_obstacle_penalty_bounded():
    x = line(24).nodes()[:, 0]
    p = _problem(pot=PotentialSpec.double_obstacle(1.0).with_yosida(1.0), phi0=0.9 * np.cos(x), M=100)
    tr = solve_state_moreau_yosida(p, 3.0, 0.1)
    over = np.maximum(np.abs(tr.phi_grid) - 1, 0)
    pen = tr.time.tau * np.sum((over**2)[1:] @ p.weights)
    assert np.isfinite(pen) and pen < 1.0


def test_moreau_yosida_log_cauchy():
    p = generic_problem(M=100)
    u = generic_control(p)
    trs = [solve_state_moreau_yosida(p, u, lam) for lam in (0.1, 0.05, 0.025, 0.0125)]
    diffs = [np.sqrt(p.time.tau * np.sum(((a.phi - b.phi) ** 2)[1:])) for a, b in itertools.pairwise(trs)]
    assert all(d1 < d0 for d0, d1 in itertools.pairwise(diffs))


@pytest.mark.parametrize("pot", [REG, PotentialSpec.double_obstacle(1.0).with_yosida(0.05)], ids=["regular", "obstacle_my"])
def test_energy_dissipation(pot):
    rng = np.random.default_rng(11)
    p = gradient_flow_problem(pot, N=16, M=200)
    for _ in range(3):
        c = 0.6 * rng.standard_normal(16) / (1 + np.arange(16))
        q = p.replace(initial=InitialData(SpectralField.zeros(p.basis_A), SpectralField(p.basis_B, c)))
        e = solve_state(q, 0.0).diagnostics["energy"]
        assert np.all(np.diff(e) <= 1e-10 * np.maximum(np.abs(e[:-1]), 1.0))


@pytest.mark.filterwarnings("ignore:tau \\* Lip")
def test_log_escape_raises():
    x = line(24).nodes()[:, 0]
    p = _problem(pot=PotentialSpec.logarithmic(10.0), latent=LatentHeatSpec.constant(1.0),
                 phi0=0.9 * np.ones_like(x), M=2, T=100.0)
    with pytest.raises(DomainEscape):
        solve_state(p, 1.0)


def test_obstacle_exact_rejected():
    with pytest.raises(DomainViolation):
        _problem(pot=PotentialSpec.double_obstacle(1.0))


def test_invalid_initial_bounds():
    x = line(24).nodes()[:, 0]
    B = build_basis(line(24), "neumann", 8)
    A = B
    with pytest.raises(ValueError):
        StateProblem(A, B, FractionalParams(0.8, 0.6), PotentialSpec.logarithmic(1.5), LatentHeatSpec.constant(0.0),
                     InitialData(SpectralField.zeros(A), from_grid(0.3 * np.cos(x), B), lower=-0.1, upper=0.1),
                     TimeGrid(1.0, 4))


def test_uniform_bounds_on_control_sample():
    p = generic_problem(M=100)
    rng = np.random.default_rng(5)
    x = p.basis_A.domain.nodes()[:, 0]
    t = np.linspace(0, 1, 100)[:, None]
    vals = []
    for _ in range(5):
        a, b = rng.uniform(-1, 1, 2)
        u = a * np.cos(3 * t) + b * np.cos(x)[None, :]
        vals.append(solve_state(p, u).bound_diagnostics())
    for key in ("sup_theta_vrho", "sum_tau_dphi2", "integral_F1"):
        col = np.array([v[key] for v in vals])
        assert np.all(np.isfinite(col)) and col.max() < 10.0


def test_trajectory_grid_round_trip():
    p = generic_problem(M=20)
    tr = solve_state(p, generic_control(p))
    assert np.allclose(to_grid(tr.phi_field(5)), tr.phi_grid[5], atol=1e-14)
