import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from caginalp.spectral import (
    DomainSpec,
    SpectralField,
    apply_power,
    build_basis,
    embedding_guard,
    from_grid,
    inner_product,
    norm_Vs,
    to_grid,
)

PI = np.pi
LINE = DomainSpec(1, (PI,), 16)
SQUARE = DomainSpec(2, (PI, PI), 8)


def test_dirichlet_interval_eigenvalues():
    assert np.allclose(build_basis(LINE, "dirichlet", 3).eigenvalues, [1, 4, 9], atol=1e-14)


def test_neumann_interval_eigenvalues():
    assert np.allclose(build_basis(LINE, "neumann", 3).eigenvalues, [0, 1, 4], atol=1e-14)


def test_dirichlet_square_eigenvalues():
    assert np.allclose(build_basis(SQUARE, "dirichlet", 4).eigenvalues, [2, 5, 5, 8], atol=1e-14)


def test_too_many_modes_rejected():
    with pytest.raises(ValueError):
        build_basis(DomainSpec(1, (PI,), 4), "dirichlet", 4)


def test_apply_power_examples():
    B = build_basis(LINE, "dirichlet", 3)  # eigenvalues 1, 4, 9
    v = SpectralField(B, np.array([0.0, 1.0, 0.0]))
    assert np.allclose(apply_power(v, 0.5).coefficients, [0, 2, 0])
    w = SpectralField(B, np.array([0.0, 0.0, 1.0]))
    assert np.allclose(apply_power(w, 0.75).coefficients, [0, 0, 3**1.5])
    N = build_basis(LINE, "neumann", 3)
    z = SpectralField(N, np.array([1.0, 0.0, 0.0]))
    assert np.array_equal(apply_power(z, 0.5).coefficients, [0.0, 0.0, 0.0])


def test_norm_Vs_examples():
    B = build_basis(LINE, "dirichlet", 3)
    assert norm_Vs(SpectralField.mode(B, 1), 0.37) == pytest.approx(np.sqrt(2))
    assert norm_Vs(SpectralField.zeros(B), 0.5) == 0.0
    assert norm_Vs(SpectralField.mode(B, 3), 1.0) == pytest.approx(np.sqrt(82), rel=1e-14)


def test_first_sine_mode_on_grid():
    B = build_basis(LINE, "dirichlet", 3)
    x = LINE.nodes()[:, 0]
    assert np.allclose(to_grid(SpectralField.mode(B, 1)), np.sqrt(2 / PI) * np.sin(x), atol=1e-14)


def test_constant_to_neumann_coefficients():
    N = build_basis(LINE, "neumann", 5)
    c = from_grid(np.ones(16), N).coefficients
    assert c[0] == pytest.approx(np.sqrt(PI), rel=1e-14)
    assert np.max(np.abs(c[1:])) < 1e-14


def test_from_grid_shape_checked():
    with pytest.raises(ValueError):
        from_grid(np.ones(15), build_basis(LINE, "neumann", 5))


@pytest.mark.parametrize("domain,bc,N", [(LINE, "dirichlet", 15), (LINE, "neumann", 16),
                                          (SQUARE, "neumann", 30), (SQUARE, "dirichlet", 20)])
def test_round_trip_identity(domain, bc, N):
    B = build_basis(domain, bc, N)
    rng = np.random.default_rng(0)
    for _ in range(10):
        v = SpectralField(B, rng.standard_normal(N))
        assert np.allclose(from_grid(to_grid(v), B).coefficients, v.coefficients, atol=1e-12)


def test_embedding_guard_flags():
    assert all([embedding_guard(0.5, 0.5).A4_ok, embedding_guard(0.5, 0.5).A8_ok, embedding_guard(0.5, 0.5).A10_ok])
    r = embedding_guard(0.25, 0.5)
    assert (r.A4_ok, r.A8_ok, r.A10_ok) == (False, True, False)
    assert embedding_guard(0.8, 1.0).A10_ok


BASES = [build_basis(LINE, "neumann", 12), build_basis(LINE, "dirichlet", 12),
         build_basis(SQUARE, "dirichlet", 10)]
coeffs = st.lists(st.floats(-10, 10, allow_nan=False), min_size=10, max_size=10)
powers = st.floats(0.0, 2.0)


@settings(max_examples=60, deadline=None)
@given(coeffs, coeffs, powers, powers, st.sampled_from(range(len(BASES))))
def test_green_identity(a, b, s1, s2, k):
    B = BASES[k]
    v = SpectralField(B, np.resize(np.array(a), B.mode_count))
    w = SpectralField(B, np.resize(np.array(b), B.mode_count))
    lhs = inner_product(apply_power(v, s1 + s2), w)
    rhs = inner_product(apply_power(v, s1), apply_power(w, s2))
    assert lhs == pytest.approx(rhs, rel=1e-12, abs=1e-12)


@settings(max_examples=60, deadline=None)
@given(coeffs, powers, st.sampled_from(range(len(BASES))))
def test_power_form_nonnegative(a, s, k):
    B = BASES[k]
    v = SpectralField(B, np.resize(np.array(a), B.mode_count))
    assert inner_product(apply_power(v, 2 * s), v) >= 0


@settings(max_examples=60, deadline=None)
@given(coeffs, powers, powers)
def test_power_semigroup(a, s1, s2):
    D = BASES[1]  # no zero eigenvalue
    v = SpectralField(D, np.resize(np.array(a), D.mode_count))
    lhs = apply_power(apply_power(v, s1), s2).coefficients
    rhs = apply_power(v, s1 + s2).coefficients
    assert np.allclose(lhs, rhs, rtol=1e-12, atol=1e-12)
    N = BASES[0]
    w = SpectralField(N, np.resize(np.array(a), N.mode_count))
    nz = N.eigenvalues > 0
    lhs = apply_power(apply_power(w, s1), s2).coefficients
    assert np.allclose(lhs[nz], apply_power(w, s1 + s2).coefficients[nz], rtol=1e-12, atol=1e-12)


@settings(max_examples=60, deadline=None)
@given(coeffs, powers, powers)
def test_norm_Vs_ordering(a, s1, s2):
    D = BASES[1]  # all eigenvalues >= 1
    v = SpectralField(D, np.resize(np.array(a), D.mode_count))
    lo, hi = sorted((s1, s2))
    assert norm_Vs(v, lo) <= norm_Vs(v, hi) * (1 + 1e-14)
    for B in BASES:
        w = SpectralField(B, np.resize(np.array(a), B.mode_count))
        assert norm_Vs(w, s1) >= np.linalg.norm(w.coefficients) * (1 - 1e-14)
