"""Eigenbases of the Laplacian on boxes and the spectral fractional calculus.

Both boundary conditions share one collocation grid: the cell midpoints of a
uniform partition of each axis. On that grid the discrete cosine (DCT-II) and
sine (DST-II) families are exactly orthogonal, so the transforms between
coefficients and grid values are plain dense matrix products.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

DIRICHLET = "dirichlet"
NEUMANN = "neumann"
_BCS = (DIRICHLET, NEUMANN)


@dataclass(frozen=True)
class DomainSpec:
    """Box ``(0, L_1) x ... x (0, L_d)`` with ``grid_points`` midpoints per axis."""

    dimension: int
    lengths: tuple[float, ...]
    grid_points: int

    def __post_init__(self):
        if self.dimension not in (1, 2):
            raise ValueError(f"dimension must be 1 or 2, got {self.dimension}")
        lengths = tuple(float(v) for v in np.atleast_1d(self.lengths))
        if len(lengths) == 1 and self.dimension == 2:
            lengths = lengths * 2
        if len(lengths) != self.dimension:
            raise ValueError("need one length per axis")
        if any(not np.isfinite(v) or v <= 0 for v in lengths):
            raise ValueError(f"lengths must be positive, got {lengths}")
        if int(self.grid_points) < 1:
            raise ValueError("grid_points must be a positive integer")
        object.__setattr__(self, "lengths", lengths)
        object.__setattr__(self, "grid_points", int(self.grid_points))

    @property
    def volume(self) -> float:
        return float(np.prod(self.lengths))

    @property
    def grid_shape(self) -> tuple[int, ...]:
        return (self.grid_points,) * self.dimension

    @property
    def cell_volume(self) -> float:
        return self.volume / self.grid_points**self.dimension

    def axis_nodes(self, axis: int) -> np.ndarray:
        G = self.grid_points
        return (np.arange(G) + 0.5) * self.lengths[axis] / G

    def nodes(self) -> np.ndarray:
        """Collocation nodes, shape ``(G**d, d)``, C-order over the axes."""
        axes = [self.axis_nodes(k) for k in range(self.dimension)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def refined(self, factor: int = 2) -> DomainSpec:
        return DomainSpec(self.dimension, self.lengths, self.grid_points * factor)


def _axis_eigenpair(bc: str, index: int, length: float, x: np.ndarray):
    """Eigenvalue and samples of one 1-D eigenfunction.

    ``index`` is 1-based for Dirichlet (sin) and 0-based for Neumann (cos).
    """
    k = index * np.pi / length
    if bc == DIRICHLET:
        return k * k, np.sqrt(2.0 / length) * np.sin(k * x)
    if index == 0:
        return 0.0, np.full_like(x, 1.0 / np.sqrt(length))
    return k * k, np.sqrt(2.0 / length) * np.cos(k * x)


def _axis_index_limit(bc: str, G: int) -> int:
    # DST-II on G midpoints is orthogonal for sin indices 1..G-1 (index G has
    # a different norm); DCT-II for cos indices 0..G-1.
    return G - 1


@dataclass(frozen=True, eq=False)
class EigenBasis:
    """First ``N`` eigenpairs of ``-Laplace`` with Dirichlet or Neumann conditions.

    Attributes
    ----------
    eigenvalues : (N,) ascending eigenvalues.
    modes : (N, d) per-axis mode indices.
    synthesis : (G**d, N) table of ``e_j`` at the collocation nodes.
    weights : (G**d,) quadrature weights (uniform midpoint rule).
    """

    domain: DomainSpec
    bc: str
    mode_count: int
    eigenvalues: np.ndarray = field(repr=False)
    modes: np.ndarray = field(repr=False)
    synthesis: np.ndarray = field(repr=False)
    weights: np.ndarray = field(repr=False)

    @property
    def grid_size(self) -> int:
        return self.synthesis.shape[0]

    @property
    def analysis(self) -> np.ndarray:
        """(N, G) matrix mapping grid values to coefficients."""
        return self.synthesis.T * self.weights

    def eigenfunction_values(self, points: np.ndarray) -> np.ndarray:
        """Evaluate every basis function at arbitrary points, shape ``(P, N)``."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        if points.shape[1] != self.domain.dimension:
            points = points.T
        out = np.ones((points.shape[0], self.mode_count))
        for axis in range(self.domain.dimension):
            for j, idx in enumerate(self.modes[:, axis]):
                _, vals = _axis_eigenpair(self.bc, int(idx), self.domain.lengths[axis], points[:, axis])
                out[:, j] *= vals
        return out

    def compatible(self, other: EigenBasis) -> bool:
        return self.domain == other.domain


def build_basis(domain: DomainSpec, bc: str, N: int) -> EigenBasis:
    """Eigenbasis of the N smallest modes, ties broken by lexicographic mode index."""
    bc = str(bc).lower()
    if bc not in _BCS:
        raise ValueError(f"bc must be one of {_BCS}, got {bc!r}")
    N = int(N)
    if N < 1:
        raise ValueError("mode count N must be >= 1")
    G = domain.grid_points
    first = 1 if bc == DIRICHLET else 0
    limit = _axis_index_limit(bc, G)

    # The N smallest tensor modes never use an axis index beyond first + N - 1.
    cand_axis = np.arange(first, first + N)
    grids = np.meshgrid(*([cand_axis] * domain.dimension), indexing="ij")
    cand = np.stack([g.ravel() for g in grids], axis=-1)
    lam = np.zeros(len(cand))
    for axis in range(domain.dimension):
        lam += (cand[:, axis] * np.pi / domain.lengths[axis]) ** 2
    scale = max(float(lam.max()), 1.0)
    rounded = np.round(lam / scale, 12)
    keys = [cand[:, a] for a in reversed(range(domain.dimension))] + [rounded]
    order = np.lexsort(keys)[:N]
    modes = cand[order]
    if modes.max() > limit:
        raise ValueError(
            f"N={N} {bc} modes need axis index {int(modes.max())} but a grid of "
            f"{G} points resolves indices up to {limit}; increase grid_points"
        )

    nodes = domain.nodes()
    synthesis = np.ones((nodes.shape[0], N))
    eigenvalues = np.zeros(N)
    for axis in range(domain.dimension):
        for j, idx in enumerate(modes[:, axis]):
            ev, vals = _axis_eigenpair(bc, int(idx), domain.lengths[axis], nodes[:, axis])
            synthesis[:, j] *= vals
            eigenvalues[j] += ev
    weights = np.full(nodes.shape[0], domain.cell_volume)
    for arr in (eigenvalues, modes, synthesis, weights):
        arr.setflags(write=False)
    return EigenBasis(domain, bc, N, eigenvalues, modes, synthesis, weights)


@dataclass(frozen=True, eq=False)
class SpectralField:
    """Coefficients of a function in an :class:`EigenBasis`."""

    basis: EigenBasis
    coefficients: np.ndarray

    def __post_init__(self):
        c = np.array(self.coefficients, dtype=float).reshape(-1)
        if c.shape[0] != self.basis.mode_count:
            raise ValueError(
                f"expected {self.basis.mode_count} coefficients, got {c.shape[0]}"
            )
        if not np.all(np.isfinite(c)):
            raise ValueError("coefficients must be finite")
        c.setflags(write=False)
        object.__setattr__(self, "coefficients", c)

    def __add__(self, other):
        return SpectralField(self.basis, self.coefficients + other.coefficients)

    def __sub__(self, other):
        return SpectralField(self.basis, self.coefficients - other.coefficients)

    def __mul__(self, scalar):
        return SpectralField(self.basis, self.coefficients * float(scalar))

    __rmul__ = __mul__

    def __neg__(self):
        return SpectralField(self.basis, -self.coefficients)

    @classmethod
    def zeros(cls, basis: EigenBasis) -> SpectralField:
        return cls(basis, np.zeros(basis.mode_count))

    @classmethod
    def mode(cls, basis: EigenBasis, j: int, amplitude: float = 1.0) -> SpectralField:
        """Single eigenfunction ``amplitude * e_j`` (``j`` is 1-based)."""
        c = np.zeros(basis.mode_count)
        c[j - 1] = amplitude
        return cls(basis, c)


@dataclass(frozen=True)
class FractionalParams:
    rho: float
    sigma: float

    def __post_init__(self):
        if not (self.rho > 0 and self.sigma > 0):
            raise ValueError(f"rho and sigma must be positive, got {self.rho}, {self.sigma}")


def eigenvalue_powers(eigenvalues: np.ndarray, s: float) -> np.ndarray:
    """``lambda_j**s`` with the convention ``0**s = 0`` for s > 0."""
    if s < 0:
        raise ValueError(f"power must be nonnegative, got {s}")
    lam = np.asarray(eigenvalues, dtype=float)
    if s == 0:
        return np.ones_like(lam)
    return np.where(lam > 0, np.abs(lam) ** s, 0.0)


def apply_power(v: SpectralField, s: float) -> SpectralField:
    return SpectralField(v.basis, eigenvalue_powers(v.basis.eigenvalues, s) * v.coefficients)


def inner_product(v: SpectralField, w: SpectralField) -> float:
    if v.basis is not w.basis and v.basis.mode_count != w.basis.mode_count:
        raise ValueError("fields live in different bases")
    return float(v.coefficients @ w.coefficients)


def norm_Vs(v: SpectralField, s: float) -> float:
    """Graph norm ``sqrt(||v||^2 + ||A^s v||^2)``; for s = 0 this is ``sqrt(2) ||v||``."""
    c = v.coefficients
    return float(np.sqrt(np.sum(c * c * (1.0 + eigenvalue_powers(v.basis.eigenvalues, 2 * s)))))


def to_grid(v: SpectralField) -> np.ndarray:
    return v.basis.synthesis @ v.coefficients


def from_grid(values, basis: EigenBasis) -> SpectralField:
    values = np.asarray(values, dtype=float)
    if values.ndim > 1:
        if values.shape != basis.domain.grid_shape:
            raise ValueError(f"grid shape {values.shape} != {basis.domain.grid_shape}")
        values = values.reshape(-1)
    if values.shape[0] != basis.grid_size:
        raise ValueError(f"expected {basis.grid_size} grid values, got {values.shape[0]}")
    return SpectralField(basis, basis.analysis @ values)


@dataclass(frozen=True)
class ValidityReport:
    """Embedding thresholds stated for three-dimensional domains; advisory only."""

    rho: float
    sigma: float
    operator_kind: str
    A4_ok: bool
    A8_ok: bool
    A10_ok: bool

    @property
    def warnings(self) -> list[str]:
        out = []
        if not self.A4_ok:
            out.append("A4: need rho >= 3/8 and sigma >= 3/8")
        if not self.A8_ok:
            out.append("A8: need rho >= 1/4 and sigma >= 1/2")
        if not self.A10_ok:
            out.append("A10: need rho > 3/4 or rho = 1/2")
        return out

    def as_dict(self) -> dict:
        return {
            "rho": self.rho,
            "sigma": self.sigma,
            "operator_kind": self.operator_kind,
            "A4_ok": self.A4_ok,
            "A8_ok": self.A8_ok,
            "A10_ok": self.A10_ok,
        }


def embedding_guard(rho: float, sigma: float, operator_kind: str = "laplacian") -> ValidityReport:
    FractionalParams(rho, sigma)
    return ValidityReport(
        rho=float(rho),
        sigma=float(sigma),
        operator_kind=operator_kind,
        A4_ok=rho >= 3 / 8 and sigma >= 3 / 8,
        A8_ok=rho >= 1 / 4 and sigma >= 1 / 2,
        A10_ok=rho > 3 / 4 or rho == 0.5,
    )


def field_rows(v: SpectralField) -> list[tuple[int, float, float]]:
    """Rows ``(mode_index, eigenvalue, coefficient)`` with 1-based mode indices."""
    return [
        (j + 1, float(lam), float(c))
        for j, (lam, c) in enumerate(zip(v.basis.eigenvalues, v.coefficients))
    ]


def smooth_random_field(basis: EigenBasis, rng: np.random.Generator, amplitude: float = 1.0,
                        decay: float = 1.0) -> SpectralField:
    """Random field with coefficients damped like ``(1 + lambda_j)**(-decay)``."""
    c = rng.standard_normal(basis.mode_count) * (1.0 + basis.eigenvalues) ** (-decay)
    return SpectralField(basis, amplitude * c)
