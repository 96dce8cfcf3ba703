"""Double-well potentials, their convex/concave split, and the latent heat.

Every potential is written ``F = F1 + F2`` with ``F1`` convex, ``F1(0) = 0`` and
``F2'`` Lipschitz. The smoothing mode decides what replaces ``F1``:

* ``exact``          -- ``F1`` itself (rejected for the obstacle when derivatives are needed),
* ``moreau_yosida``  -- the Moreau-Yosida envelope ``F1_lam`` (defined on all of R),
* ``deep_quench``    -- ``alpha * h`` with the logarithmic ``h`` (obstacle only).

All evaluators are vectorised over ``r``.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

REGULAR = "regular"
LOGARITHMIC = "logarithmic"
DOUBLE_OBSTACLE = "double_obstacle"
EXACT = "exact"
MOREAU_YOSIDA = "moreau_yosida"
DEEP_QUENCH = "deep_quench"

LN2 = float(np.log(2.0))


class DomainViolation(ValueError):
    """Argument outside the effective domain of the requested quantity."""


class ResolventError(RuntimeError):
    """The scalar resolvent iteration failed to converge."""


@dataclass(frozen=True)
class PotentialSpec:
    kind: str = REGULAR
    c1: float = 2.0
    c2: float = 1.0
    smoothing: str = EXACT
    lam: float | None = None
    alpha: float | None = None

    def __post_init__(self):
        if self.kind not in (REGULAR, LOGARITHMIC, DOUBLE_OBSTACLE):
            raise ValueError(f"unknown potential kind {self.kind!r}")
        if self.smoothing not in (EXACT, MOREAU_YOSIDA, DEEP_QUENCH):
            raise ValueError(f"unknown smoothing {self.smoothing!r}")
        if self.kind == LOGARITHMIC and not self.c1 > 1:
            raise ValueError(f"logarithmic potential needs c1 > 1, got {self.c1}")
        if self.kind == DOUBLE_OBSTACLE and not self.c2 > 0:
            raise ValueError(f"double obstacle potential needs c2 > 0, got {self.c2}")
        if self.smoothing == MOREAU_YOSIDA and not (self.lam is not None and self.lam > 0):
            raise ValueError("Moreau-Yosida smoothing needs lam > 0")
        if self.smoothing == DEEP_QUENCH:
            if self.kind != DOUBLE_OBSTACLE:
                raise ValueError("deep-quench smoothing applies to the double obstacle only")
            if not (self.alpha is not None and 0 < self.alpha <= 1):
                raise ValueError("deep-quench smoothing needs alpha in (0, 1]")

    @classmethod
    def regular(cls) -> PotentialSpec:
        return cls(REGULAR)

    @classmethod
    def logarithmic(cls, c1: float = 2.0) -> PotentialSpec:
        return cls(LOGARITHMIC, c1=c1)

    @classmethod
    def double_obstacle(cls, c2: float = 1.0) -> PotentialSpec:
        return cls(DOUBLE_OBSTACLE, c2=c2)

    def with_yosida(self, lam: float) -> PotentialSpec:
        return replace(self, smoothing=MOREAU_YOSIDA, lam=float(lam), alpha=None)

    def with_deep_quench(self, alpha: float) -> PotentialSpec:
        return replace(self, smoothing=DEEP_QUENCH, alpha=float(alpha), lam=None)

    @property
    def singular(self) -> bool:
        """True when the state must stay strictly inside (-1, 1)."""
        if self.smoothing == MOREAU_YOSIDA:
            return False
        return self.kind != REGULAR

    @property
    def domain(self) -> tuple[float, float]:
        return (-np.inf, np.inf) if self.kind == REGULAR else (-1.0, 1.0)

    @property
    def lipschitz_F2(self) -> float:
        return {REGULAR: 1.0, LOGARITHMIC: 2 * self.c1, DOUBLE_OBSTACLE: 2 * self.c2}[self.kind]

    def check_differentiable(self) -> None:
        if self.kind == DOUBLE_OBSTACLE and self.smoothing == EXACT:
            raise DomainViolation(
                "double_obstacle with smoothing=exact has no pointwise derivative; "
                "use smoothing=deep_quench or smoothing=moreau_yosida"
            )

    def describe(self) -> str:
        extra = {LOGARITHMIC: f"c1={self.c1}", DOUBLE_OBSTACLE: f"c2={self.c2}"}.get(self.kind, "")
        smooth = {MOREAU_YOSIDA: f"lam={self.lam}", DEEP_QUENCH: f"alpha={self.alpha}"}.get(self.smoothing, "")
        return " ".join(s for s in (self.kind, extra, self.smoothing, smooth) if s)


# -- the logarithmic function h and its derivatives ---------------------------

def _open_interval(r, what):
    r = np.asarray(r, dtype=float)
    if np.any(np.abs(r) >= 1):
        raise DomainViolation(f"{what} requires |r| < 1")
    return r


def _h_open(r):
    with np.errstate(divide="ignore", invalid="ignore"):
        return (1 + r) * np.log1p(r) + (1 - r) * np.log1p(-r)


def deep_quench_h(r):
    """``(1+r)ln(1+r) + (1-r)ln(1-r)``; ``2 ln 2`` at ``r = +-1`` and ``+inf`` outside."""
    r = np.asarray(r, dtype=float)
    out = np.full(r.shape, np.inf)
    inside = np.abs(r) < 1
    out[inside] = _h_open(r[inside])
    out[np.abs(r) == 1] = 2 * LN2
    return out if out.ndim else float(out)


def deep_quench_h_prime(r):
    r = _open_interval(r, "h'")
    out = np.log1p(r) - np.log1p(-r)
    return out if out.ndim else float(out)


def deep_quench_h_second(r):
    r = _open_interval(r, "h''")
    out = 2.0 / (1.0 - r * r)
    return out if out.ndim else float(out)


def _cube(r):
    # explicit product: numpy's vectorised power is not exactly odd
    return r * r * r


def _h_third(r):
    return 4.0 * r / (1.0 - r * r) ** 2


def _log_cosh(y):
    a = np.abs(y)
    return a + np.log1p(np.exp(-2 * a)) - LN2


# -- Moreau-Yosida resolvents ---------------------------------------------------

def _bracketed_newton(g, dg, lo, hi, x0, tol=1e-12, max_iter=200):
    """Solve the increasing scalar equations ``g(x) = 0`` elementwise on ``[lo, hi]``."""
    x = np.clip(x0, lo, hi)
    lo, hi = lo.copy(), hi.copy()
    for _ in range(max_iter):
        gx = g(x)
        if np.all(np.abs(gx) <= tol * (1 + np.abs(x))):
            return x
        pos = gx > 0
        hi = np.where(pos, x, hi)
        lo = np.where(pos, lo, x)
        with np.errstate(divide="ignore", invalid="ignore"):
            step = x - gx / dg(x)
        ok = np.isfinite(step) & (step > lo) & (step < hi)
        x = np.where(ok, step, 0.5 * (lo + hi))
        if np.all(hi - lo <= tol * (1 + np.abs(x))):
            return x
    gx = g(x)
    if np.all(np.abs(gx) <= 1e3 * tol * (1 + np.abs(x))):
        return x
    raise ResolventError("resolvent iteration did not converge")


def _yosida_log(r, lam):
    """Yosida derivative of ``h`` via ``s = F1_lam'(r)``: ``tanh(s/2) + lam s = r``."""
    r = np.asarray(r, dtype=float)
    a = np.abs(r)
    lo = np.maximum(0.0, (a - 1.0) / lam)
    hi = a / lam
    s = _bracketed_newton(
        lambda s: np.tanh(0.5 * s) + lam * s - a,
        lambda s: 0.5 / np.cosh(0.5 * np.minimum(s, 700.0)) ** 2 + lam,
        lo, hi, np.minimum(hi, 2 * np.arctanh(np.minimum(a, 0.5))),
    )
    return np.sign(r) * s


def _yosida_cubic(r, lam):
    """Resolvent of ``r**4/4``: ``y + lam y**3 = r``."""
    r = np.asarray(r, dtype=float)
    a = np.abs(r)
    y = _bracketed_newton(
        lambda y: y + lam * y**3 - a,
        lambda y: 1 + 3 * lam * y * y,
        np.zeros_like(a), a.copy(), a / (1 + lam * a * a), tol=1e-14,
    )
    return np.sign(r) * y


def yosida_prime(spec: PotentialSpec, r, lam: float):
    """``(r - J_lam(r)) / lam`` with ``J_lam`` the resolvent of ``dF1``."""
    if not lam > 0:
        raise ValueError("lam must be positive")
    r = np.asarray(r, dtype=float)
    if spec.kind == DOUBLE_OBSTACLE:
        out = (r - np.clip(r, -1.0, 1.0)) / lam
    elif spec.kind == LOGARITHMIC:
        out = _yosida_log(r, lam)
    else:
        out = _cube(_yosida_cubic(r, lam))  # F1'(J r), free of the (r - J r) cancellation
    return out if out.ndim else float(out)


def _yosida_parts(spec, r, lam):
    """Value, first, second and third derivative of the Moreau-Yosida envelope."""
    if spec.kind == DOUBLE_OBSTACLE:
        d = r - np.clip(r, -1.0, 1.0)
        outside = (np.abs(r) > 1).astype(float)
        return d * d / (2 * lam), d / lam, outside / lam, np.zeros_like(r)
    if spec.kind == LOGARITHMIC:
        s = _yosida_log(r, lam)
        y = 0.5 * s
        t = np.tanh(y)
        val = 2 * y * t - 2 * _log_cosh(y) + 0.5 * lam * s * s
        # ds/dr = 1 / (sech^2(s/2)/2 + lam); overflow-free for large |s|.
        sech2 = 1.0 / np.cosh(np.minimum(np.abs(y), 350.0)) ** 2
        c = 0.5 * sech2 + lam
        return val, s, 1.0 / c, 0.5 * t * sech2 / c**3
    y = _yosida_cubic(r, lam)
    val = y**4 / 4 + (r - y) ** 2 / (2 * lam)
    f1pp = 3 * y * y
    return val, _cube(y), f1pp / (1 + lam * f1pp), 6 * y / (1 + lam * f1pp) ** 3


# -- F1, F2 and derivatives ----------------------------------------------------

def _F2(spec, r, order):
    if spec.kind == REGULAR:
        return ((1 - 2 * r * r) / 4, -r, -np.ones_like(r), np.zeros_like(r))[order]
    c = spec.c1 if spec.kind == LOGARITHMIC else spec.c2
    if spec.kind == LOGARITHMIC:
        return (-c * r * r, -2 * c * r, -2 * c * np.ones_like(r), np.zeros_like(r))[order]
    return (c * (1 - r * r), -2 * c * r, -2 * c * np.ones_like(r), np.zeros_like(r))[order]


def _F1_parts(spec: PotentialSpec, r, orders=(0, 1, 2, 3)):
    """Convex part (or its regularisation) and derivatives up to order 3."""
    r = np.asarray(r, dtype=float)
    if spec.smoothing == MOREAU_YOSIDA:
        return _yosida_parts(spec, r, spec.lam)
    if spec.kind == REGULAR:
        return r**4 / 4, _cube(r), 3 * r * r, 6 * r
    if spec.kind == DOUBLE_OBSTACLE and spec.smoothing == EXACT:
        if set(orders) - {0}:
            spec.check_differentiable()
        val = np.where(np.abs(r) <= 1, 0.0, np.inf)
        return val, None, None, None
    scale = spec.alpha if spec.smoothing == DEEP_QUENCH else 1.0
    if np.any(np.abs(r) >= 1):
        if set(orders) - {0}:
            raise DomainViolation(f"{spec.describe()}: derivatives need |r| < 1")
        return scale * np.asarray(deep_quench_h(r)), None, None, None
    return (scale * _h_open(r), scale * (np.log1p(r) - np.log1p(-r)),
            scale * 2.0 / (1 - r * r), scale * _h_third(r))


def _ret(x):
    x = np.asarray(x)
    return x if x.ndim else float(x)


def eval_F1(spec: PotentialSpec, r):
    return _ret(_F1_parts(spec, r, (0,))[0])


def eval_F2(spec: PotentialSpec, r):
    return _ret(_F2(spec, np.asarray(r, dtype=float), 0))


def eval_F(spec: PotentialSpec, r):
    """Full potential; ``+inf`` outside the domain for singular kinds."""
    r = np.asarray(r, dtype=float)
    if spec.kind == LOGARITHMIC and spec.smoothing == EXACT:
        out = np.asarray(deep_quench_h(r), dtype=float) - spec.c1 * r * r
        return _ret(np.where(np.abs(r) > 1, np.inf, out))
    return _ret(_F1_parts(spec, r, (0,))[0] + _F2(spec, r, 0))


def eval_F1_prime(spec: PotentialSpec, r):
    return _ret(_F1_parts(spec, r, (1,))[1])


def eval_F2_prime(spec: PotentialSpec, r):
    return _ret(_F2(spec, np.asarray(r, dtype=float), 1))


def eval_F_prime(spec: PotentialSpec, r):
    r = np.asarray(r, dtype=float)
    return _ret(_F1_parts(spec, r, (1,))[1] + _F2(spec, r, 1))


def eval_F1_second(spec: PotentialSpec, r):
    return _ret(_F1_parts(spec, r, (2,))[2])


def eval_F_second(spec: PotentialSpec, r):
    r = np.asarray(r, dtype=float)
    return _ret(_F1_parts(spec, r, (2,))[2] + _F2(spec, r, 2))


def eval_F2_second(spec: PotentialSpec, r):
    return _ret(_F2(spec, np.asarray(r, dtype=float), 2))


def eval_F_third(spec: PotentialSpec, r):
    r = np.asarray(r, dtype=float)
    return _ret(_F1_parts(spec, r, (3,))[3] + _F2(spec, r, 3))


def convex_reaction(spec: PotentialSpec, r):
    """``(F1'(r), F1''(r))`` as used by the implicit reaction solve."""
    spec.check_differentiable()
    parts = _F1_parts(spec, r, (1, 2))
    return parts[1], parts[2]


def coercivity_constants(spec: PotentialSpec) -> tuple[float, float]:
    """Constants ``(a, b)`` with ``F(s) >= a s**2 - b`` on the effective domain."""
    if spec.kind == REGULAR:
        # r^4 >= 4r^2 - 4  =>  F >= r^2/2 - 3/4
        return 0.5, 0.75
    if spec.kind == LOGARITHMIC:
        # |r| <= 1 and F >= -c1
        return 1.0, spec.c1 + 1.0
    return 1.0, 1.0


# -- latent heat ---------------------------------------------------------------

@dataclass(frozen=True)
class LatentHeatSpec:
    """``Constant(value)`` or ``offset + amplitude * tanh(slope * r)``."""

    form: str = "constant"
    value: float = 0.0
    offset: float = 0.0
    amplitude: float = 1.0
    slope: float = 1.0

    def __post_init__(self):
        if self.form not in ("constant", "tanh"):
            raise ValueError(f"unknown latent heat form {self.form!r}")

    @classmethod
    def constant(cls, value: float) -> LatentHeatSpec:
        return cls("constant", value=float(value))

    @classmethod
    def tanh(cls, offset: float = 0.0, amplitude: float = 1.0, slope: float = 1.0) -> LatentHeatSpec:
        return cls("tanh", offset=float(offset), amplitude=float(amplitude), slope=float(slope))

    @property
    def is_even(self) -> bool:
        return self.form == "constant" or self.amplitude == 0


def eval_ell(spec: LatentHeatSpec, r, derivative_order: int = 0):
    if derivative_order not in (0, 1, 2):
        raise ValueError("derivative_order must be 0, 1 or 2")
    r = np.asarray(r, dtype=float)
    if spec.form == "constant":
        out = np.full(r.shape, spec.value if derivative_order == 0 else 0.0)
        return _ret(out)
    t = np.tanh(spec.slope * r)
    a, k = spec.amplitude, spec.slope
    if derivative_order == 0:
        out = spec.offset + a * t
    elif derivative_order == 1:
        out = a * k * (1 - t * t)
    else:
        out = -2 * a * k * k * t * (1 - t * t)
    return _ret(out)
