"""INI run configuration: grammar, defaults and conversion to library objects.

Every section and key is optional and falls back to the defaults in
``SCHEMA``; unknown sections or keys are rejected. Numbers accept a ``pi``
suffix (``pi``, ``2pi``, ``0.5*pi``). Field profiles are sums of terms joined
by ``+``:

* ``zero``
* ``constant:v``
* ``mode:j:amp`` -- ``amp`` times the ``j``-th eigenfunction (1-based)
* ``cos:k:amp`` / ``sin:k:amp`` -- ``amp cos(k pi x / L)`` along the first axis
* ``coefficients:c1,c2,...`` -- leading expansion coefficients
"""
from __future__ import annotations

import configparser
import hashlib
from dataclasses import dataclass

import numpy as np

from .control import (
    BoxConstraints,
    ControlProblem,
    ControlSpace,
    OptimizerOptions,
    validate_schedule,
)
from .cost import CostSpec
from .forward import InitialData, SolverParams, StateProblem, TimeGrid
from .potentials import DomainViolation, LatentHeatSpec, PotentialSpec
from .spectral import (
    DomainSpec,
    EigenBasis,
    FractionalParams,
    SpectralField,
    ValidityReport,
    build_basis,
    embedding_guard,
    from_grid,
)
from .verify import ProbeThresholds


class ConfigError(ValueError):
    """Invalid or inconsistent configuration."""


SCHEMA: dict[str, dict[str, str]] = {
    "domain": {"dimension": "1", "lengths": "pi", "grid_points": "24"},
    "operators": {"bc_a": "neumann", "bc_b": "neumann", "rho": "0.8", "sigma": "0.6",
                  "modes": "8", "modes_a": "", "modes_b": ""},
    "potential": {"kind": "regular", "c1": "2.0", "c2": "1.0", "smoothing": "exact",
                  "lambda": "", "alpha": ""},
    "latent_heat": {"form": "constant", "value": "0.0", "offset": "0.0", "amplitude": "1.0", "slope": "1.0"},
    "time": {"final_time": "1.0", "steps": "100"},
    "initial": {"theta": "zero", "phi": "zero", "lower": "", "upper": ""},
    "control_box": {"u_min": "-1.0", "u_max": "1.0", "r": "2.0", "initial": "0.0",
                    "time_blocks": "", "spatially_constant": "false"},
    "cost": {"beta1": "0.0", "beta2": "0.0", "beta3": "0.0", "beta4": "0.0", "beta5": "1.0",
             "phi_omega": "", "theta_omega": "", "phi_q": "", "theta_q": ""},
    "optimizer": {"max_iters": "200", "armijo_c": "1e-4", "backtrack": "0.5", "initial_step": "1.0",
                  "tol": "1e-6", "gradient": "discrete", "allow_beta5_zero": "false",
                  "alphas": "1, 0.5, 0.25, 0.125", "anchor_weight": "1.0"},
    "probe": {"suite": "fd_gradient", "seed": "0", "directions": "2", "direction_kind": "random", "eps": "1e-4",
              "halvings": "3", "adjoint": "continuous", "pairs": "20", "stability_halvings": "1",
              "frechet_scales": "0.1, 0.0316227766016838, 0.01",
              "sweep_mode": "deep_quench", "sweep_levels": "1, 0.5, 0.25, 0.125",
              "energy_states": "3", "fd_relative_error": "1e-2", "fd_min_slope": "0.9",
              "frechet_slope_min": "1.8", "frechet_slope_max": "2.2",
              "stability_relative_change": "0.2", "energy_tolerance": "1e-10",
              "oracle_resolution": "41", "stationarity": "1e-6", "uniform_bound": "",
              "sweep_growth": "2.0"},
    "solver": {"inner_tol": "1e-12", "max_inner": "60", "damping": "1.0", "guard_margin": "1e-6"},
}


def number(text: str) -> float:
    s = text.strip().replace(" ", "")
    if s.endswith("pi"):
        head = s[:-2].rstrip("*")
        return (float(head) if head else 1.0) * np.pi
    return float(s)


def number_list(text: str) -> list[float]:
    return [number(t) for t in text.split(",") if t.strip()]


def boolean(text: str) -> bool:
    v = text.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def profile_values(spec: str, basis: EigenBasis) -> np.ndarray:
    """Grid values of a profile expression."""
    G = basis.synthesis.shape[0]
    x = basis.domain.nodes()[:, 0]
    L = basis.domain.lengths[0]
    out = np.zeros(G)
    for term in spec.split("+"):
        parts = [p.strip() for p in term.strip().split(":")]
        kind = parts[0].lower()
        if kind in ("", "zero"):
            continue
        if kind == "constant" and len(parts) == 2:
            out += number(parts[1])
        elif kind == "mode" and len(parts) == 3:
            j = int(parts[1])
            if not 1 <= j <= basis.mode_count:
                raise ValueError(f"mode index {j} outside 1..{basis.mode_count}")
            out += number(parts[2]) * basis.synthesis[:, j - 1]
        elif kind in ("cos", "sin") and len(parts) == 3:
            f = np.cos if kind == "cos" else np.sin
            out += number(parts[2]) * f(number(parts[1]) * np.pi * x / L)
        elif kind == "coefficients" and len(parts) == 2:
            c = number_list(parts[1])
            if len(c) > basis.mode_count:
                raise ValueError("more coefficients than modes")
            out += basis.synthesis[:, : len(c)] @ np.asarray(c)
        else:
            raise ValueError(f"cannot parse profile term {term.strip()!r}")
    return out


def profile_field(spec: str, basis: EigenBasis) -> SpectralField:
    return from_grid(profile_values(spec, basis), basis)


@dataclass(frozen=True, eq=False)
class ProbeSettings:
    suite: tuple[str, ...]
    seed: int
    directions: int
    direction_kind: str
    eps: tuple[float, ...]
    halvings: int
    adjoint: str
    pairs: int
    stability_halvings: int
    frechet_scales: tuple[float, ...]
    sweep_mode: str
    sweep_levels: tuple[float, ...]
    energy_states: int
    thresholds: ProbeThresholds


PROBES = ("fd_gradient", "frechet", "stability", "regularization_sweep", "energy", "tiny_oracle")


@dataclass(frozen=True, eq=False)
class RunConfig:
    """Parsed configuration together with the raw bytes it came from."""

    raw: bytes
    values: dict[str, dict[str, str]]
    state: StateProblem
    control_problem: ControlProblem
    initial_control: float
    optimizer: OptimizerOptions
    alphas: tuple[float, ...]
    anchor_weight: float
    probe: ProbeSettings
    guard: ValidityReport

    @property
    def digest(self) -> str:
        return hashlib.sha256(self.raw).hexdigest()

    def refined(self, halvings: int) -> RunConfig:
        if halvings == 0:
            return self
        sp = self.state.replace(time=self.state.time.refined(halvings))
        cp = ControlProblem(sp, self.control_problem.cost, self.control_problem.box, self.control_problem.space)
        return RunConfig(self.raw, self.values, sp, cp, self.initial_control, self.optimizer,
                         self.alphas, self.anchor_weight, self.probe, self.guard)


def _read(raw: bytes) -> dict[str, dict[str, str]]:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    try:
        cp.read_string(raw.decode("utf-8"))
    except (configparser.Error, UnicodeDecodeError) as exc:
        raise ConfigError(f"unreadable config: {exc}".replace("\n", " ")) from None
    values = {s: dict(keys) for s, keys in SCHEMA.items()}
    for section in cp.sections():
        if section not in SCHEMA:
            raise ConfigError(f"unknown section [{section}]")
        for key, val in cp.items(section):
            if key not in SCHEMA[section]:
                raise ConfigError(f"unknown key '{key}' in [{section}]")
            values[section][key] = val.strip()
    return values


def _opt(text: str, conv=number):
    return None if text.strip() == "" else conv(text)


def parse_config(raw: bytes | str) -> RunConfig:
    """Parse and validate; every failure becomes a ``ConfigError``."""
    if isinstance(raw, str):
        raw = raw.encode()
    v = _read(raw)
    try:
        return _build(raw, v)
    except ConfigError:
        raise
    except (ValueError, DomainViolation, TypeError) as exc:
        raise ConfigError(str(exc).replace("\n", " ")) from None


def load_config(path: str) -> RunConfig:
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(raw)


def _build(raw: bytes, v: dict[str, dict[str, str]]) -> RunConfig:
    d, o = v["domain"], v["operators"]
    domain = DomainSpec(int(d["dimension"]), tuple(number_list(d["lengths"])), int(d["grid_points"]))
    modes = int(o["modes"])
    A = build_basis(domain, o["bc_a"].lower(), int(_opt(o["modes_a"], int) or modes))
    B = build_basis(domain, o["bc_b"].lower(), int(_opt(o["modes_b"], int) or modes))
    params = FractionalParams(number(o["rho"]), number(o["sigma"]))
    guard = embedding_guard(params.rho, params.sigma)

    pv = v["potential"]
    kind, smoothing = pv["kind"].lower(), pv["smoothing"].lower()
    if kind == "regular":
        pot = PotentialSpec.regular()
    elif kind == "logarithmic":
        pot = PotentialSpec.logarithmic(number(pv["c1"]))
    elif kind == "double_obstacle":
        pot = PotentialSpec.double_obstacle(number(pv["c2"]))
    else:
        raise ConfigError(f"unknown potential kind {kind!r}")
    if smoothing == "moreau_yosida":
        lam = _opt(pv["lambda"])
        if lam is None:
            raise ConfigError("smoothing=moreau_yosida needs lambda")
        pot = pot.with_yosida(lam)
    elif smoothing == "deep_quench":
        alpha = _opt(pv["alpha"])
        if alpha is None:
            raise ConfigError("smoothing=deep_quench needs alpha")
        pot = pot.with_deep_quench(alpha)
    elif smoothing != "exact":
        raise ConfigError(f"unknown smoothing {smoothing!r}")
    pot.check_differentiable()

    lv = v["latent_heat"]
    form = lv["form"].lower()
    if form == "constant":
        latent = LatentHeatSpec.constant(number(lv["value"]))
    elif form == "tanh":
        latent = LatentHeatSpec.tanh(number(lv["offset"]), number(lv["amplitude"]), number(lv["slope"]))
    else:
        raise ConfigError(f"unknown latent heat form {form!r}")

    tv = v["time"]
    time = TimeGrid(number(tv["final_time"]), int(tv["steps"]))
    iv = v["initial"]
    init = InitialData(profile_field(iv["theta"], A), profile_field(iv["phi"], B),
                       _opt(iv["lower"]), _opt(iv["upper"]))
    sv = v["solver"]
    solver = SolverParams(number(sv["inner_tol"]), int(sv["max_inner"]), number(sv["damping"]),
                          number(sv["guard_margin"]))
    state = StateProblem(A, B, params, pot, latent, init, time, solver)

    cv = v["cost"]
    cost = CostSpec(
        number(cv["beta1"]), number(cv["beta2"]), number(cv["beta3"]), number(cv["beta4"]), number(cv["beta5"]),
        phi_omega=profile_field(cv["phi_omega"], B) if cv["phi_omega"] else None,
        theta_omega=profile_field(cv["theta_omega"], A) if cv["theta_omega"] else None,
        phi_Q=profile_values(cv["phi_q"], B) if cv["phi_q"] else None,
        theta_Q=profile_values(cv["theta_q"], A) if cv["theta_q"] else None,
    )
    bv = v["control_box"]
    box = BoxConstraints(number(bv["u_min"]), number(bv["u_max"]), number(bv["r"]))
    space = ControlSpace(_opt(bv["time_blocks"], int), boolean(bv["spatially_constant"]))
    u0 = number(bv["initial"])
    if not box.u_min <= u0 <= box.u_max:
        raise ConfigError("control_box.initial must lie in [u_min, u_max]")
    if space.time_blocks is not None and not 1 <= space.time_blocks <= time.steps:
        raise ConfigError("control_box.time_blocks must lie in [1, steps]")

    ov = v["optimizer"]
    options = OptimizerOptions(
        max_iters=int(ov["max_iters"]), armijo_c=number(ov["armijo_c"]), backtrack=number(ov["backtrack"]),
        initial_step=number(ov["initial_step"]), tol=number(ov["tol"]),
        allow_beta5_zero=boolean(ov["allow_beta5_zero"]), gradient=ov["gradient"].lower(),
    )
    if cost.beta5 == 0 and not options.allow_beta5_zero:
        raise ConfigError("beta5 = 0 requires optimizer.allow_beta5_zero = true")
    alphas = validated_schedule(number_list(ov["alphas"]))
    anchor = number(ov["anchor_weight"])
    if anchor < 0:
        raise ConfigError("anchor_weight must be nonnegative")

    qv = v["probe"]
    suite = tuple(s.strip() for s in qv["suite"].split(",") if s.strip())
    for s in suite:
        if s not in PROBES:
            raise ConfigError(f"unknown probe {s!r}; choose from {', '.join(PROBES)}")
    ub = _opt(qv["uniform_bound"])
    thresholds = ProbeThresholds(
        fd_relative_error=number(qv["fd_relative_error"]), fd_min_slope=number(qv["fd_min_slope"]),
        frechet_slope=(number(qv["frechet_slope_min"]), number(qv["frechet_slope_max"])),
        stability_relative_change=number(qv["stability_relative_change"]),
        energy_tolerance=number(qv["energy_tolerance"]), oracle_resolution=int(qv["oracle_resolution"]),
        stationarity=number(qv["stationarity"]), uniform_bound=ub, sweep_growth=number(qv["sweep_growth"]),
    )
    adjoint = qv["adjoint"].lower()
    if adjoint not in ("continuous", "discrete"):
        raise ConfigError("probe.adjoint must be continuous or discrete")
    probe = ProbeSettings(
        suite=suite, seed=int(qv["seed"]), directions=int(qv["directions"]),
        direction_kind=qv["direction_kind"].lower(), eps=tuple(number_list(qv["eps"])),
        halvings=int(qv["halvings"]), adjoint=adjoint, pairs=int(qv["pairs"]),
        stability_halvings=int(qv["stability_halvings"]), frechet_scales=tuple(number_list(qv["frechet_scales"])),
        sweep_mode=qv["sweep_mode"].lower(), sweep_levels=tuple(number_list(qv["sweep_levels"])),
        energy_states=int(qv["energy_states"]), thresholds=thresholds,
    )
    if probe.direction_kind not in ("random", "gradient"):
        raise ConfigError("probe.direction_kind must be random or gradient")
    if probe.sweep_mode not in ("deep_quench", "moreau_yosida"):
        raise ConfigError("probe.sweep_mode must be deep_quench or moreau_yosida")
    if probe.seed < 0:
        raise ConfigError("probe.seed must be nonnegative")
    return RunConfig(raw, v, state, ControlProblem(state, cost, box, space), u0, options, alphas, anchor,
                     probe, guard)


def validated_schedule(alphas) -> tuple[float, ...]:
    try:
        return tuple(validate_schedule(alphas))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
