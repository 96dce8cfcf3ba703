"""Argument checks for the estimator facade."""
from __future__ import annotations

from collections.abc import Mapping

import numpy as np
from sklearn.utils.validation import check_scalar

from .forward import StateProblem, as_control_array
from .spectral import SpectralField

TARGET_KEYS = ("phi_omega", "theta_omega", "phi_Q", "theta_Q")


def check_state_problem(X) -> StateProblem:
    if not isinstance(X, StateProblem):
        raise TypeError(f"expected a StateProblem, got {type(X).__name__}")
    return X


def check_targets(y, problem: StateProblem) -> dict:
    if y is None:
        return {}
    if not isinstance(y, Mapping):
        raise TypeError("targets must be a mapping with keys " + ", ".join(TARGET_KEYS))
    unknown = set(y) - set(TARGET_KEYS)
    if unknown:
        raise ValueError(f"unknown target keys {sorted(unknown)}")
    out = dict(y)
    for key, basis in (("phi_omega", problem.basis_B), ("theta_omega", problem.basis_A)):
        v = out.get(key)
        if v is not None and not isinstance(v, SpectralField):
            raise TypeError(f"{key} must be a SpectralField")
        if v is not None and v.basis.mode_count != basis.mode_count:
            raise ValueError(f"{key} lives in a basis of the wrong size")
    return out


def check_betas(beta) -> tuple[float, float, float, float, float]:
    b = tuple(float(v) for v in np.ravel(beta))
    if len(b) != 5:
        raise ValueError("beta must hold five weights")
    for i, v in enumerate(b, 1):
        check_scalar(v, f"beta{i}", (int, float), min_val=0.0)
    return b


def check_control(u, problem: StateProblem) -> np.ndarray:
    return np.array(as_control_array(u, problem))
