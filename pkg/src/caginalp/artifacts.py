"""CSV and manifest emission with round-trip exact float formatting."""
from __future__ import annotations

import csv
import json
import os
import tempfile

import numpy as np

from .forward import StateTrajectory


def fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return str(v)


def write_csv(path: str, header: list[str], rows) -> str:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([fmt(x) for x in r])
    return path


def _parse(x: str):
    try:
        return float(x)
    except ValueError:
        return x


def read_csv(path: str) -> tuple[list[str], np.ndarray]:
    """Header and the body: a float array, or an object array when some cells are text."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    body = [[_parse(x) for x in r] for r in rows[1:]]
    numeric = all(isinstance(v, float) for r in body for v in r)
    return rows[0], np.array(body, dtype=float if numeric else object)


def _axis_names(nodes: np.ndarray) -> list[str]:
    return ["x", "y"][: nodes.shape[1]]


def write_trajectory(path: str, traj: StateTrajectory) -> str:
    """Long format: one row per (step, node) with grid values of theta and phi."""
    nodes = traj.problem.basis_A.domain.nodes()
    names = _axis_names(nodes)
    times = traj.times
    th, ph = traj.theta_grid, traj.phi_grid
    rows = ([n, times[n], i, *nodes[i], th[n, i], ph[n, i]]
            for n in range(th.shape[0]) for i in range(th.shape[1]))
    return write_csv(path, ["step", "time", "node", *names, "theta", "phi"], rows)


def write_coefficients(path: str, traj: StateTrajectory) -> str:
    NA, NB = traj.theta.shape[1], traj.phi.shape[1]
    header = ["step", "time"] + [f"theta_{j + 1}" for j in range(NA)] + [f"phi_{j + 1}" for j in range(NB)]
    rows = ([n, t, *a, *b] for n, (t, a, b) in enumerate(zip(traj.times, traj.theta, traj.phi)))
    return write_csv(path, header, rows)


def write_diagnostics(path: str, traj: StateTrajectory) -> str:
    d = traj.diagnostics
    keys = list(d)
    rows = ([n, traj.times[n], *(d[k][n] for k in keys)] for n in range(traj.time.steps + 1))
    return write_csv(path, ["step", "time", *keys], rows)


def write_control(path: str, u: np.ndarray, problem) -> str:
    nodes = problem.basis_A.domain.nodes()
    names = _axis_names(nodes)
    t = problem.time.times
    rows = ([n, t[n], t[n + 1], i, *nodes[i], u[n, i]] for n in range(u.shape[0]) for i in range(u.shape[1]))
    return write_csv(path, ["row", "t_start", "t_end", "node", *names, "u"], rows)


def write_history(path: str, history: list[dict]) -> str:
    keys = ["iter", "cost", "stationarity", "step", "forward_solves"]
    return write_csv(path, keys, ([h[k] for k in keys] for h in history))


def write_json_atomic(path: str, payload: dict) -> str:
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".manifest-", suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True, default=_json_default)
            fh.write("\n")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    return str(o)
