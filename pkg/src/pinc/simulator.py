"""RK4 ground truth, PINC self-loop rollout, and dense in-interval prediction."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import network as nn
from .errors import ContractError, IntegrationError
from .physics import OdeModel, rhs, rhs_jacobian
from .sampling import rng_from_seed

SOURCES = ("rk", "pinc-self-loop", "plant-closed-loop")


@dataclass(frozen=True)
class Trajectory:
    """States ``y[0..M]`` and controls ``u[1..M]`` sampled every ``Ts`` seconds.

    ``controls[k - 1]`` is the input held constant over ``(k - 1, k]``, so the
    initial state has no control attached.
    """

    Ts: float
    states: np.ndarray
    controls: np.ndarray
    source: str

    def __post_init__(self):
        states = np.atleast_2d(np.asarray(self.states, dtype=np.float64))
        controls = np.asarray(self.controls, dtype=np.float64)
        if controls.ndim == 1:
            controls = controls.reshape(len(states) - 1, -1) if controls.size else np.zeros((0, 1))
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "controls", controls)
        if len(controls) != len(states) - 1:
            raise ContractError(f"{len(states)} states need {len(states) - 1} controls, got {len(controls)}")
        if not np.all(np.isfinite(states)):
            raise ContractError("trajectory contains non-finite states")

    def __len__(self):
        return len(self.states)

    @property
    def M(self) -> int:
        return len(self.states) - 1

    @property
    def times(self) -> np.ndarray:
        return self.Ts * np.arange(len(self.states))

    def to_csv(self, path) -> Path:
        """``k,t_seconds,u_1..u_m,y_1..y_n,source``; row 0 has empty control fields."""
        path = Path(path)
        n, m = self.states.shape[1], self.controls.shape[1]
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                ["k", "t_seconds"] + [f"u_{j + 1}" for j in range(m)] + [f"y_{i + 1}" for i in range(n)] + ["source"]
            )
            for k, y in enumerate(self.states):
                u = [""] * m if k == 0 else [repr(float(v)) for v in self.controls[k - 1]]
                writer.writerow([k, repr(float(self.Ts * k))] + u + [repr(float(v)) for v in y] + [self.source])
        return path

    @classmethod
    def from_csv(cls, path) -> Trajectory:
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            rows = [row for row in reader if row]
        m = sum(h.startswith("u_") for h in header)
        n = sum(h.startswith("y_") for h in header)
        if not rows:
            raise ContractError(f"{path}: empty trajectory")
        states = np.array([[float(v) for v in r[2 + m : 2 + m + n]] for r in rows])
        controls = np.array([[float(v) for v in r[2 : 2 + m]] for r in rows[1:]]).reshape(len(rows) - 1, m)
        Ts = float(rows[1][1]) if len(rows) > 1 else math.nan
        return cls(Ts=Ts, states=states, controls=controls, source=rows[0][-1])


def rk4_step(model: OdeModel, y, u, Ts: float, substeps: int):
    """Classical RK4 over ``Ts`` with ``substeps`` equal steps, ``u`` held constant.

    Works on plain arrays and on autodiff ``Var`` states alike.
    """
    h = Ts / substeps
    for _ in range(substeps):
        k1 = rhs(model, y, u)
        k2 = rhs(model, y + (0.5 * h) * k1, u)
        k3 = rhs(model, y + (0.5 * h) * k2, u)
        k4 = rhs(model, y + h * k3, u)
        y = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return y


def rk4_step_sensitivity(model: OdeModel, y, u, Ts: float, substeps: int):
    """One RK4 step with its forward sensitivities.

    Returns ``(y_next, dy_next/dy, dy_next/du)``, propagating tangents through
    every stage with the model's analytic Jacobian.
    """
    y = np.asarray(y, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    n, m = y.size, u.size
    h = Ts / substeps
    S = np.hstack([np.eye(n), np.zeros((n, m))])  # d y / d (y0, u)
    E = np.hstack([np.zeros((m, n)), np.eye(m)])  # d u / d (y0, u)

    rhs(model, y, u)  # dimension check once; stages call the model functions directly
    params, jac_fn = model.parameters, model.jacobian_fn

    def stage(ys, Ss):
        jy, ju = jac_fn(ys, u, params) if jac_fn is not None else rhs_jacobian(model, ys, u)
        return model.rhs_fn(ys, u, params), jy @ Ss + ju @ E

    for _ in range(substeps):
        k1, d1 = stage(y, S)
        k2, d2 = stage(y + (0.5 * h) * k1, S + (0.5 * h) * d1)
        k3, d3 = stage(y + (0.5 * h) * k2, S + (0.5 * h) * d2)
        k4, d4 = stage(y + h * k3, S + h * d3)
        y = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        S = S + (h / 6.0) * (d1 + 2.0 * d2 + 2.0 * d3 + d4)
    return y, S[:, :n], S[:, n:]


def _controls_2d(u_sequence, n_controls) -> np.ndarray:
    u = np.asarray(u_sequence, dtype=np.float64)
    if u.size == 0:
        return np.zeros((0, n_controls))
    return u.reshape(len(u), -1) if u.ndim > 1 else u.reshape(-1, n_controls)


def rk4_integrate(model: OdeModel, y0, u_sequence, Ts: float, substeps: int = 10) -> Trajectory:
    if substeps < 1:
        raise ContractError("substeps must be at least 1")
    u = _controls_2d(u_sequence, model.n_controls)
    states = [np.asarray(y0, dtype=np.float64)]
    for k, uk in enumerate(u, start=1):
        y = rk4_step(model, states[-1], uk, Ts, substeps)
        if not np.all(np.isfinite(y)):
            raise IntegrationError(f"non-finite state at step {k}", k)
        states.append(y)
    return Trajectory(Ts=Ts, states=np.array(states), controls=u, source="rk")


def self_loop_rollout(params: nn.NetworkParams, y0, u_sequence) -> Trajectory:
    """Chain the one-step interface, feeding each prediction back as the next initial state."""
    u = _controls_2d(u_sequence, params.n_controls)
    states = [np.asarray(y0, dtype=np.float64)]
    for k, uk in enumerate(u, start=1):
        y = nn.forward_graph(params, params.arrays, np.float64(params.T), states[-1], uk)
        if not np.all(np.isfinite(y)):
            raise IntegrationError(f"non-finite prediction at step {k}", k)
        states.append(y)
    return Trajectory(Ts=params.T, states=np.array(states), controls=u, source="pinc-self-loop")


def dense_prediction(params: nn.NetworkParams, y0, u, t_grid) -> np.ndarray:
    """Network states at each time of ``t_grid`` inside one interval, ``y0``/``u`` fixed."""
    t = np.asarray(t_grid, dtype=np.float64)
    if t.ndim != 1 or t.size == 0:
        raise ContractError("t_grid must be a non-empty 1-D array")
    if np.any(np.diff(t) < 0):
        raise ContractError("t_grid must be sorted")
    if t[0] < 0.0 or t[-1] > params.T:
        raise ContractError(f"t_grid must lie in [0, {params.T}]")
    y0 = np.broadcast_to(np.asarray(y0, dtype=np.float64), (t.size, params.n_states))
    u = np.broadcast_to(np.asarray(u, dtype=np.float64), (t.size, params.n_controls))
    return nn.forward_graph(params, params.arrays, t, y0, u)


def rk4_dense(model: OdeModel, y0, u, t_grid, substeps_per_unit: int = 200) -> np.ndarray:
    """RK4 states at each time of a sorted grid (reference for :func:`dense_prediction`)."""
    t = np.asarray(t_grid, dtype=np.float64)
    out, y, t_prev = [], np.asarray(y0, dtype=np.float64), 0.0
    for ti in t:
        dt = ti - t_prev
        if dt > 0:
            y = rk4_step(model, y, np.asarray(u, dtype=np.float64), dt, max(1, math.ceil(dt * substeps_per_unit)))
        out.append(y)
        t_prev = ti
    return np.array(out)


def random_control_sequence(
    model: OdeModel, M: int, seed: int, hold=(1, 8), control_ranges=None
) -> np.ndarray:
    """Piecewise-constant random controls: a uniform level held for a random number of steps."""
    rng = rng_from_seed(seed)
    ranges = np.asarray(control_ranges or model.control_ranges, dtype=np.float64)
    out = np.empty((M, model.n_controls))
    k = 0
    while k < M:
        n = int(rng.integers(hold[0], hold[1] + 1))
        out[k : k + n] = rng.uniform(ranges[:, 0], ranges[:, 1])
        k += n
    return out


def random_initial_state(model: OdeModel, seed: int, fraction: float = 0.5) -> np.ndarray:
    """Uniform draw from the central ``fraction`` of each state range."""
    rng = rng_from_seed(seed)
    ranges = np.asarray(model.state_ranges)
    mid, half = ranges.mean(axis=1), 0.5 * fraction * (ranges[:, 1] - ranges[:, 0])
    return rng.uniform(mid - half, mid + half)


@dataclass(frozen=True)
class ValidationScenario:
    """Random-input scenario with its RK ground truth, for self-loop evaluation."""

    y0: np.ndarray
    controls: np.ndarray
    reference: Trajectory

    @classmethod
    def generate(cls, model, M, Ts, seed, substeps=10, hold=(1, 8), control_ranges=None, y0=None):
        u = random_control_sequence(model, M, seed, hold, control_ranges)
        y0 = random_initial_state(model, seed + 1) if y0 is None else np.asarray(y0, dtype=np.float64)
        return cls(y0=y0, controls=u, reference=rk4_integrate(model, y0, u, Ts, substeps))

    def rollout(self, params) -> Trajectory:
        return self_loop_rollout(params, self.y0, self.controls)
