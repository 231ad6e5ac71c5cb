"""Receding-horizon NMPC with a one-step prediction model.

The horizon problem is condensed onto the control increments: states are
eliminated by rolling the predictor forward from the measured state, so the
decision vector is ``du`` of shape ``(Nu, n_controls)``. Increments and the
induced controls are kept inside their boxes by a sequential clipping map;
state bounds are soft, enforced with a quadratic penalty whose weight grows
when the solution still violates them.
"""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import autodiff as ad
from . import network as nn
from .errors import ConfigError, ContractError, IntegrationError
from .optim import projected_lbfgs
from .physics import OdeModel
from .simulator import Trajectory, rk4_step, rk4_step_sensitivity

log = logging.getLogger(__name__)

Predictor = Callable  # (y, u) -> y_next, on arrays or Vars


@dataclass(frozen=True)
class StateConstraint:
    index: int
    lower: float
    upper: float
    rho: float = 100.0

    def __post_init__(self):
        if not self.lower <= self.upper:
            raise ConfigError(f"state constraint on {self.index}: empty interval")
        if self.rho < 0:
            raise ConfigError("penalty weight must be non-negative")


@dataclass(frozen=True)
class SolverConfig:
    max_iter: int = 100
    gtol: float = 1e-6
    ftol: float = 1e-12
    penalty_growth: float = 10.0
    penalty_rounds: int = 3
    violation_tol: float = 1e-3


@dataclass(frozen=True)
class MpcConfig:
    N1: int = 1
    N2: int = 5
    Nu: int = 5
    Q: tuple[float, ...] = (10.0, 10.0)
    R: tuple[float, ...] = (1.0,)
    u_bounds: tuple[tuple[float, float], ...] = ((-1.0, 1.0),)
    du_bounds: tuple[tuple[float, float], ...] | None = None
    state_constraints: tuple[StateConstraint, ...] = ()
    solver: SolverConfig = SolverConfig()

    def __post_init__(self):
        if not 1 <= self.N1 <= self.N2:
            raise ConfigError("need 1 <= N1 <= N2")
        if not 1 <= self.Nu <= self.N2:
            raise ConfigError("need 1 <= Nu <= N2")
        if any(q < 0 for q in self.Q) or any(r < 0 for r in self.R):
            raise ConfigError("Q and R must be non-negative")
        if len(self.R) != len(self.u_bounds):
            raise ConfigError("R and u_bounds must have one entry per control")
        du = self.du_bounds or tuple((-math.inf, math.inf) for _ in self.u_bounds)
        object.__setattr__(self, "du_bounds", tuple(tuple(map(float, b)) for b in du))
        object.__setattr__(self, "u_bounds", tuple(tuple(map(float, b)) for b in self.u_bounds))
        object.__setattr__(self, "Q", tuple(float(q) for q in self.Q))
        object.__setattr__(self, "R", tuple(float(r) for r in self.R))
        object.__setattr__(
            self,
            "state_constraints",
            tuple(c if isinstance(c, StateConstraint) else StateConstraint(**c) for c in self.state_constraints),
        )
        if len(self.du_bounds) != len(self.u_bounds):
            raise ConfigError("du_bounds and u_bounds must have one entry per control")
        for lo, hi in self.u_bounds + self.du_bounds:
            if not lo <= hi:
                raise ConfigError(f"infeasible box [{lo}, {hi}]")

    @property
    def n_controls(self) -> int:
        return len(self.u_bounds)


@dataclass
class MpcSolution:
    du: np.ndarray
    u: np.ndarray
    predicted_states: np.ndarray
    cost: float
    iterations: int
    converged: bool
    warm_cost: float = math.nan
    rho: tuple[float, ...] = ()


# -- predictors -------------------------------------------------------------------

def pinc_predictor(params: nn.NetworkParams) -> Predictor:
    arrays = params.arrays

    def predict(y, u):
        return nn.forward_graph(params, arrays, np.float64(params.T), y, u)

    predict.n_states = params.n_states
    return predict


def rk_predictor(model: OdeModel, Ts: float, substeps: int) -> Predictor:
    """The RK4 step map of the true model, used as an ideal prediction model."""

    def predict(y, u):
        if not isinstance(y, ad.Var) and not isinstance(u, ad.Var):
            return rk4_step(model, np.asarray(y, dtype=np.float64), np.asarray(u, dtype=np.float64), Ts, substeps)
        y_next, jy, ju = rk4_step_sensitivity(model, ad.value_of(y), ad.value_of(u), Ts, substeps)
        return ad.external(y_next, [y, u], [jy, ju], op="rk4_step")

    predict.n_states = model.n_states
    return predict


def as_predictor(model_like) -> Predictor:
    if isinstance(model_like, nn.NetworkParams):
        return pinc_predictor(model_like)
    if callable(model_like):
        return model_like
    raise ContractError(f"cannot predict with {type(model_like).__name__}")


# -- control aggregation ----------------------------------------------------------

def aggregate_controls(u_prev, du, N2: int):
    """Controls ``u[0..N2-1]`` from increments.

    ``u[j] = u_prev + du[0] + ... + du[j]`` for ``j < Nu`` and
    ``u[j] = u[Nu - 1]`` afterwards. Works on arrays and on a ``Var`` ``du``.
    """
    Nu = ad.value_of(du).shape[0]
    controls, u = [], u_prev
    for j in range(N2):
        if j < Nu:
            u = u + du[j]
        controls.append(u)
    return controls


def project_increments(du, u_prev, config: MpcConfig) -> np.ndarray:
    """Clip increments in order so every ``du[j]`` and induced ``u[j]`` is in its box."""
    m = config.n_controls
    du = np.array(du, dtype=np.float64).reshape(-1, m)
    dlo, dhi = np.array(config.du_bounds).T
    ulo, uhi = np.array(config.u_bounds).T
    u = np.array(u_prev, dtype=np.float64)
    for j in range(du.shape[0]):
        lo = np.maximum(dlo, ulo - u)
        hi = np.minimum(dhi, uhi - u)
        step = np.clip(du[j], lo, hi)
        # u_prev outside the box and unreachable in one increment: move as far as allowed
        stuck = lo > hi
        step = np.where(stuck & (u < ulo), dhi, step)
        step = np.where(stuck & (u > uhi), dlo, step)
        du[j] = step
        u = u + step
    return du


# -- cost -------------------------------------------------------------------------

def _check_reference(reference, config, n_states):
    ref = np.asarray(reference, dtype=np.float64)
    if ref.ndim == 1:
        ref = ref.reshape(-1, n_states)
    if ref.shape[0] < config.N2:
        raise ContractError(f"reference has {ref.shape[0]} rows, need at least N2={config.N2}")
    if len(config.Q) != ref.shape[1]:
        raise ConfigError(f"Q has {len(config.Q)} weights for {ref.shape[1]} states")
    return ref[: config.N2]


def _cost_graph(predict, config, y_current, u_prev, ref, du, rho):
    Q, R = np.array(config.Q), np.array(config.R)
    controls = aggregate_controls(u_prev, du, config.N2)
    y = y_current
    states = []
    J = ad.sum(ad.square(du) * R)
    for j in range(config.N2):
        y = predict(y, controls[j])
        states.append(y)
        if j + 1 >= config.N1:
            J = J + ad.sum(ad.square(y - ref[j]) * Q)
            for c, w in zip(config.state_constraints, rho):
                yi = y[c.index]
                J = J + w * (ad.square(ad.relu(c.lower - yi)) + ad.square(ad.relu(yi - c.upper)))
    return J, states, controls


def evaluate_cost(model_like, config: MpcConfig, y_current, u_prev, reference, du_candidate, rho=None):
    """Horizon cost and its gradient with respect to the increments.

    Returns ``(J, grad)`` with ``grad`` shaped like ``du_candidate``. A
    non-finite rollout gives ``J = inf`` and a zero gradient.
    """
    predict = as_predictor(model_like)
    y_current = np.asarray(y_current, dtype=np.float64)
    ref = _check_reference(reference, config, y_current.size)
    rho = tuple(c.rho for c in config.state_constraints) if rho is None else tuple(rho)
    du0 = np.asarray(du_candidate, dtype=np.float64).reshape(config.Nu, config.n_controls)
    if not np.all(np.isfinite(du0)):
        return math.inf, np.zeros_like(du0)
    tape = ad.Tape()
    du = tape.leaf(du0)
    J, _, _ = _cost_graph(predict, config, y_current, np.asarray(u_prev, dtype=np.float64), ref, du, rho)
    value = float(J)
    if not math.isfinite(value):
        log.warning("non-finite MPC rollout; cost set to inf")
        return math.inf, np.zeros_like(du0)
    (grad,) = ad.gradient(tape, J, [du])
    return value, grad


def predict_horizon(model_like, config, y_current, u_prev, du):
    predict = as_predictor(model_like)
    controls = aggregate_controls(np.asarray(u_prev, dtype=np.float64), np.asarray(du).reshape(config.Nu, -1), config.N2)
    y, states = np.asarray(y_current, dtype=np.float64), []
    for u in controls:
        y = np.asarray(predict(y, u))
        states.append(y)
    return np.array(states), np.array(controls)


def _violation(states, config):
    worst = 0.0
    for c in config.state_constraints:
        v = states[config.N1 - 1 :, c.index]
        worst = max(worst, float(np.max(np.maximum(c.lower - v, 0.0))), float(np.max(np.maximum(v - c.upper, 0.0))))
    return worst


def solve(model_like, config: MpcConfig, y_current, u_prev, reference, warm_start=None) -> MpcSolution:
    """Minimize the horizon cost over increments with projected L-BFGS.

    ``warm_start`` defaults to zero increments. If the optimum still violates a
    state bound by more than ``solver.violation_tol``, the penalty weights grow
    by ``solver.penalty_growth`` and the problem is re-solved from there. The
    returned point never costs more than the warm start under the final
    weights.
    """
    predict = as_predictor(model_like)
    y_current = np.asarray(y_current, dtype=np.float64)
    u_prev = np.asarray(u_prev, dtype=np.float64).reshape(config.n_controls)
    ref = _check_reference(reference, config, y_current.size)
    shape = (config.Nu, config.n_controls)
    warm = np.zeros(shape) if warm_start is None else np.asarray(warm_start, dtype=np.float64).reshape(shape)
    warm = project_increments(warm, u_prev, config)
    sc = config.solver

    def project(x):
        return project_increments(x, u_prev, config).ravel()

    rho = tuple(c.rho for c in config.state_constraints)
    x, iterations, converged = warm.ravel(), 0, False
    for round_ in range(max(1, sc.penalty_rounds + 1)):
        def fg(theta, rho=rho):
            J, g = evaluate_cost(predict, config, y_current, u_prev, ref, theta.reshape(shape), rho)
            return J, g.ravel()

        result = projected_lbfgs(fg, x, project, sc.max_iter, gtol=sc.gtol, ftol=sc.ftol)
        x, iterations, converged = result.x, iterations + result.iterations, result.converged
        states, _ = predict_horizon(predict, config, y_current, u_prev, x)
        if not config.state_constraints or _violation(states, config) <= sc.violation_tol or round_ == sc.penalty_rounds:
            break
        rho = tuple(r * sc.penalty_growth for r in rho)

    cost, _ = evaluate_cost(predict, config, y_current, u_prev, ref, x.reshape(shape), rho)
    warm_cost, _ = evaluate_cost(predict, config, y_current, u_prev, ref, warm, rho)
    if warm_cost < cost:
        x, cost = warm.ravel(), warm_cost
    du = x.reshape(shape)
    states, controls = predict_horizon(predict, config, y_current, u_prev, du)
    return MpcSolution(
        du=du,
        u=controls,
        predicted_states=states,
        cost=cost,
        iterations=iterations,
        converged=converged,
        warm_cost=warm_cost,
        rho=rho,
    )


# -- closed loop --------------------------------------------------------------------

@dataclass
class ClosedLoopResult:
    trajectory: Trajectory
    reference: np.ndarray
    costs: list[float] = field(default_factory=list)
    iterations: list[int] = field(default_factory=list)
    converged: list[bool] = field(default_factory=list)
    wall_time: float = 0.0

    @property
    def C(self) -> int:
        return self.trajectory.M

    def to_csv(self, path) -> Path:
        """``k,t_seconds,ref_1..,y_plant_1..,u_1..,J,solver_iters,converged``."""
        path = Path(path)
        traj = self.trajectory
        n, m = traj.states.shape[1], traj.controls.shape[1]
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                ["k", "t_seconds"]
                + [f"ref_{i + 1}" for i in range(n)]
                + [f"y_plant_{i + 1}" for i in range(n)]
                + [f"u_{j + 1}" for j in range(m)]
                + ["J", "solver_iters", "converged"]
            )
            for k in range(1, traj.M + 1):
                writer.writerow(
                    [k, repr(traj.Ts * k)]
                    + [repr(float(v)) for v in self.reference[k - 1]]
                    + [repr(float(v)) for v in traj.states[k]]
                    + [repr(float(v)) for v in traj.controls[k - 1]]
                    + [repr(self.costs[k - 1]), self.iterations[k - 1], int(self.converged[k - 1])]
                )
        return path


def receding_horizon_run(
    plant_model: OdeModel,
    model_like,
    config: MpcConfig,
    reference_signal,
    C: int,
    y0,
    u0,
    Ts: float,
    substeps: int = 10,
    progress: Callable | None = None,
) -> ClosedLoopResult:
    """Closed loop: solve from the plant state, apply the first increment for ``Ts``, repeat.

    ``reference_signal[k - 1]`` is the setpoint for plant state ``y[k]``; it
    needs at least ``C + N2`` rows. On a plant integration failure an
    :class:`IntegrationError` is raised with the partial result attached as
    ``.partial``.
    """
    predict = as_predictor(model_like)
    ref = np.asarray(reference_signal, dtype=np.float64)
    if ref.ndim == 1:
        ref = ref.reshape(-1, plant_model.n_states)
    if C < 0:
        raise ContractError("C must be non-negative")
    if ref.shape[0] < C + config.N2:
        raise ContractError(f"reference has {ref.shape[0]} rows, need C + N2 = {C + config.N2}")
    states = [np.asarray(y0, dtype=np.float64)]
    u_prev = np.asarray(u0, dtype=np.float64).reshape(config.n_controls)
    applied, costs, iters, conv = [], [], [], []
    warm = None
    start = time.perf_counter()

    def partial():
        return ClosedLoopResult(
            trajectory=Trajectory(Ts=Ts, states=np.array(states), controls=np.array(applied).reshape(-1, config.n_controls), source="plant-closed-loop"),
            reference=ref[: len(applied)],
            costs=costs,
            iterations=iters,
            converged=conv,
            wall_time=time.perf_counter() - start,
        )

    for k in range(C):
        sol = solve(predict, config, states[-1], u_prev, ref[k : k + config.N2], warm)
        u_k = u_prev + sol.du[0]
        y_next = rk4_step(plant_model, states[-1], u_k, Ts, substeps)
        if not np.all(np.isfinite(y_next)):
            err = IntegrationError(f"plant integration failed at step {k + 1}", k + 1)
            err.partial = partial()
            raise err
        states.append(y_next)
        applied.append(u_k)
        costs.append(sol.cost)
        iters.append(sol.iterations)
        conv.append(sol.converged)
        warm = np.vstack([sol.du[1:], np.zeros((1, config.n_controls))])
        u_prev = u_k
        if progress is not None:
            progress(k + 1, y_next, u_k, sol)
    return partial()
