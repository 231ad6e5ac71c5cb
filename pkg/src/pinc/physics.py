"""ODE models: right-hand sides, physics residual, and the model registry.

Right-hand sides are written with :mod:`pinc.autodiff` operations so the same
function serves RK4 integration (plain arrays) and the physics loss or the
RK-model MPC baseline (recorded on a tape). States and controls are indexed on
the last axis, so a batch is an ``(N, n)`` array.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Callable, Mapping

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, ContractError, RegistryError

Range = tuple[float, float]


@dataclass(frozen=True)
class OdeModel:
    name: str
    n_states: int
    n_controls: int
    state_ranges: tuple[Range, ...]
    control_ranges: tuple[Range, ...]
    parameters: Mapping[str, float]
    rhs_fn: Callable = field(repr=False, compare=False)
    state_names: tuple[str, ...] = ()
    control_names: tuple[str, ...] = ()
    steady_input: tuple[float, ...] | None = None
    jacobian_fn: Callable | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "parameters", MappingProxyType(dict(self.parameters)))
        object.__setattr__(self, "state_ranges", tuple(tuple(map(float, r)) for r in self.state_ranges))
        object.__setattr__(self, "control_ranges", tuple(tuple(map(float, r)) for r in self.control_ranges))
        if len(self.state_ranges) != self.n_states or len(self.control_ranges) != self.n_controls:
            raise ConfigError(f"{self.name}: range count does not match dimensions")
        for lo, hi in self.state_ranges + self.control_ranges:
            if not lo < hi:
                raise ConfigError(f"{self.name}: degenerate range [{lo}, {hi}]")

    def rhs(self, y, u):
        return rhs(self, y, u)

    def residual(self, y_pred, dydt_pred, u):
        return residual(self, y_pred, dydt_pred, u)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "parameters": dict(self.parameters),
            "state_ranges": [list(r) for r in self.state_ranges],
            "control_ranges": [list(r) for r in self.control_ranges],
        }


def _check_dims(model: OdeModel, y, u):
    ys, us = ad.value_of(y).shape, ad.value_of(u).shape
    if not ys or ys[-1] != model.n_states:
        raise ContractError(f"{model.name}: state has shape {ys}, expected last axis {model.n_states}")
    if not us or us[-1] != model.n_controls:
        raise ContractError(f"{model.name}: control has shape {us}, expected last axis {model.n_controls}")


def rhs(model: OdeModel, y, u):
    """``dy/dt`` of ``model`` at state ``y`` under constant control ``u``."""
    if not isinstance(y, ad.Var):
        y = np.asarray(y, dtype=np.float64)
    if not isinstance(u, ad.Var):
        u = np.asarray(u, dtype=np.float64)
    _check_dims(model, y, u)
    return model.rhs_fn(y, u, model.parameters)


def residual(model: OdeModel, y_pred, dydt_pred, u):
    """Physics residual ``dy/dt - rhs(y, u)``; zero where the ODE holds locally."""
    if ad.value_of(dydt_pred).shape != ad.value_of(y_pred).shape:
        raise ContractError("dydt_pred and y_pred shapes differ")
    if not isinstance(dydt_pred, ad.Var):
        dydt_pred = np.asarray(dydt_pred, dtype=np.float64)
    return dydt_pred - rhs(model, y_pred, u)


def _van_der_pol(y, u, p):
    x1, x2 = y[..., 0], y[..., 1]
    dx2 = p["mu"] * (1.0 - x1 * x1) * x2 - x1 + u[..., 0]
    return ad.stack([x2, dx2], axis=-1)


def _four_tanks(y, u, p):
    g2 = 2.0 * p["g"]
    h = [y[..., i] for i in range(4)]
    # Levels are clamped at zero inside the root; derivative is 0 there.
    w = [p[f"a{i + 1}"] * ad.sqrt(g2 * h[i]) for i in range(4)]
    q1 = p["k1"] * u[..., 0]
    q2 = p["k2"] * u[..., 1]
    g1, gm2 = p["gamma1"], p["gamma2"]
    return ad.stack(
        [
            (g1 * q1 + w[2] - w[0]) / p["A1"],
            (gm2 * q2 + w[3] - w[1]) / p["A2"],
            ((1.0 - gm2) * q2 - w[2]) / p["A3"],
            ((1.0 - g1) * q1 - w[3]) / p["A4"],
        ],
        axis=-1,
    )


def _van_der_pol_jacobian(y, u, p):
    x1, x2 = y
    jy = np.array([[0.0, 1.0], [-2.0 * p["mu"] * x1 * x2 - 1.0, p["mu"] * (1.0 - x1 * x1)]])
    return jy, np.array([[0.0], [1.0]])


def _four_tanks_jacobian(y, u, p):
    h = np.maximum(np.asarray(y, dtype=np.float64), 0.0)
    a = np.array([p["a1"], p["a2"], p["a3"], p["a4"]])
    A = np.array([p["A1"], p["A2"], p["A3"], p["A4"]])
    safe = np.where(h > 0.0, h, 1.0)
    dw = np.where(h > 0.0, a * np.sqrt(2.0 * p["g"]) / (2.0 * np.sqrt(safe)), 0.0)
    jy = np.diag(-dw)
    jy[0, 2], jy[1, 3] = dw[2], dw[3]
    jy /= A[:, None]
    g1, g2 = p["gamma1"], p["gamma2"]
    ju = np.array(
        [
            [g1 * p["k1"], 0.0],
            [0.0, g2 * p["k2"]],
            [0.0, (1.0 - g2) * p["k2"]],
            [(1.0 - g1) * p["k1"], 0.0],
        ]
    ) / A[:, None]
    return jy, ju


def rhs_jacobian(model: OdeModel, y, u):
    """``(d rhs/dy, d rhs/du)`` at a single point, from the model's analytic form.

    Models registered without one fall back to a recorded tape.
    """
    y = np.asarray(y, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    _check_dims(model, y, u)
    if model.jacobian_fn is not None:
        return model.jacobian_fn(y, u, model.parameters)
    tape = ad.Tape()
    yv, uv = tape.leaf(y), tape.leaf(u)
    jac = ad.jacobian(tape, rhs(model, yv, uv), [yv, uv])
    return jac[:, : model.n_states], jac[:, model.n_states :]


VAN_DER_POL_DEFAULTS = {"mu": 1.0}

# Non-minimum-phase setting of the classical quadruple-tank benchmark (cm, s, V).
FOUR_TANKS_DEFAULTS = {
    "A1": 28.0,
    "A2": 32.0,
    "A3": 28.0,
    "A4": 32.0,
    "a1": 0.071,
    "a2": 0.057,
    "a3": 0.071,
    "a4": 0.057,
    "k1": 3.14,
    "k2": 3.29,
    "gamma1": 0.43,
    "gamma2": 0.34,
    "g": 981.0,
}


def van_der_pol(parameters=None, state_ranges=None, control_ranges=None) -> OdeModel:
    params = {**VAN_DER_POL_DEFAULTS, **(parameters or {})}
    _reject_unknown("van_der_pol", params, VAN_DER_POL_DEFAULTS)
    return OdeModel(
        name="van_der_pol",
        n_states=2,
        n_controls=1,
        state_ranges=tuple(state_ranges or ((-3.0, 3.0), (-3.0, 3.0))),
        control_ranges=tuple(control_ranges or ((-1.0, 1.0),)),
        parameters=params,
        rhs_fn=_van_der_pol,
        jacobian_fn=_van_der_pol_jacobian,
        state_names=("x1", "x2"),
        control_names=("u",),
        steady_input=None,
    )


def four_tanks(parameters=None, state_ranges=None, control_ranges=None) -> OdeModel:
    params = {**FOUR_TANKS_DEFAULTS, **(parameters or {})}
    _reject_unknown("four_tanks", params, FOUR_TANKS_DEFAULTS)
    for key in ("A1", "A2", "A3", "A4", "a1", "a2", "a3", "a4", "k1", "k2", "g"):
        if not params[key] > 0:
            raise ConfigError(f"four_tanks: {key} must be positive")
    for key in ("gamma1", "gamma2"):
        if not 0.0 < params[key] < 1.0:
            raise ConfigError(f"four_tanks: {key} must lie in (0, 1)")
    return OdeModel(
        name="four_tanks",
        n_states=4,
        n_controls=2,
        state_ranges=tuple(state_ranges or ((0.5, 15.0),) * 4),
        control_ranges=tuple(control_ranges or ((0.0, 5.0),) * 2),
        parameters=params,
        rhs_fn=_four_tanks,
        jacobian_fn=_four_tanks_jacobian,
        state_names=("h1", "h2", "h3", "h4"),
        control_names=("u1", "u2"),
    )


def _reject_unknown(name, params, defaults):
    unknown = sorted(set(params) - set(defaults))
    if unknown:
        raise ConfigError(f"{name}: unknown parameters {unknown}")


REGISTRY: dict[str, Callable[..., OdeModel]] = {
    "van_der_pol": van_der_pol,
    "four_tanks": four_tanks,
}


def get_model(name: str, parameters=None, state_ranges=None, control_ranges=None) -> OdeModel:
    try:
        factory = REGISTRY[name]
    except KeyError:
        raise RegistryError(f"unknown model {name!r}; known: {sorted(REGISTRY)}") from None
    return factory(parameters, state_ranges, control_ranges)


def four_tanks_steady_state(model: OdeModel, h1: float, h2: float):
    """Inputs and upper levels that hold ``(h1, h2)`` at equilibrium.

    Returns ``(u, h)`` with ``u = (u1, u2)`` and the full level vector ``h``.
    Solves the linear balance of the bottom tanks for the pump flows, then the
    top levels from their own balance.
    """
    p = model.parameters
    root = lambda h: np.sqrt(2.0 * p["g"] * h)  # noqa: E731
    w1, w2 = p["a1"] * root(h1), p["a2"] * root(h2)
    g1, g2 = p["gamma1"], p["gamma2"]
    # w1 = g1 q1 + (1-g2) q2 ; w2 = g2 q2 + (1-g1) q1
    mat = np.array([[g1, 1.0 - g2], [1.0 - g1, g2]])
    q1, q2 = np.linalg.solve(mat, [w1, w2])
    u = np.array([q1 / p["k1"], q2 / p["k2"]])
    w3, w4 = (1.0 - g2) * q2, (1.0 - g1) * q1
    h3 = (w3 / p["a3"]) ** 2 / (2.0 * p["g"])
    h4 = (w4 / p["a4"]) ** 2 / (2.0 * p["g"])
    return u, np.array([h1, h2, h3, h4])
