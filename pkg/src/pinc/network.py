"""Fully-connected PINC network ``y(t) = f_w(t, y0, u)`` and its one-step interface.

Inputs are the column block ``[t, y0, u]``, each affinely scaled onto
``[-1, 1]`` from its declared range. Hidden layers use tanh, the output layer
is linear and optionally rescaled by ``output_offset + output_gain * z``.
Weights are stored ``(fan_in, fan_out)`` so a layer is ``a @ W + b``.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, ContractError, DomainError

CHECKPOINT_FORMAT = "pinc-checkpoint"
CHECKPOINT_VERSION = 1


class OutOfRangeWarning(UserWarning):
    """Input lies outside the region the network was trained on."""


@dataclass(frozen=True)
class NetworkParams:
    layer_sizes: tuple[int, ...]
    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]
    input_offset: np.ndarray
    input_gain: np.ndarray
    output_offset: np.ndarray
    output_gain: np.ndarray
    T: float
    n_states: int
    n_controls: int
    meta: dict | None = None

    def __post_init__(self):
        sizes = self.layer_sizes
        if len(self.weights) != len(sizes) - 1 or len(self.biases) != len(sizes) - 1:
            raise ConfigError("layer count does not match weights/biases")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (sizes[i], sizes[i + 1]) or b.shape != (sizes[i + 1],):
                raise ConfigError(f"layer {i}: shapes {w.shape}/{b.shape} do not chain")
        if sizes[0] != 1 + self.n_states + self.n_controls or sizes[-1] != self.n_states:
            raise ConfigError("input width must be 1 + n_states + n_controls, output width n_states")
        if not self.T > 0:
            raise ConfigError("T must be positive")

    @property
    def arrays(self) -> list[np.ndarray]:
        """Trainable arrays in a fixed order: W0, b0, W1, b1, ..."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    @property
    def n_params(self) -> int:
        return int(sum(a.size for a in self.arrays))

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays])

    def with_flat(self, theta: np.ndarray) -> NetworkParams:
        arrays, pos = [], 0
        for a in self.arrays:
            arrays.append(np.array(theta[pos : pos + a.size]).reshape(a.shape))
            pos += a.size
        if pos != len(theta):
            raise ContractError(f"flat vector has {len(theta)} entries, expected {pos}")
        return self.with_arrays(arrays)

    def with_arrays(self, arrays) -> NetworkParams:
        return NetworkParams(
            layer_sizes=self.layer_sizes,
            weights=tuple(np.asarray(a, dtype=np.float64) for a in arrays[0::2]),
            biases=tuple(np.asarray(a, dtype=np.float64) for a in arrays[1::2]),
            input_offset=self.input_offset,
            input_gain=self.input_gain,
            output_offset=self.output_offset,
            output_gain=self.output_gain,
            T=self.T,
            n_states=self.n_states,
            n_controls=self.n_controls,
            meta=self.meta,
        )

    def input_ranges(self) -> list[tuple[float, float]]:
        half = 1.0 / self.input_gain
        return [(float(o - h), float(o + h)) for o, h in zip(self.input_offset, half)]

    def equals(self, other: NetworkParams) -> bool:
        """Bitwise equality of every array and scalar field."""
        if self.layer_sizes != other.layer_sizes or self.T != other.T:
            return False
        mine = self.arrays + [self.input_offset, self.input_gain, self.output_offset, self.output_gain]
        theirs = other.arrays + [other.input_offset, other.input_gain, other.output_offset, other.output_gain]
        return all(a.shape == b.shape and a.tobytes() == b.tobytes() for a, b in zip(mine, theirs))


def _affine_scaling(ranges):
    ranges = np.asarray(ranges, dtype=np.float64)
    lo, hi = ranges[:, 0], ranges[:, 1]
    if np.any(hi <= lo):
        raise ConfigError("input ranges must be non-degenerate")
    return (lo + hi) / 2.0, 2.0 / (hi - lo)


def scale_inputs(params: NetworkParams, x):
    return (x - params.input_offset) * params.input_gain


def unscale_inputs(params: NetworkParams, xs):
    return xs / params.input_gain + params.input_offset


def init_params(
    layer_sizes,
    T: float,
    input_ranges,
    seed: int,
    *,
    n_states: int | None = None,
    output_ranges=None,
    meta=None,
) -> NetworkParams:
    """Glorot-uniform weights and zero biases.

    ``input_ranges`` must hold one ``(lo, hi)`` per network input, the first
    being ``(0, T)`` for time. ``output_ranges``, if given, sets an affine
    output map sending ``[-1, 1]`` onto each range (so the midpoint maps to 0).
    """
    sizes = tuple(int(s) for s in layer_sizes)
    if len(sizes) < 3:
        raise ConfigError("at least one hidden layer is required")
    if any(s <= 0 for s in sizes):
        raise ConfigError("layer sizes must be positive")
    if len(input_ranges) != sizes[0]:
        raise ConfigError(f"{len(input_ranges)} input ranges for {sizes[0]} inputs")
    if not T > 0:
        raise ConfigError("T must be positive")
    n_states = sizes[-1] if n_states is None else n_states
    n_controls = sizes[0] - 1 - n_states
    if n_controls < 0:
        raise ConfigError("input width too small for the declared state dimension")

    rng = np.random.Generator(np.random.PCG64(seed))
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    in_off, in_gain = _affine_scaling(input_ranges)
    if output_ranges is None:
        out_off, out_gain = np.zeros(sizes[-1]), np.ones(sizes[-1])
    else:
        out_off, g = _affine_scaling(output_ranges)
        out_gain = 1.0 / g
    return NetworkParams(
        layer_sizes=sizes,
        weights=tuple(weights),
        biases=tuple(biases),
        input_offset=in_off,
        input_gain=in_gain,
        output_offset=out_off,
        output_gain=out_gain,
        T=float(T),
        n_states=n_states,
        n_controls=n_controls,
        meta=meta,
    )


def forward_graph(params: NetworkParams, arrays, t, y0, u, *, time_derivative=False):
    """Network output (and optionally ``dy/dt``) built from autodiff operations.

    ``arrays`` are the trainable arrays (``Var`` leaves during training, plain
    arrays otherwise). ``t`` is ``(N,)`` or scalar, ``y0`` and ``u`` are
    ``(N, n)`` or ``(n,)``. Any of them may be a ``Var``.

    The time derivative is propagated as an explicit forward tangent: with
    ``z = a @ W + b`` and ``a' = tanh(z)``, ``dz/dt = da/dt @ W`` and
    ``da'/dt = (1 - a'^2) * dz/dt``. The input tangent is ``gain_t`` on the
    time column only, so the first layer's tangent is one row of ``W0``.
    """
    batched = ad.value_of(y0).ndim == 2
    if batched:
        t_col = t[:, None] if ad.value_of(t).ndim == 1 else t
        x = ad.concat([t_col, y0, u], axis=1)
    else:
        t_vec = t[None] if isinstance(t, ad.Var) else np.reshape(ad.value_of(t), (1,))
        x = ad.concat([t_vec, y0, u], axis=0)
    a = (x - params.input_offset) * params.input_gain
    weights, biases = arrays[0::2], arrays[1::2]
    da = None
    n_layers = len(weights)
    for i, (w, b) in enumerate(zip(weights, biases)):
        z = ad.affine(a, w, b)
        if time_derivative:
            dz = w[0] * params.input_gain[0] if da is None else da @ w
        if i < n_layers - 1:
            a = ad.tanh(z)
            if time_derivative:
                da = ad.tanh_tangent(a, dz)
        else:
            a = z
            if time_derivative:
                da = dz
    y = a * params.output_gain + params.output_offset
    if not time_derivative:
        return y
    return y, da * params.output_gain


def _check_inputs(params: NetworkParams, t, y0, u):
    for name, v in (("t", t), ("y0", y0), ("u", u)):
        if not np.all(np.isfinite(v)):
            raise DomainError(f"non-finite network input {name}")
    y0, u = np.asarray(y0), np.asarray(u)
    if y0.shape[-1] != params.n_states or u.shape[-1] != params.n_controls:
        raise ContractError(
            f"expected y0[..., {params.n_states}] and u[..., {params.n_controls}], got {y0.shape} and {u.shape}"
        )
    ranges = np.array(params.input_ranges()[1:])
    width = ranges[:, 1] - ranges[:, 0]
    x = np.concatenate([np.atleast_2d(y0), np.atleast_2d(u)], axis=1)
    if np.any(x < ranges[:, 0] - 0.5 * width) or np.any(x > ranges[:, 1] + 0.5 * width):
        warnings.warn("y0 or u more than 50% outside the training ranges", OutOfRangeWarning, stacklevel=3)


def forward(params: NetworkParams, t, y0, u, *, return_flag=False):
    """Predicted state at time ``t`` within the inner interval ``[0, T]``.

    ``t`` is scalar or ``(N,)``; ``y0``/``u`` are single vectors or ``(N, n)``
    batches. With ``return_flag=True`` the result is ``(y, out_of_range)``
    where the flag marks ``t`` outside ``[0, T]`` (values are still computed).
    """
    t = np.asarray(t, dtype=np.float64)
    y0 = np.asarray(y0, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    _check_inputs(params, t, y0, u)
    tol = 1e-9 * params.T
    out_of_range = bool(np.any(t < -tol) or np.any(t > params.T + tol))
    if y0.ndim == 2 and t.ndim == 0:
        t = np.full(y0.shape[0], float(t))
    y = forward_graph(params, params.arrays, t, y0, u)
    if not np.all(np.isfinite(y)):
        raise DomainError("network produced a non-finite output")
    return (y, out_of_range) if return_flag else y


def step(params: NetworkParams, y_prev, u_k):
    """One-step control interface: ``forward(params, T, y_prev, u_k)``."""
    return forward(params, params.T, y_prev, u_k)


def step_graph(params: NetworkParams, y_prev, u_k, arrays=None):
    """Differentiable :func:`step` for ``Var`` inputs (single vectors)."""
    arrays = params.arrays if arrays is None else arrays
    return forward_graph(params, arrays, np.float64(params.T), y_prev, u_k)


def time_derivative(params: NetworkParams, t, y0, u):
    """``dy/dt`` of the network output, computed through the tape."""
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    y0, u = np.atleast_2d(y0), np.atleast_2d(u)
    if t.shape[0] != y0.shape[0]:
        t = np.full(y0.shape[0], float(t[0]))
    _, dydt = forward_graph(params, params.arrays, t, y0, u, time_derivative=True)
    return dydt


# -- checkpoint I/O ----------------------------------------------------------

def to_dict(params: NetworkParams) -> dict:
    return {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "layer_sizes": list(params.layer_sizes),
        "T": params.T,
        "n_states": params.n_states,
        "n_controls": params.n_controls,
        "input_offset": params.input_offset.tolist(),
        "input_gain": params.input_gain.tolist(),
        "output_offset": params.output_offset.tolist(),
        "output_gain": params.output_gain.tolist(),
        "weights": params.flat().tolist(),
        "meta": params.meta or {},
    }


def from_dict(doc: dict) -> NetworkParams:
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ContractError("not a PINC checkpoint document")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ContractError(f"unsupported checkpoint version {doc.get('version')!r}")
    sizes = tuple(doc["layer_sizes"])
    shell = NetworkParams(
        layer_sizes=sizes,
        weights=tuple(np.zeros((a, b)) for a, b in zip(sizes[:-1], sizes[1:])),
        biases=tuple(np.zeros(b) for b in sizes[1:]),
        input_offset=np.array(doc["input_offset"], dtype=np.float64),
        input_gain=np.array(doc["input_gain"], dtype=np.float64),
        output_offset=np.array(doc["output_offset"], dtype=np.float64),
        output_gain=np.array(doc["output_gain"], dtype=np.float64),
        T=float(doc["T"]),
        n_states=int(doc["n_states"]),
        n_controls=int(doc["n_controls"]),
        meta=doc.get("meta") or None,
    )
    return shell.with_flat(np.array(doc["weights"], dtype=np.float64))


def save(params: NetworkParams, path) -> Path:
    """Write a JSON checkpoint. Floats use shortest round-trip repr, so reload is bit-exact."""
    path = Path(path)
    path.write_text(json.dumps(to_dict(params), indent=1, sort_keys=True) + "\n")
    return path


def load(path) -> NetworkParams:
    return from_dict(json.loads(Path(path).read_text()))
