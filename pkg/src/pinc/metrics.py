"""Self-loop generalization MSE and closed-loop tracking metrics."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import ContractError


def _states(x) -> np.ndarray:
    """Rows ``y[1..M]`` of a trajectory, or a plain ``(M, N_y)`` array as given."""
    states = getattr(x, "states", None)
    if states is not None:
        return np.asarray(states[1:], dtype=np.float64)
    arr = np.asarray(x, dtype=np.float64)
    return arr[:, None] if arr.ndim == 1 else arr


def _pair(a, b, what):
    a, b = _states(a), _states(b)
    if a.shape != b.shape:
        raise ContractError(f"{what}: shapes {a.shape} and {b.shape} differ")
    if a.shape[0] == 0:
        raise ContractError(f"{what}: empty trajectory")
    return a, b


def mse_gen(pinc_traj, rk_traj) -> float:
    """Mean over outputs of the mean squared error over steps 1..M."""
    if hasattr(pinc_traj, "Ts") and hasattr(rk_traj, "Ts") and pinc_traj.Ts != rk_traj.Ts:
        raise ContractError("trajectories use different sampling periods")
    a, b = _pair(pinc_traj, rk_traj, "mse_gen")
    return float(np.mean(np.mean((a - b) ** 2, axis=0)))


def iae(closed_loop, reference) -> tuple[float, float]:
    """``(normalized, unnormalized_sum)`` absolute tracking error.

    ``normalized`` averages over outputs and steps; ``unnormalized_sum`` is
    the plain double sum.
    """
    y, r = _pair(closed_loop, reference, "iae")
    err = np.abs(r - y)
    return float(np.mean(np.mean(err, axis=0))), float(np.sum(err))


def rmse(closed_loop, reference) -> float:
    """Mean over outputs of each output's root-mean-square tracking error."""
    y, r = _pair(closed_loop, reference, "rmse")
    return float(np.mean(np.sqrt(np.mean((r - y) ** 2, axis=0))))


def per_output(closed_loop, reference) -> dict:
    y, r = _pair(closed_loop, reference, "per_output")
    err = r - y
    return {
        "mse": np.mean(err**2, axis=0).tolist(),
        "iae": np.mean(np.abs(err), axis=0).tolist(),
        "rmse": np.sqrt(np.mean(err**2, axis=0)).tolist(),
    }


@dataclass
class MetricReport:
    mse_gen: float | None = None
    iae_normalized: float | None = None
    iae_unnormalized_sum: float | None = None
    rmse: float | None = None
    steps: int = 0
    per_output: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("mse_gen", "iae_normalized", "iae_unnormalized_sum", "rmse"):
            v = getattr(self, name)
            if v is not None and not (np.isfinite(v) and v >= 0):
                raise ContractError(f"{name} must be finite and non-negative, got {v}")

    @classmethod
    def for_prediction(cls, pinc_traj, rk_traj, **extra) -> MetricReport:
        return cls(
            mse_gen=mse_gen(pinc_traj, rk_traj),
            steps=len(_states(rk_traj)),
            per_output={"mse": per_output(pinc_traj, rk_traj)["mse"]},
            extra=extra,
        )

    @classmethod
    def for_control(cls, closed_loop, reference, **extra) -> MetricReport:
        norm, total = iae(closed_loop, reference)
        return cls(
            iae_normalized=norm,
            iae_unnormalized_sum=total,
            rmse=rmse(closed_loop, reference),
            steps=len(_states(reference)),
            per_output=per_output(closed_loop, reference),
            extra=extra,
        )

    def to_json(self, path=None) -> str:
        text = json.dumps(asdict(self), indent=2, sort_keys=True)
        if path is not None:
            Path(path).write_text(text + "\n")
        return text

    @classmethod
    def from_json(cls, text) -> MetricReport:
        return cls(**json.loads(text))
