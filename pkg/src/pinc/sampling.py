"""Training and collocation sets.

All draws are uniform i.i.d. from a PCG64 generator seeded by the caller, so a
seed reproduces the same set on any platform numpy supports.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, ContractError
from .physics import OdeModel


def rng_from_seed(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


@dataclass(frozen=True)
class TrainingSet:
    """Boundary-condition pairs ``((t, y0, u), target)``.

    Sampled sets have ``t == 0`` and ``target == y0``; sets loaded from CSV may
    carry arbitrary ``t`` and targets.
    """

    t: np.ndarray
    y0: np.ndarray
    u: np.ndarray
    target: np.ndarray

    def __len__(self):
        return len(self.t)

    def inputs(self) -> np.ndarray:
        return np.column_stack([self.t, self.y0, self.u])


@dataclass(frozen=True)
class CollocationSet:
    t: np.ndarray
    y0: np.ndarray
    u: np.ndarray

    def __len__(self):
        return len(self.t)


def _uniform(rng, ranges, n):
    ranges = np.asarray(ranges, dtype=np.float64)
    return rng.uniform(ranges[:, 0], ranges[:, 1], size=(n, len(ranges)))


def sample_training_set(model: OdeModel, n_t: int, seed: int) -> TrainingSet:
    if n_t < 1:
        raise ConfigError("N_t must be at least 1")
    rng = rng_from_seed(seed)
    y0 = _uniform(rng, model.state_ranges, n_t)
    u = _uniform(rng, model.control_ranges, n_t)
    return TrainingSet(t=np.zeros(n_t), y0=y0, u=u, target=y0.copy())


def sample_collocation_set(model: OdeModel, T: float, n_f: int, seed: int) -> CollocationSet:
    if n_f < 1:
        raise ConfigError("N_F must be at least 1")
    if not T > 0:
        raise ConfigError("T must be positive")
    rng = rng_from_seed(seed)
    t = rng.uniform(0.0, T, size=n_f)
    y0 = _uniform(rng, model.state_ranges, n_f)
    u = _uniform(rng, model.control_ranges, n_f)
    return CollocationSet(t=t, y0=y0, u=u)


def csv_header(model: OdeModel) -> list[str]:
    n, m = model.n_states, model.n_controls
    return (
        ["t"]
        + [f"y0_{i + 1}" for i in range(n)]
        + [f"u_{j + 1}" for j in range(m)]
        + [f"target_{i + 1}" for i in range(n)]
    )


def load_training_csv(path, model: OdeModel) -> TrainingSet:
    """Read external ``(t, y0, u, target)`` rows."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        expected = csv_header(model)
        if header != expected:
            raise ContractError(f"{path}: header {header} != {expected}")
        rows = np.array([[float(v) for v in row] for row in reader if row], dtype=np.float64)
    if rows.size == 0:
        raise ContractError(f"{path}: no data rows")
    n, m = model.n_states, model.n_controls
    return TrainingSet(
        t=rows[:, 0],
        y0=rows[:, 1 : 1 + n],
        u=rows[:, 1 + n : 1 + n + m],
        target=rows[:, 1 + n + m :],
    )


def write_training_csv(path, model: OdeModel, data: TrainingSet) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(csv_header(model))
        for row in np.column_stack([data.t, data.y0, data.u, data.target]):
            writer.writerow([repr(float(v)) for v in row])
    return path


def concat_training_sets(*sets: TrainingSet) -> TrainingSet:
    return TrainingSet(
        t=np.concatenate([s.t for s in sets]),
        y0=np.concatenate([s.y0 for s in sets]),
        u=np.concatenate([s.u for s in sets]),
        target=np.concatenate([s.target for s in sets]),
    )
