"""Two-term PINC loss and the ADAM -> L-BFGS training schedule."""

from __future__ import annotations

import csv
import logging
import math
import time
from collections import OrderedDict
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np

from . import autodiff as ad
from . import network as nn
from .errors import ConfigError, ContractError, TrainingDiverged
from .optim import Adam, AdamConfig, LbfgsConfig, lbfgs
from .physics import OdeModel, residual
from .sampling import CollocationSet, TrainingSet, sample_collocation_set, sample_training_set

log = logging.getLogger(__name__)

LAMBDA_CLAMP = (1e-4, 1e4)


@dataclass(frozen=True)
class TrainConfig:
    n_t: int = 1000
    n_f: int = 20000
    k1: int = 500
    k2: int = 5000
    lam: float | str = "auto"
    adam: AdamConfig = AdamConfig()
    lbfgs: LbfgsConfig = LbfgsConfig()
    seed: int = 0
    validate_every: int = 0
    checkpoint_every: int = 500

    def __post_init__(self):
        if self.k1 < 0 or self.k2 < 0:
            raise ConfigError("K1 and K2 must be non-negative")
        if self.lam != "auto" and not (isinstance(self.lam, (int, float)) and self.lam >= 0):
            raise ConfigError("lambda must be a non-negative number or 'auto'")
        if self.n_t < 1 or self.n_f < 1:
            raise ConfigError("N_t and N_F must be at least 1")


@dataclass
class TrainRecord:
    iteration: int
    phase: str
    mse_y: float
    mse_f: float
    total: float
    wall_ms: float
    mse_gen: float = math.nan


@dataclass
class TrainReport:
    records: list[TrainRecord] = field(default_factory=list)
    lam: float = math.nan
    mse_gen: float = math.nan
    message: str = ""

    CSV_HEADER = ("iter", "phase", "mse_y", "mse_f", "total", "wall_ms")

    def to_csv(self, path) -> Path:
        path = Path(path)
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(self.CSV_HEADER)
            for r in self.records:
                writer.writerow([r.iteration, r.phase, repr(r.mse_y), repr(r.mse_f), repr(r.total), f"{r.wall_ms:.3f}"])
        return path


# -- losses -----------------------------------------------------------------------

def _mse_y_graph(params, arrays, data: TrainingSet):
    y = nn.forward_graph(params, arrays, data.t, data.y0, data.u)
    return ad.mean(ad.square(y - data.target))


def _mse_f_graph(params, arrays, colloc: CollocationSet, model: OdeModel):
    y, dydt = nn.forward_graph(params, arrays, colloc.t, colloc.y0, colloc.u, time_derivative=True)
    return ad.mean(ad.square(residual(model, y, dydt, colloc.u)))


def _require(data, name):
    if data is None or len(data) == 0:
        raise ContractError(f"{name} is empty")


def loss_data(params: nn.NetworkParams, training_set: TrainingSet) -> float:
    """Mean over outputs of the mean squared error over samples."""
    _require(training_set, "training set")
    return float(_mse_y_graph(params, params.arrays, training_set))


def loss_physics(params: nn.NetworkParams, collocation_set: CollocationSet, model: OdeModel) -> float:
    """Mean over outputs of the mean squared ODE residual at collocation points."""
    _require(collocation_set, "collocation set")
    return float(_mse_f_graph(params, params.arrays, collocation_set, model))


def total_loss(params, training_set, collocation_set, model, lam: float) -> float:
    return loss_data(params, training_set) + lam * loss_physics(params, collocation_set, model)


def auto_lambda(params, training_set, collocation_set, model) -> float:
    """Initial-ratio balancing ``MSE_y / MSE_F``, clamped."""
    mse_y = loss_data(params, training_set)
    mse_f = loss_physics(params, collocation_set, model)
    ratio = mse_y / mse_f if mse_f > 0 else LAMBDA_CLAMP[1]
    return float(np.clip(ratio, *LAMBDA_CLAMP))


def loss_and_grad(params, training_set, collocation_set, model, lam: float):
    """``(total, mse_y, mse_f, flat_gradient)`` from one tape sweep."""
    tape = ad.Tape()
    leaves = [tape.leaf(a) for a in params.arrays]
    mse_y = _mse_y_graph(params, leaves, training_set)
    if lam != 0:
        mse_f = _mse_f_graph(params, leaves, collocation_set, model)
        total = mse_y + lam * mse_f
        mse_f_val = float(mse_f)
    else:
        total = mse_y + 0.0
        mse_f_val = float(_mse_f_graph(params, params.arrays, collocation_set, model))
    grads = ad.gradient(tape, total, leaves)
    return float(total), float(mse_y), mse_f_val, np.concatenate([g.ravel() for g in grads])


class _Objective:
    """Flat-vector objective remembering the loss split of recent evaluations."""

    def __init__(self, params, training_set, collocation_set, model, lam):
        self.params = params
        self.args = (training_set, collocation_set, model, lam)
        self.terms: OrderedDict = OrderedDict()

    def __call__(self, theta):
        total, mse_y, mse_f, grad = loss_and_grad(self.params.with_flat(theta), *self.args)
        self.terms[theta.tobytes()] = (mse_y, mse_f)
        while len(self.terms) > 64:
            self.terms.popitem(last=False)
        return total, grad

    def split(self, theta):
        return self.terms.get(theta.tobytes(), (math.nan, math.nan))


def train(
    params: nn.NetworkParams,
    model: OdeModel,
    config: TrainConfig,
    *,
    training_set: TrainingSet | None = None,
    collocation_set: CollocationSet | None = None,
    validation: Callable[[nn.NetworkParams], float] | None = None,
    checkpoint_dir=None,
    progress: Callable[[TrainRecord], None] | None = None,
) -> tuple[nn.NetworkParams, TrainReport]:
    """Run K1 full-batch ADAM epochs, then K2 L-BFGS iterations.

    Sets are drawn from ``config.seed`` (training) and ``config.seed + 1``
    (collocation) unless supplied. ``validation(params) -> mse_gen`` is called
    every ``config.validate_every`` iterations and at the end.
    """
    if training_set is None:
        training_set = sample_training_set(model, config.n_t, config.seed)
    if collocation_set is None:
        collocation_set = sample_collocation_set(model, params.T, config.n_f, config.seed + 1)
    _require(training_set, "training set")
    _require(collocation_set, "collocation set")

    report = TrainReport()
    if config.k1 == 0 and config.k2 == 0:
        report.message = "no iterations requested"
        return params, report

    lam = auto_lambda(params, training_set, collocation_set, model) if config.lam == "auto" else float(config.lam)
    report.lam = lam
    log.info("training %s: lambda=%.4g, K1=%d, K2=%d", model.name, lam, config.k1, config.k2)
    objective = _Objective(params, training_set, collocation_set, model, lam)
    start = time.perf_counter()
    ckpt_dir = Path(checkpoint_dir) if checkpoint_dir is not None else None

    def emit(it, phase, mse_y, mse_f, total, theta):
        rec = TrainRecord(it, phase, mse_y, mse_f, total, 1000.0 * (time.perf_counter() - start))
        if validation is not None and config.validate_every and it % config.validate_every == 0:
            rec.mse_gen = float(validation(params.with_flat(theta)))
        report.records.append(rec)
        if progress is not None:
            progress(rec)
        if ckpt_dir is not None and config.checkpoint_every and it % config.checkpoint_every == 0:
            nn.save(params.with_flat(theta), ckpt_dir / f"ckpt_{it:07d}.json")

    def diverged(it, phase, mse_y, mse_f, total):
        record = {"iteration": it, "phase": phase, "mse_y": mse_y, "mse_f": mse_f, "total": total}
        raise TrainingDiverged(f"non-finite loss at iteration {it} ({phase})", record)

    theta = params.flat()
    adam = Adam(theta.size, config.adam)
    for epoch in range(1, config.k1 + 1):
        total, grad = objective(theta)
        mse_y, mse_f = objective.split(theta)
        if not (math.isfinite(total) and np.all(np.isfinite(grad))):
            diverged(epoch, "adam", mse_y, mse_f, total)
        theta = adam.step(theta, grad)
        emit(epoch, "adam", mse_y, mse_f, total, theta)
    if ckpt_dir is not None and config.k1:
        nn.save(params.with_flat(theta), ckpt_dir / "ckpt_adam_end.json")

    if config.k2:
        f0, _ = objective(theta)
        if not math.isfinite(f0):
            diverged(config.k1, "lbfgs", *objective.split(theta), f0)

        def callback(it, f, x, g):
            mse_y, mse_f = objective.split(x)
            emit(config.k1 + it, "lbfgs", mse_y, mse_f, f, x)

        result = lbfgs(objective, theta, config.k2, config.lbfgs, callback=callback)
        theta = result.x
        report.message = result.message
        log.info("L-BFGS stopped after %d iterations: %s", result.iterations, result.message)
        if ckpt_dir is not None:
            nn.save(params.with_flat(theta), ckpt_dir / "ckpt_lbfgs_end.json")

    trained = params.with_flat(theta)
    if validation is not None:
        report.mse_gen = float(validation(trained))
    return trained, report


def with_training_meta(params: nn.NetworkParams, model: OdeModel, report: TrainReport) -> nn.NetworkParams:
    meta = dict(params.meta or {})
    meta.update({"model": model.to_dict(), "lambda": report.lam})
    return replace(params, meta=meta)
