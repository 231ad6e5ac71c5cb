"""Experiment configuration: one versioned JSON document fully determines a run."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, SchemaError
from .mpc import MpcConfig, SolverConfig, StateConstraint
from .optim import AdamConfig, LbfgsConfig
from .physics import OdeModel, get_model
from .training import TrainConfig

SCHEMA_VERSION = 1


@dataclass(frozen=True)
class ModelSection:
    name: str
    parameters: dict = field(default_factory=dict)
    state_ranges: list | None = None
    control_ranges: list | None = None

    def build(self) -> OdeModel:
        return get_model(self.name, self.parameters, self.state_ranges, self.control_ranges)


@dataclass(frozen=True)
class NetworkSection:
    hidden_layers: tuple[int, ...] = (20, 20, 20, 20)
    T: float = 0.5
    seed: int = 7
    output_scaling: bool = False


@dataclass(frozen=True)
class SimulationSection:
    Ts: float = 0.5
    substeps: int = 10
    allow_T_ne_Ts: bool = False


@dataclass(frozen=True)
class ValidationSection:
    M: int = 200
    seed: int = 123
    hold: tuple[int, int] = (1, 8)
    control_ranges: list | None = None
    y0: list | None = None


@dataclass(frozen=True)
class ScenarioSection:
    """Closed-loop reference program.

    ``program`` is a list of ``[start_step, setpoints]`` where ``setpoints``
    covers the ``tracked`` outputs; each entry holds from ``start_step`` on.
    Untracked outputs get reference 0 and must carry zero weight in ``Q``.
    """

    C: int = 120
    y0: list | None = None
    u0: list | None = None
    tracked: tuple[int, ...] = (0, 1)
    program: list = field(default_factory=list)


@dataclass(frozen=True)
class SweepSection:
    layer_widths: tuple[int, ...] = ()
    layer_depths: tuple[int, ...] = ()
    n_t: tuple[int, ...] = ()
    n_f: tuple[int, ...] = ()
    repeats: int = 1


@dataclass(frozen=True)
class ExperimentConfig:
    model: ModelSection
    schema_version: int = SCHEMA_VERSION
    network: NetworkSection = NetworkSection()
    training: TrainConfig = TrainConfig()
    simulation: SimulationSection = SimulationSection()
    validation: ValidationSection = ValidationSection()
    mpc: MpcConfig | None = None
    scenario: ScenarioSection | None = None
    sweep: SweepSection | None = None
    output_dir: str = "runs/experiment"

    def build_model(self) -> OdeModel:
        return self.model.build()

    def to_dict(self) -> dict:
        return _plain(dataclasses.asdict(self))

    def sha256(self) -> str:
        return hashlib.sha256(canonical_json(self.to_dict()).encode()).hexdigest()


_NESTED = {
    ExperimentConfig: {
        "model": ModelSection,
        "network": NetworkSection,
        "training": TrainConfig,
        "simulation": SimulationSection,
        "validation": ValidationSection,
        "mpc": MpcConfig,
        "scenario": ScenarioSection,
        "sweep": SweepSection,
    },
    TrainConfig: {"adam": AdamConfig, "lbfgs": LbfgsConfig},
    MpcConfig: {"solver": SolverConfig},
}

_TUPLE_FIELDS = {
    NetworkSection: ("hidden_layers",),
    ValidationSection: ("hold",),
    ScenarioSection: ("tracked",),
    SweepSection: ("layer_widths", "layer_depths", "n_t", "n_f"),
}


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.generic):
        obj = obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        # strict JSON has no infinities; float() parses these back
        return repr(obj)
    return obj


def canonical_json(doc) -> str:
    return json.dumps(doc, sort_keys=True, separators=(",", ":"))


def _build(cls, data, path, problems):
    if not isinstance(data, dict):
        problems.append((path or "<root>", f"expected an object, got {type(data).__name__}"))
        return None
    fields = {f.name: f for f in dataclasses.fields(cls)}
    for key in sorted(set(data) - set(fields)):
        problems.append((f"{path}.{key}" if path else key, "unknown key"))
    kwargs = {}
    for name, f in fields.items():
        key = f"{path}.{name}" if path else name
        if name not in data:
            if f.default is dataclasses.MISSING and f.default_factory is dataclasses.MISSING:
                problems.append((key, "missing required key"))
            continue
        value = data[name]
        nested = _NESTED.get(cls, {}).get(name)
        if nested is not None and value is not None:
            value = _build(nested, value, key, problems)
        elif name in _TUPLE_FIELDS.get(cls, ()) and isinstance(value, list):
            value = tuple(value)
        kwargs[name] = value
    if any(p[0] == path or p[0].startswith(f"{path}.") for p in problems) or (not path and problems):
        return None
    try:
        return cls(**kwargs)
    except (ConfigError, TypeError, ValueError) as exc:
        problems.append((path or "<root>", str(exc)))
        return None


def from_dict(doc: dict) -> ExperimentConfig:
    """Validate and build a config; every offending key is reported at once."""
    problems: list[tuple[str, str]] = []
    if isinstance(doc, dict) and doc.get("schema_version", SCHEMA_VERSION) != SCHEMA_VERSION:
        raise SchemaError(f"unsupported schema_version {doc.get('schema_version')!r}", ["schema_version"])
    cfg = _build(ExperimentConfig, doc, "", problems)
    if cfg is not None:
        try:
            cfg.build_model()
        except Exception as exc:  # registry or parameter errors
            problems.append(("model", str(exc)))
    if cfg is not None and not problems:
        _cross_check(cfg, problems)
    if problems:
        detail = "; ".join(f"{k}: {msg}" for k, msg in problems)
        raise SchemaError(f"invalid experiment config: {detail}", [k for k, _ in problems])
    return cfg


def _cross_check(cfg: ExperimentConfig, problems):
    model = cfg.build_model()
    if not cfg.simulation.allow_T_ne_Ts and cfg.network.T != cfg.simulation.Ts:
        problems.append(("network.T", "T must equal simulation.Ts unless allow_T_ne_Ts is set"))
    if not cfg.network.hidden_layers:
        problems.append(("network.hidden_layers", "at least one hidden layer is required"))
    if cfg.mpc is not None:
        if len(cfg.mpc.Q) != model.n_states:
            problems.append(("mpc.Q", f"needs {model.n_states} weights"))
        if cfg.mpc.n_controls != model.n_controls:
            problems.append(("mpc.u_bounds", f"needs {model.n_controls} boxes"))
    if cfg.scenario is not None:
        sc = cfg.scenario
        if any(not 0 <= i < model.n_states for i in sc.tracked):
            problems.append(("scenario.tracked", "index out of range"))
        for entry in sc.program:
            if not (isinstance(entry, (list, tuple)) and len(entry) == 2 and len(entry[1]) == len(sc.tracked)):
                problems.append(("scenario.program", f"entry {entry!r} must be [start, setpoints for tracked]"))
                break
        if cfg.mpc is not None:
            untracked = [i for i in range(model.n_states) if i not in sc.tracked]
            if any(cfg.mpc.Q[i] != 0 for i in untracked):
                problems.append(("mpc.Q", "untracked outputs must have zero weight"))


def load(path) -> ExperimentConfig:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: not valid JSON ({exc})", ["<root>"]) from None
    return from_dict(doc)


def save(cfg: ExperimentConfig, path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
    return path


def reference_signal(cfg: ExperimentConfig, n_states: int, extra: int = 0) -> np.ndarray:
    """Reference rows for steps ``1..C + N2 + extra``; row ``i`` targets step ``i + 1``."""
    sc = cfg.scenario
    if sc is None or not sc.program:
        raise ConfigError("scenario.program is required for closed-loop runs")
    N2 = cfg.mpc.N2 if cfg.mpc is not None else 0
    rows = sc.C + N2 + extra
    ref = np.zeros((rows, n_states))
    program = sorted(sc.program, key=lambda e: e[0])
    for i in range(rows):
        k = i + 1
        current = program[0][1]
        for start, setpoints in program:
            if k >= start:
                current = setpoints
        ref[i, list(sc.tracked)] = current
    return ref


def with_overrides(cfg: ExperimentConfig, **sections) -> ExperimentConfig:
    """Copy with whole sections or ``section__field`` values replaced."""
    updates = {}
    for key, value in sections.items():
        if "__" in key:
            section, name = key.split("__", 1)
            base = updates.get(section, getattr(cfg, section))
            updates[section] = dataclasses.replace(base, **{name: value})
        else:
            updates[key] = value
    return dataclasses.replace(cfg, **updates)


__all__ = [
    "ExperimentConfig",
    "ModelSection",
    "NetworkSection",
    "SimulationSection",
    "ValidationSection",
    "ScenarioSection",
    "SweepSection",
    "StateConstraint",
    "from_dict",
    "load",
    "save",
    "reference_signal",
    "with_overrides",
]
