"""Command-line experiment runner: ``pinc train | evaluate | control | sweep``.

Every command takes one JSON config, writes its outputs plus a ``manifest.json``
into ``--out`` and refuses to overwrite existing outputs unless ``--overwrite``
is given. Failures print a JSON error object on stderr and exit nonzero.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import hashlib
import itertools
import json
import logging
import platform
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from . import config as cfgmod
from . import network as nn
from .config import ExperimentConfig
from .errors import ConfigError, ContractError, PincError, SchemaError
from .metrics import MetricReport, mse_gen
from .mpc import receding_horizon_run, rk_predictor
from .physics import OdeModel, get_model
from .simulator import Trajectory, ValidationScenario, dense_prediction, rk4_dense, rk4_integrate
from .training import train, with_training_meta

log = logging.getLogger("pinc")

DENSE_INTERVALS = 20
DENSE_POINTS = 11


# -- helpers --------------------------------------------------------------------------

def source_sha256() -> str:
    """Hash of the package sources, recorded as the code version of a run."""
    h = hashlib.sha256()
    for path in sorted(Path(__file__).parent.glob("*.py")):
        h.update(path.name.encode())
        h.update(path.read_bytes())
    return h.hexdigest()


def file_sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _prepare_out(out, names, overwrite: bool) -> Path:
    out = Path(out)
    existing = [n for n in names if (out / n).exists()]
    if existing and not overwrite:
        raise FileExistsError(f"{out}: refusing to overwrite {', '.join(existing)} (pass --overwrite)")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_manifest(out: Path, command: str, cfg: ExperimentConfig, outputs, extra=None) -> Path:
    manifest = {
        "command": command,
        "config": cfg.to_dict(),
        "config_sha256": cfg.sha256(),
        "seeds": {
            "network": cfg.network.seed,
            "training_set": cfg.training.seed,
            "collocation_set": cfg.training.seed + 1,
            "validation": cfg.validation.seed,
        },
        "versions": {
            "pinc": __version__,
            "source_sha256": source_sha256(),
            "python": platform.python_version(),
            "numpy": np.__version__,
        },
        "outputs": {name: file_sha256(out / name) for name in outputs if (out / name).is_file()},
    }
    manifest.update(extra or {})
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def build_network(cfg: ExperimentConfig, model: OdeModel | None = None) -> nn.NetworkParams:
    model = model or cfg.build_model()
    T = cfg.network.T
    sizes = [1 + model.n_states + model.n_controls, *cfg.network.hidden_layers, model.n_states]
    ranges = [(0.0, T), *model.state_ranges, *model.control_ranges]
    out_ranges = model.state_ranges if cfg.network.output_scaling else None
    return nn.init_params(sizes, T, ranges, cfg.network.seed, n_states=model.n_states, output_ranges=out_ranges)


def model_for_checkpoint(params: nn.NetworkParams, cfg: ExperimentConfig | None) -> OdeModel:
    """The ODE model a checkpoint was trained on, checked against the config if one is given."""
    meta = (params.meta or {}).get("model")
    if cfg is not None:
        model = cfg.build_model()
        if meta is not None and (meta.get("name") != model.name or meta.get("parameters") != dict(model.parameters)):
            raise ContractError(f"checkpoint was trained on {meta.get('name')!r} with different parameters than the config")
    elif meta is not None:
        model = get_model(meta["name"], meta.get("parameters"), meta.get("state_ranges"), meta.get("control_ranges"))
    else:
        raise ContractError("checkpoint has no model metadata; pass --config")
    if (model.n_states, model.n_controls) != (params.n_states, params.n_controls):
        raise ContractError(
            f"checkpoint maps {params.n_states} states/{params.n_controls} controls, "
            f"model {model.name} has {model.n_states}/{model.n_controls}"
        )
    return model


def validation_scenario(cfg: ExperimentConfig, model: OdeModel) -> ValidationScenario:
    v = cfg.validation
    return ValidationScenario.generate(
        model, v.M, cfg.simulation.Ts, v.seed, cfg.simulation.substeps, v.hold, v.control_ranges, v.y0
    )


def save_scenario(scenario: ValidationScenario, Ts: float, substeps: int, path) -> Path:
    doc = {
        "Ts": Ts,
        "substeps": substeps,
        "y0": scenario.y0.tolist(),
        "controls": scenario.controls.tolist(),
    }
    path = Path(path)
    path.write_text(json.dumps(doc, indent=1) + "\n")
    return path


def load_scenario(path, model: OdeModel) -> tuple[ValidationScenario, float, int]:
    doc = json.loads(Path(path).read_text())
    missing = [k for k in ("Ts", "substeps", "y0", "controls") if k not in doc]
    if missing:
        raise SchemaError(f"{path}: scenario is missing {', '.join(missing)}", missing)
    y0 = np.asarray(doc["y0"], dtype=np.float64)
    u = np.asarray(doc["controls"], dtype=np.float64).reshape(-1, model.n_controls)
    ref = rk4_integrate(model, y0, u, doc["Ts"], doc["substeps"])
    return ValidationScenario(y0=y0, controls=u, reference=ref), float(doc["Ts"]), int(doc["substeps"])


# -- train ------------------------------------------------------------------------------

TRAIN_OUTPUTS = ("checkpoint.json", "train_report.csv", "config.json", "manifest.json")


def run_train(cfg: ExperimentConfig, out, overwrite=False, checkpoints=False) -> dict:
    out = _prepare_out(out, TRAIN_OUTPUTS, overwrite)
    model = cfg.build_model()
    params = build_network(cfg, model)
    scenario = validation_scenario(cfg, model)

    def validate(p):
        return mse_gen(scenario.rollout(p), scenario.reference)

    def progress(rec):
        if rec.iteration % 100 == 0:
            log.info("%6d %-5s mse_y=%.3e mse_f=%.3e total=%.3e", rec.iteration, rec.phase, rec.mse_y, rec.mse_f, rec.total)

    start = time.perf_counter()
    trained, report = train(
        params,
        model,
        cfg.training,
        validation=validate,
        checkpoint_dir=out if checkpoints else None,
        progress=progress,
    )
    wall = time.perf_counter() - start
    trained = with_training_meta(trained, model, report)
    nn.save(trained, out / "checkpoint.json")
    report.to_csv(out / "train_report.csv")
    cfgmod.save(cfg, out / "config.json")
    summary = {"mse_gen": report.mse_gen, "lambda": report.lam, "message": report.message, "wall_time_s": wall}
    _write_manifest(out, "train", cfg, TRAIN_OUTPUTS[:3], {"result": summary})
    return {"out": str(out), **summary}


# -- evaluate ---------------------------------------------------------------------------

EVAL_OUTPUTS = ("metrics.json", "pinc_self_loop.csv", "rk_reference.csv", "dense_prediction.csv", "scenario.json", "manifest.json")


def _write_dense(params, model, scenario, Ts, n_intervals, path):
    """Network and RK states inside each of the first intervals, on a shared time axis."""
    n = params.n_states
    tau = np.linspace(0.0, params.T, DENSE_POINTS)
    rows = []
    y_start = scenario.reference.states[0]
    for k in range(min(n_intervals, len(scenario.controls))):
        u = scenario.controls[k]
        net = dense_prediction(params, y_start, u, tau)
        ref = rk4_dense(model, y_start, u, tau)
        for j, t in enumerate(tau):
            rows.append([k, repr(k * Ts + float(t))] + [repr(float(v)) for v in net[j]] + [repr(float(v)) for v in ref[j]])
        y_start = scenario.reference.states[k + 1]
    header = ["interval", "t_seconds"] + [f"pinc_y_{i + 1}" for i in range(n)] + [f"rk_y_{i + 1}" for i in range(n)]
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for r in rows:
            fh.write(",".join(map(str, r)) + "\n")


def run_evaluate(checkpoint, cfg: ExperimentConfig | None, out, scenario_path=None, overwrite=False) -> MetricReport:
    out = _prepare_out(out, EVAL_OUTPUTS, overwrite)
    params = nn.load(checkpoint)
    model = model_for_checkpoint(params, cfg)
    if scenario_path is not None:
        scenario, Ts, substeps = load_scenario(scenario_path, model)
    elif cfg is not None:
        scenario, Ts, substeps = validation_scenario(cfg, model), cfg.simulation.Ts, cfg.simulation.substeps
    else:
        raise ConfigError("evaluate needs --config or --scenario")
    if not np.isclose(Ts, params.T):
        raise ContractError(f"scenario sampling period {Ts} differs from network T={params.T}")
    pinc_traj = scenario.rollout(params)
    pinc_traj = Trajectory(Ts=Ts, states=pinc_traj.states, controls=pinc_traj.controls, source=pinc_traj.source)
    report = MetricReport.for_prediction(pinc_traj, scenario.reference, checkpoint=str(checkpoint))
    report.to_json(out / "metrics.json")
    pinc_traj.to_csv(out / "pinc_self_loop.csv")
    scenario.reference.to_csv(out / "rk_reference.csv")
    _write_dense(params, model, scenario, Ts, DENSE_INTERVALS, out / "dense_prediction.csv")
    save_scenario(scenario, Ts, substeps, out / "scenario.json")
    if cfg is not None:
        _write_manifest(out, "evaluate", cfg, EVAL_OUTPUTS[:-1], {"checkpoint_sha256": file_sha256(checkpoint)})
    return report


# -- control ------------------------------------------------------------------------------

CONTROL_OUTPUTS = ("closed_loop_pinc.csv", "closed_loop_rk.csv", "metrics.json", "manifest.json")


def closed_loop_setup(cfg: ExperimentConfig, model: OdeModel):
    if cfg.mpc is None or cfg.scenario is None:
        raise ConfigError("control needs both an mpc and a scenario section")
    sc = cfg.scenario
    y0 = np.asarray(sc.y0 if sc.y0 is not None else np.mean(model.state_ranges, axis=1), dtype=np.float64)
    u0 = np.asarray(sc.u0 if sc.u0 is not None else np.mean(model.control_ranges, axis=1), dtype=np.float64)
    return cfgmod.reference_signal(cfg, model.n_states), y0, u0


def control_metrics(result, cfg: ExperimentConfig, **extra) -> MetricReport:
    tracked = list(cfg.scenario.tracked)
    y = result.trajectory.states[1:, tracked]
    r = result.reference[: result.C, tracked]
    return MetricReport.for_control(y, r, wall_time_s=result.wall_time, tracked=tracked, **extra)


def run_closed_loop(cfg: ExperimentConfig, model: OdeModel, model_like, progress=None):
    ref, y0, u0 = closed_loop_setup(cfg, model)
    return receding_horizon_run(
        model, model_like, cfg.mpc, ref, cfg.scenario.C, y0, u0, cfg.simulation.Ts, cfg.simulation.substeps, progress
    )


def run_control(checkpoint, cfg: ExperimentConfig, out, baseline=False, overwrite=False) -> dict:
    out = _prepare_out(out, CONTROL_OUTPUTS, overwrite)
    params = nn.load(checkpoint)
    model = model_for_checkpoint(params, cfg)

    def progress(k, y, u, sol):
        if k % 20 == 0:
            log.info("step %d: J=%.4g iters=%d", k, sol.cost, sol.iterations)

    reports = {}
    result = run_closed_loop(cfg, model, params, progress)
    result.to_csv(out / "closed_loop_pinc.csv")
    reports["pinc"] = control_metrics(result, cfg)
    if baseline:
        rk = rk_predictor(model, cfg.simulation.Ts, cfg.simulation.substeps)
        base = run_closed_loop(cfg, model, rk, progress)
        base.to_csv(out / "closed_loop_rk.csv")
        reports["rk"] = control_metrics(base, cfg)
    doc = {name: json.loads(rep.to_json()) for name, rep in reports.items()}
    (out / "metrics.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    _write_manifest(out, "control", cfg, CONTROL_OUTPUTS[:-1], {"checkpoint_sha256": file_sha256(checkpoint)})
    return reports


# -- sweep --------------------------------------------------------------------------------

SWEEP_OUTPUTS = ("sweep.csv", "manifest.json")
SWEEP_HEADER = ("width", "depth", "n_t", "n_f", "repeats", "mean_log10_mse_gen", "std_log10_mse_gen", "mse_gen", "wall_s")


def sweep_cells(cfg: ExperimentConfig) -> list[tuple[int, int, int, int]]:
    sw = cfg.sweep
    if sw is None or not any((sw.layer_widths, sw.layer_depths, sw.n_t, sw.n_f)):
        raise ConfigError("sweep grid is empty")
    if sw.repeats < 1:
        raise ConfigError("sweep.repeats must be at least 1")
    widths = sw.layer_widths or (cfg.network.hidden_layers[0],)
    depths = sw.layer_depths or (len(cfg.network.hidden_layers),)
    n_t = sw.n_t or (cfg.training.n_t,)
    n_f = sw.n_f or (cfg.training.n_f,)
    return list(itertools.product(widths, depths, n_t, n_f))


def _cell_config(cfg: ExperimentConfig, cell, repeat: int) -> ExperimentConfig:
    width, depth, n_t, n_f = cell
    return cfgmod.with_overrides(
        cfg,
        network__hidden_layers=(width,) * depth,
        network__seed=cfg.network.seed + repeat,
        training__n_t=n_t,
        training__n_f=n_f,
        training__seed=cfg.training.seed + 2 * repeat,
    )


def _run_cell(doc: dict, cell, repeat: int) -> float:
    cfg = _cell_config(cfgmod.from_dict(doc), cell, repeat)
    model = cfg.build_model()
    scenario = validation_scenario(cfg, model)
    trained, _ = train(build_network(cfg, model), model, cfg.training)
    return mse_gen(scenario.rollout(trained), scenario.reference)


def run_sweep(cfg: ExperimentConfig, out, workers=1, overwrite=False) -> list[dict]:
    out = _prepare_out(out, SWEEP_OUTPUTS, overwrite)
    cells = sweep_cells(cfg)
    jobs = [(cell, r) for cell in cells for r in range(cfg.sweep.repeats)]
    doc = cfg.to_dict()
    start = time.perf_counter()
    if workers > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=workers) as pool:
            values = list(pool.map(_run_cell, [doc] * len(jobs), *zip(*jobs)))
    else:
        values = [_run_cell(doc, cell, r) for cell, r in jobs]
    wall = time.perf_counter() - start
    rows = []
    for i, cell in enumerate(cells):
        vals = np.array(values[i * cfg.sweep.repeats : (i + 1) * cfg.sweep.repeats])
        logs = np.log10(np.maximum(vals, np.finfo(float).tiny))
        rows.append(
            dict(
                zip(
                    SWEEP_HEADER,
                    [*cell, cfg.sweep.repeats, float(logs.mean()), float(logs.std()), ";".join(repr(float(v)) for v in vals), wall / len(cells)],
                )
            )
        )
    with open(out / "sweep.csv", "w") as fh:
        fh.write(",".join(SWEEP_HEADER) + "\n")
        for row in rows:
            fh.write(",".join(str(row[h]) for h in SWEEP_HEADER) + "\n")
    _write_manifest(out, "sweep", cfg, SWEEP_OUTPUTS[:1], {"workers": workers})
    return rows


# -- entry point ----------------------------------------------------------------------------

def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pinc", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, needs_config=True):
        p.add_argument("--config", required=needs_config, help="experiment config JSON")
        p.add_argument("--out", help="output directory (default: the config's output_dir)")
        p.add_argument("--overwrite", action="store_true", help="replace existing outputs")

    p = sub.add_parser("train", help="train a network and write its checkpoint")
    common(p)
    p.add_argument("--checkpoints", action="store_true", help="also keep periodic checkpoints")

    p = sub.add_parser("evaluate", help="self-loop prediction against the RK reference")
    common(p, needs_config=False)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--scenario", help="replay a saved scenario.json instead of generating one")

    p = sub.add_parser("control", help="closed-loop MPC run with the trained network")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--baseline", action="store_true", help="also run MPC with the RK step map as model")

    p = sub.add_parser("sweep", help="grid over network size or sample counts")
    common(p)
    p.add_argument("--workers", type=int, default=1)
    return parser


def _error_json(exc: BaseException) -> str:
    doc = {"error": type(exc).__name__, "message": str(exc)}
    if isinstance(exc, SchemaError):
        doc["keys"] = list(exc.keys)
    return json.dumps(doc)


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s", stream=sys.stderr)
    try:
        cfg = cfgmod.load(args.config) if args.config else None
        out = args.out or (cfg.output_dir if cfg is not None else None)
        if out is None:
            raise ConfigError("--out is required without a config")
        if args.command == "train":
            result = run_train(cfg, out, args.overwrite, args.checkpoints)
        elif args.command == "evaluate":
            result = json.loads(run_evaluate(args.checkpoint, cfg, out, args.scenario, args.overwrite).to_json())
        elif args.command == "control":
            reports = run_control(args.checkpoint, cfg, out, args.baseline, args.overwrite)
            result = {name: json.loads(rep.to_json()) for name, rep in reports.items()}
        else:
            if args.workers < 1:
                raise ConfigError("--workers must be at least 1")
            result = run_sweep(cfg, out, args.workers, args.overwrite)
    except (PincError, OSError, KeyError, ValueError) as exc:
        print(_error_json(exc), file=sys.stderr)
        return 2 if isinstance(exc, ConfigError) else 1
    print(json.dumps(result, indent=2, default=str))
    return 0


if __name__ == "__main__":
    sys.exit(main())
