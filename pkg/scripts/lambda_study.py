"""Effect of the physics-loss weight on one-step accuracy and self-loop error.

    python scripts/lambda_study.py configs/vdp_reduced.json --lam auto 1 0.1 0.01 --out runs/lambda

Each value trains from the same initial network and sets. One CSV row per value:
lambda used, final losses, teacher-forced one-step RMS error on held-out
points, worst initial-condition error and MSE_gen on the validation scenario.
"""

import argparse
import csv
import time
from pathlib import Path

import numpy as np

from pinc import cli, config, metrics, network as nn, sampling, training
from pinc.simulator import rk4_step


def one_step_errors(params, model, cfg, n=2000, seed=99):
    ts = sampling.sample_training_set(model, n, seed)
    T = cfg.network.T
    target = np.array([rk4_step(model, y, u, T, cfg.simulation.substeps) for y, u in zip(ts.y0, ts.u)])
    pred = nn.forward(params, np.full(n, T), ts.y0, ts.u)
    ic = nn.forward(params, np.zeros(n), ts.y0, ts.u)
    return float(np.sqrt(np.mean((pred - target) ** 2))), float(np.max(np.abs(ic - ts.y0)))


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("config")
    parser.add_argument("--lam", nargs="+", default=["auto", "1", "0.1"])
    parser.add_argument("--out", default="runs/lambda")
    args = parser.parse_args()

    cfg = config.load(args.config)
    model = cfg.build_model()
    scenario = cli.validation_scenario(cfg, model)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for value in args.lam:
        lam = value if value == "auto" else float(value)
        run_cfg = config.with_overrides(cfg, training__lam=lam)
        start = time.perf_counter()
        trained, report = training.train(cli.build_network(run_cfg, model), model, run_cfg.training)
        wall = time.perf_counter() - start
        one_step, ic = one_step_errors(trained, model, run_cfg)
        gen = metrics.mse_gen(scenario.rollout(trained), scenario.reference)
        last = report.records[-1]
        rows.append([value, report.lam, last.mse_y, last.mse_f, one_step, ic, gen, wall])
        nn.save(training.with_training_meta(trained, model, report), out / f"checkpoint_lam_{value}.json")
        print(f"lambda={value} ({report.lam:.3g}): one-step {one_step:.3e}, ic {ic:.3e}, mse_gen {gen:.3e}, {wall:.0f}s", flush=True)
    with open(out / "lambda_study.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["lambda", "lambda_used", "mse_y", "mse_f", "one_step_rms", "ic_max", "mse_gen", "wall_s"])
        writer.writerows(rows)


if __name__ == "__main__":
    main()
