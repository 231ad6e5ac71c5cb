"""Acceptance criteria, one test per criterion.

Each test records a PASS/FAIL line that is printed in the terminal summary.
The two trained networks are cached under ``tests/.cache`` keyed by the preset
config and the package source hash, so repeated runs only train once per code
version. Set ``PINC_ACCEPTANCE_RETRAIN=1`` to ignore the cache.
"""

import hashlib
import json
import os
import time
from pathlib import Path

import numpy as np
import pytest

from pinc import cli, config, metrics, mpc, physics, sampling, training
from pinc import network as nn
from pinc.simulator import rk4_integrate, rk4_step

from conftest import CONFIGS, record_acceptance, rel_err

pytestmark = pytest.mark.acceptance

CACHE = Path(__file__).resolve().parent / ".cache"


def report(number, ok, detail):
    record_acceptance(number, ok, detail)
    assert ok, detail


def trained_run(preset):
    """Train ``preset`` once per (config, source) pair and return the run directory."""
    cfg = config.load(CONFIGS / preset)
    key = hashlib.sha256((cfg.sha256() + cli.source_sha256()).encode()).hexdigest()[:16]
    out = CACHE / f"{Path(preset).stem}-{key}"
    if os.environ.get("PINC_ACCEPTANCE_RETRAIN") or not (out / "checkpoint.json").is_file():
        cli.run_train(cfg, out, overwrite=True)
    return cfg, out


@pytest.fixture(scope="session")
def vdp_run():
    cfg, out = trained_run("vdp_reduced.json")
    return cfg, nn.load(out / "checkpoint.json"), out


@pytest.fixture(scope="session")
def tanks_run():
    cfg, out = trained_run("tanks_reduced.json")
    return cfg, nn.load(out / "checkpoint.json"), out


def central_diff(f, x, eps=1e-6):
    g = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e.flat[i] = eps
        g.flat[i] = (f(x + e) - f(x - e)) / (2 * eps)
    return g


# 1 ----------------------------------------------------------------------------------

def test_autodiff_matches_finite_differences():
    start = time.perf_counter()
    vdp = physics.van_der_pol()
    worst_loss = worst_mpc = 0.0
    cfg = mpc.MpcConfig(N2=4, Nu=3, Q=(10.0, 10.0), R=(1.0,))
    rk = mpc.rk_predictor(vdp, 0.5, 10)
    for draw in range(100):
        rng = np.random.default_rng(draw)
        sizes = [4, 6, 6, 2]
        p = nn.init_params(sizes, 0.5, [(0.0, 0.5), (-3, 3), (-3, 3), (-1, 1)], draw, n_states=2)
        p = p.with_flat(p.flat() + rng.normal(scale=0.3, size=p.n_params))
        ts = sampling.sample_training_set(vdp, 6, draw)
        cs = sampling.sample_collocation_set(vdp, 0.5, 10, draw + 1)
        lam = float(rng.uniform(0.1, 10.0))
        _, _, _, g = training.loss_and_grad(p, ts, cs, vdp, lam)
        fd = central_diff(lambda th: training.total_loss(p.with_flat(th), ts, cs, vdp, lam), p.flat())
        worst_loss = max(worst_loss, rel_err(g, fd))

        y, u_prev = rng.uniform(-2, 2, 2), rng.uniform(-1, 1, 1)
        ref = np.tile(rng.uniform(-1, 1, 2), (4, 1))
        du = rng.uniform(-0.3, 0.3, (3, 1))
        for model_like in (p, rk):
            _, g = mpc.evaluate_cost(model_like, cfg, y, u_prev, ref, du)
            fd = central_diff(lambda d: mpc.evaluate_cost(model_like, cfg, y, u_prev, ref, d)[0], du)
            worst_mpc = max(worst_mpc, rel_err(g, fd))
    wall = time.perf_counter() - start
    ok = worst_loss < 1e-5 and worst_mpc < 1e-4 and wall < 60
    report(1, ok, f"loss rel err {worst_loss:.2e} (<1e-5), MPC rel err {worst_mpc:.2e} (<1e-4), {wall:.1f}s (<60s) over 100 draws")


# 2 ----------------------------------------------------------------------------------

def test_rk4_order_and_equilibrium():
    decay = physics.OdeModel("decay", 1, 1, ((-1, 1),), ((-1, 1),), {}, lambda y, u, p: -y)
    errors = [abs(rk4_step(decay, np.array([1.0]), np.zeros(1), 1.0, n)[0] - np.exp(-1.0)) for n in (4, 8, 16, 32)]
    ratios = [a / b for a, b in zip(errors, errors[1:])]
    vdp = physics.van_der_pol()
    traj = rk4_integrate(vdp, [1.2, 0.0], np.full((100, 1), 1.2), 0.5, 10)
    drift = float(np.max(np.abs(traj.states - [1.2, 0.0])))
    ok = all(12 <= r <= 20 for r in ratios) and drift < 1e-9
    report(2, ok, f"error ratios {', '.join(f'{r:.2f}' for r in ratios)} (in [12, 20]); equilibrium drift {drift:.1e} (<1e-9)")


# 3 ----------------------------------------------------------------------------------

def test_vdp_identification(vdp_run):
    cfg, params, out = vdp_run
    model = cfg.build_model()
    scenario = cli.validation_scenario(cfg, model)
    value = metrics.mse_gen(scenario.rollout(params), scenario.reference)
    wall = json.loads((out / "manifest.json").read_text())["result"]["wall_time_s"]
    report(
        3,
        value < 1e-2,
        f"MSE_gen {value:.3e} = 10^{np.log10(value):.2f} over {cfg.validation.M} steps (<1e-2; best published 10^-2.87); training {wall / 60:.1f} min (<30)",
    )


# 4 ----------------------------------------------------------------------------------

def test_initial_condition_fidelity(vdp_run):
    cfg, params, _ = vdp_run
    model = cfg.build_model()
    ts = sampling.sample_training_set(model, 1000, 2024)
    y = nn.forward(params, np.zeros(1000), ts.y0, ts.u)
    worst = float(np.max(np.abs(y - ts.y0)))
    report(4, worst < 1e-2, f"max |forward(0, y0, u) - y0| = {worst:.2e} on 1000 samples (<1e-2)")


# 5 ----------------------------------------------------------------------------------

def test_vdp_closed_loop(vdp_run):
    cfg, params, _ = vdp_run
    model = cfg.build_model()
    pinc = cli.run_closed_loop(cfg, model, params)
    base = cli.run_closed_loop(cfg, model, mpc.rk_predictor(model, cfg.simulation.Ts, cfg.simulation.substeps))
    r_pinc = cli.control_metrics(pinc, cfg).rmse
    r_rk = cli.control_metrics(base, cfg).rmse
    ok = 0.5 <= r_pinc / 0.15 <= 2.0 and 1 / 1.5 <= r_pinc / r_rk <= 1.5
    report(
        5,
        ok,
        f"RMSE PINC {r_pinc:.4f} (published 0.15, ratio {r_pinc / 0.15:.2f} in [0.5, 2]); RK model {r_rk:.4f} (ratio {r_pinc / r_rk:.2f} in [0.67, 1.5]); C={pinc.C}",
    )


# 6 ----------------------------------------------------------------------------------

def test_tanks_closed_loop(tanks_run):
    cfg, params, _ = tanks_run
    model = cfg.build_model()
    result = cli.run_closed_loop(cfg, model, params)
    states = result.trajectory.states[1:]
    lo = min(c.lower for c in cfg.mpc.state_constraints) - 0.05
    hi = max(c.upper for c in cfg.mpc.state_constraints) + 0.05
    band = states[:, [c.index for c in cfg.mpc.state_constraints]]
    in_band = bool(np.all((band >= lo) & (band <= hi)))
    starts = sorted(e[0] for e in cfg.scenario.program) + [cfg.scenario.C + 1]
    levels = [0, 1]
    reached = []
    for a, b in zip(starts, starts[1:]):
        seg = slice(a - 1, b - 1)
        err = np.abs(states[seg][:, levels] - result.reference[seg][:, levels])
        tol = 0.05 * np.abs(result.reference[a - 1, levels])
        reached.append(bool(np.all(np.any(err <= tol, axis=0))))
    ok = in_band and all(reached) and result.C == 240
    report(
        6,
        ok,
        f"h3/h4 range [{band.min():.3f}, {band.max():.3f}] (within [{lo:.2f}, {hi:.2f}]); h1/h2 setpoints reached within 5%: {reached}; C={result.C}",
    )


# 7 ----------------------------------------------------------------------------------

def test_metric_hand_cases():
    from pinc.simulator import Trajectory

    def traj(states):
        states = np.asarray(states, dtype=float)
        return Trajectory(Ts=0.5, states=states, controls=np.zeros((len(states) - 1, 1)), source="rk")

    base = np.random.default_rng(0).normal(size=(7, 2))
    shifted = base + [0.0, 0.1]
    ref3 = traj([[0, 0], [1, 2], [0, 1], [3, -1]])
    pred3 = traj([[0, 0], [1.5, 2], [0, 0], [1, -1]])
    y4 = np.array([[1.0, 0.0], [2.0, 1.0], [0.0, 0.5], [1.0, 1.0]])
    r4 = np.array([[0.0, 0.0], [1.0, 3.0], [0.0, 0.0], [2.0, 1.0]])
    checks = [
        (metrics.mse_gen(traj(base), traj(base)), 0.0),
        (metrics.mse_gen(traj(shifted), traj(base)), 0.005),
        (metrics.mse_gen(pred3, ref3), ((0.25 + 4) / 3 + 1 / 3) / 2),
        (metrics.iae(base, base)[0], 0.0),
        (metrics.iae(base, base)[1], 0.0),
        (metrics.iae(base + 1.0, base)[0], 1.0),
        (metrics.iae(y4, r4)[0], ((1 + 1 + 0 + 1) / 4 + (0 + 2 + 0.5 + 0) / 4) / 2),
        (metrics.iae(y4, r4)[1], 1 + 1 + 0 + 1 + 0 + 2 + 0.5 + 0),
        (metrics.rmse(base, base), 0.0),
        (metrics.rmse(base + 0.3, base), 0.3),
        (metrics.rmse([[3.0, 4.0]], [[0.0, 0.0]]), 3.5),
    ]
    worst = max(abs(a - b) for a, b in checks)
    report(7, worst <= 1e-12, f"{len(checks)} hand cases, worst deviation {worst:.1e} (<=1e-12)")


# 8 ----------------------------------------------------------------------------------

def test_mpc_solver_properties():
    u = np.array(mpc.aggregate_controls(np.array([0.5]), np.array([[0.1], [0.2], [-0.4]]), 5)).ravel()
    aggregation = bool(np.allclose(u, [0.6, 0.8, 0.4, 0.4, 0.4], rtol=0, atol=1e-15))

    vdp = physics.van_der_pol()
    rk = mpc.rk_predictor(vdp, 0.5, 10)
    cfg = mpc.MpcConfig(N2=5, Nu=5, Q=(10.0, 10.0), R=(1.0,))
    # (c, 0) held by u = c, with c inside the input box
    sol = mpc.solve(rk, cfg, [0.5, 0.0], [0.5], np.tile([0.5, 0.0], (5, 1)))
    stationary = float(np.linalg.norm(sol.du))

    monotone = True
    for seed in range(20):
        rng = np.random.default_rng(seed)
        y, u_prev = rng.uniform(-2, 2, 2), rng.uniform(-1, 1, 1)
        ref = np.tile(rng.uniform(-1, 1, 2), (5, 1))
        warm = mpc.project_increments(rng.uniform(-0.5, 0.5, (5, 1)), u_prev, cfg)
        s = mpc.solve(rk, cfg, y, u_prev, ref, warm)
        monotone &= s.cost <= mpc.evaluate_cost(rk, cfg, y, u_prev, ref, warm)[0]
    ok = aggregation and stationary < 1e-3 and monotone
    report(8, ok, f"aggregation {aggregation}; ||du|| at equilibrium {stationary:.1e} (<1e-3); cost <= warm start on 20 draws {monotone}")


# 9 ----------------------------------------------------------------------------------

def test_determinism_and_manifest(tmp_path):
    smoke = config.load(CONFIGS / "smoke.json")
    cli.run_train(smoke, tmp_path / "a")
    cli.run_train(smoke, tmp_path / "b")
    same = (tmp_path / "a" / "checkpoint.json").read_bytes() == (tmp_path / "b" / "checkpoint.json").read_bytes()
    manifest = json.loads((tmp_path / "a" / "manifest.json").read_text())
    replay = config.from_dict(manifest["config"])
    cli.run_train(replay, tmp_path / "c")
    reproduced = all(cli.file_sha256(tmp_path / "c" / name) == digest for name, digest in manifest["outputs"].items() if name != "train_report.csv")
    report(9, same and reproduced, f"bit-identical checkpoints {same}; manifest replay reproduces outputs {reproduced}")
