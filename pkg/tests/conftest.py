import os
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from pinc import network as nn
from pinc import physics

settings.register_profile("default", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("ci", deadline=None, max_examples=15, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

ROOT = Path(__file__).resolve().parents[1]
CONFIGS = ROOT / "configs"


@pytest.fixture
def vdp():
    return physics.van_der_pol()


@pytest.fixture
def tanks():
    return physics.four_tanks()


def small_net(model, hidden=(8, 8), T=0.5, seed=3, output_scaling=False):
    sizes = [1 + model.n_states + model.n_controls, *hidden, model.n_states]
    ranges = [(0.0, T), *model.state_ranges, *model.control_ranges]
    out = model.state_ranges if output_scaling else None
    return nn.init_params(sizes, T, ranges, seed, n_states=model.n_states, output_ranges=out)


@pytest.fixture
def vdp_net(vdp):
    return small_net(vdp)


def rel_err(a, b, floor=1e-8):
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(b)), floor))


# -- acceptance summary -------------------------------------------------------------

_ACCEPTANCE: dict = {}


def record_acceptance(number, ok, detail):
    _ACCEPTANCE[number] = (ok, detail)


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance: end-to-end acceptance criteria (slow, trains networks)")


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        ok, detail = _ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}")
