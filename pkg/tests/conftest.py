from __future__ import annotations

import numpy as np
import pytest

from leakdrift.core import SensorStream
from leakdrift.scenario import GeneratorConfig, synthetic_network


@pytest.fixture(scope="session")
def grid():
    """A 6x6 grid with 8 spread-out sensors."""
    return synthetic_network(6, 6, n_sensors=8, seed=3)


@pytest.fixture(scope="session")
def small_cfg():
    return GeneratorConfig(n_sensors=8, days=42)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def make_stream(values, t0=0) -> SensorStream:
    values = np.asarray(values, dtype=float)
    if values.ndim == 1:
        values = values[:, None]
    return SensorStream(values, tuple(f"s{j}" for j in range(values.shape[1])), t0)


# ---------------------------------------------------------------- acceptance report

ACCEPTANCE: dict[int, tuple[str, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        status, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {status}  {detail}")
