import numpy as np
import pytest

from ptyhybrid.simkit import SimConfig, simulate

ACCEPTANCE_LINES = []


def crandn(rng, *shape, dtype=np.complex128):
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)).astype(dtype)


def rel(a, b):
    return abs(a - b) / max(abs(b), 1e-300)


# 128x128 object, 32x32 probe, 10x10 raster -> 100 positions
ENGINE_FIXTURE = SimConfig(height=128, width=128, probe_size=32, step=10,
                           jitter=0, seed=29)
# 256x256 object, 64x64 probe, step 16 with jitter 2 -> 169 positions
DESK_FIXTURE = SimConfig(height=256, width=256, probe_size=64, spokes=32, step=16,
                         jitter=2, seed=1)


@pytest.fixture(scope="session")
def engine_ds():
    return simulate(ENGINE_FIXTURE)


@pytest.fixture(scope="session")
def small_ds():
    return simulate(SimConfig(height=48, width=40, probe_size=8, spokes=8, step=5,
                              jitter=1, seed=3, chirp=4.0))


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
