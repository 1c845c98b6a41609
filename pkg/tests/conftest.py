from __future__ import annotations

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from oceanode.grid import GridSpec

settings.register_profile("default", deadline=None, max_examples=25,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def sin_mode(H: int, W: int, kx: int = 1, ky: int = 0) -> np.ndarray:
    """Discrete Fourier mode sin(2 pi kx j / W) cos(2 pi ky i / H)."""
    ii, jj = np.meshgrid(np.arange(H), np.arange(W), indexing="ij")
    return np.sin(2 * np.pi * kx * jj / W) * np.cos(2 * np.pi * ky * ii / H)


def mode_eigenvalue(H: int, W: int, kx: int, ky: int, dx: float = 1.0, dy: float = 1.0) -> float:
    return (2 - 2 * np.cos(2 * np.pi * kx / W)) / dx ** 2 + (2 - 2 * np.cos(2 * np.pi * ky / H)) / dy ** 2


def periodic_grid(H: int, W: int, **kw) -> GridSpec:
    return GridSpec(H, W, boundary_x="periodic", boundary_y="periodic", **kw)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# acceptance criterion number -> PASS/FAIL line, echoed after the run
ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
