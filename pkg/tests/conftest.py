import numpy as np
import pytest

from raman_memory.grid_pulse import Grid, PulseShapeSpec, make_pulse
from raman_memory.memory_dynamics import MemoryParams


@pytest.fixture
def small_params():
    """Weak-coupling case where the closed-form kernel is accurate."""
    return MemoryParams(d=10.0, delta_w=50.0, delta_r=50.0, t_write=40.0, nz=64, nt=64)


@pytest.fixture
def tiny_params():
    return MemoryParams(d=10.0, delta_w=3.0, delta_r=3.0, t_write=20.0, nz=24, nt=24)


def gaussian(grid: Grid, fwhm: float, centre: float, amp: complex = 1.0):
    return make_pulse(PulseShapeSpec("gaussian", fwhm, amp, centre), grid)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# (number, title, passed, detail) per acceptance criterion, printed after the run
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for num, title, ok, detail in sorted(ACCEPTANCE, key=lambda r: r[0]):
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {num}. {title}: {detail}")
