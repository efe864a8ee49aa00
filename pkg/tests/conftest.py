import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for key in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[key])


class Hysteresis:
    """Up/down anode sweep of a reference device, with its wall time."""

    def __init__(self, name, v_gate=0.0, points=None):
        import time

        from tramsim import Simulation

        overrides = {} if points is None else {"points_per_region": points}
        self.sim = Simulation.from_reference(name, **overrides)
        t0 = time.perf_counter()
        self.up, self.down = self.sim.hysteresis(3.0, v_gate=v_gate)
        self.seconds = time.perf_counter() - t0

    def state_at(self, sweep, v):
        import numpy as np

        k = int(np.argmin(np.abs(sweep.voltages - v)))
        return sweep.states()[k]


_HYSTERESIS = {}


def hysteresis(name, v_gate=0.0, points=None):
    """Cached :class:`Hysteresis`, shared by every test module of the session."""
    key = (name, v_gate, points)
    if key not in _HYSTERESIS:
        _HYSTERESIS[key] = Hysteresis(name, v_gate, points)
    return _HYSTERESIS[key]


@pytest.fixture(scope="session")
def six_layer():
    return hysteresis("pnpnn6")


@pytest.fixture(scope="session")
def four_layer():
    return hysteresis("pnpn4")
