import numpy as np
import pytest

from l2hmc.energy import build_energy

ALL_SPECS = [
    {"kind": "icg", "dim": 5},
    {"kind": "scg", "dim": 2},
    {"kind": "mog", "dim": 2},
    {"kind": "rough_well", "dim": 3, "eta": 1e-2},
    {"kind": "std_gaussian", "dim": 4},
]


@pytest.fixture(params=ALL_SPECS, ids=lambda s: s["kind"])
def any_energy(request):
    return build_energy(request.param)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    lines = getattr(mod, "LINES", None)
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(lines):
        terminalreporter.write_line(lines[number])
