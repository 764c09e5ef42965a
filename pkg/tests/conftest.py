import numpy as np
import pytest

from hgfpf.gain import COUNTERS


@pytest.fixture
def reset_counters():
    for k in COUNTERS:
        COUNTERS[k] = 0
    yield COUNTERS


def identity(x):
    return np.asarray(x, dtype=float)


# criterion number -> (passed, detail); filled by test_acceptance
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} criterion {n}: {detail}")
