import os

import hypothesis
import numpy as np
import pytest
from hypothesis import strategies as st

from passopt.model import ImpedanceGains, SystemParams

hypothesis.settings.register_profile("default", max_examples=100, deadline=None)
hypothesis.settings.register_profile("fast", max_examples=10, deadline=None)
hypothesis.settings.register_profile("thorough", max_examples=1000, deadline=None)
hypothesis.settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


def log_uniform(lo, hi):
    return st.floats(np.log10(lo), np.log10(hi)).map(lambda e: float(10.0**e))


params_st = st.builds(SystemParams, J=log_uniform(1e-4, 1.0), k_r=log_uniform(0.5, 50.0),
                      P=log_uniform(0.1, 500.0), D=log_uniform(1e-3, 10.0))
gains_st = st.builds(ImpedanceGains, B_y=log_uniform(1e-2, 1e3), K_y=log_uniform(1e-2, 1e4))


@pytest.fixture
def params():
    return SystemParams()


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def criterion():
    """Record one PASS/FAIL line per acceptance criterion, then assert it."""

    def record(number: int, title: str, ok: bool, detail: str):
        line = f"criterion {number:>2} [{'PASS' if ok else 'FAIL'}] {title}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
