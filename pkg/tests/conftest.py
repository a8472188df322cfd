import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("pressim", deadline=None, max_examples=40)
settings.load_profile("pressim")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# -- acceptance summary --------------------------------------------------------
# Acceptance tests append (number, name, passed, detail) here; the lines are
# printed at the end of the run even when pytest captures test output.
ACCEPTANCE: list = []


@pytest.fixture
def criterion():
    def record(number, name, passed, detail):
        line = f"[{'PASS' if passed else 'FAIL'}] criterion {number}: {name} -- {detail}"
        ACCEPTANCE.append((number, line))
        print(line)
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE):
            terminalreporter.write_line(line)
