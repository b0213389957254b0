import numpy as np
import pytest

_criteria = []


def record_criterion(number, name, passed, detail=""):
    """Remember one acceptance result; printed in the terminal summary."""
    line = f"[criterion {number:>2}] {'PASS' if passed else 'FAIL'}  {name}" + (f"  ({detail})" if detail else "")
    _criteria.append((number, line))
    print(line)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(_criteria):
        terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def crandn(rng, *shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
