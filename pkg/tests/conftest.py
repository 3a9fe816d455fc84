import numpy as np
import pytest

_ACCEPTANCE_LINES = []


def record_acceptance(name, ok, detail=""):
    line = f"{'PASS' if ok else 'FAIL'}  {name}" + (f"  ({detail})" if detail else "")
    _ACCEPTANCE_LINES.append(line)
    print(line)


@pytest.fixture
def accept():
    return record_acceptance


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_probmap(rng, c, h, w, sharpness=3.0):
    z = rng.normal(0.0, sharpness, size=(c, h, w))
    e = np.exp(z - z.max(axis=0))
    return e / e.sum(axis=0)
