import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default", deadline=None, max_examples=60,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def random_unit(rng, size=None):
    shape = (3,) if size is None else (3, *size)
    m = rng.normal(size=shape)
    return m / np.linalg.norm(m, axis=0)


ACCEPTANCE_LINES: list[str] = []


class _Verdict:
    def __init__(self, label):
        self.label = label
        self.ok = False
        self.detail = "did not complete"

    def __call__(self, ok, detail):
        self.ok, self.detail = bool(ok), detail
        return self.ok


@pytest.fixture
def verdict(request):
    """Records one PASS/FAIL line for an acceptance criterion, even when the body raises."""
    v = _Verdict(request.node.get_closest_marker("criterion").args[0])
    yield v
    line = f"{'PASS' if v.ok else 'FAIL'}  {v.label}: {v.detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
