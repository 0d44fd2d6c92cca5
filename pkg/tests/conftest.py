import numpy as np
import pytest

from nonholo import scenarios

ACCEPTANCE_LINES: list[str] = []


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running integration test")


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)


class _Cache:
    """Session-wide memo for scenario builds and trajectories."""

    def __init__(self):
        self._runs = {}

    def scenario(self, name, **params):
        return scenarios.build(name, params or None)

    def run(self, name, dt, t_end=None, **params):
        key = (name, dt, t_end, tuple(sorted(params.items())))
        if key not in self._runs:
            self._runs[key] = self.scenario(name, **params).simulate(dt=dt, t_end=t_end)
        return self._runs[key]


@pytest.fixture(scope="session")
def cache():
    return _Cache()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
