import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from restless_lab.env import ArmSpec, BanditInstance

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def flip(p):
    return np.array([[1 - p, p], [p, 1 - p]])


def cycle(m):
    return np.roll(np.eye(m), 1, axis=1)


def example1(p=0.05, noise="bernoulli"):
    arm = ArmSpec(flip(p), np.array([0.0, 1.0]), noise=noise)
    return BanditInstance((arm, arm))


def example3(p=0.05):
    return BanditInstance((ArmSpec(flip(p), np.array([0.0, 1.0])), ArmSpec.iid(0.5)))


def random_stochastic(rng, n, density=1.0):
    M = rng.random((n, n)) * (rng.random((n, n)) < density)
    M[np.arange(n), rng.permutation(n)] += 0.1  # keep rows non-empty
    M += 0.05 * np.roll(np.eye(n), 1, axis=1)  # a Hamiltonian cycle makes it irreducible
    return M / M.sum(axis=1, keepdims=True)


@pytest.fixture
def ex1():
    return example1()


_ACCEPTANCE_KEY = pytest.StashKey[list]()


@pytest.fixture
def acceptance(request):
    """Record one PASS/FAIL line per acceptance criterion; printed in the terminal summary."""
    lines = request.config.stash.setdefault(_ACCEPTANCE_KEY, [])

    def report(criterion, ok, detail):
        line = f"criterion {criterion:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        lines.append(line)
        print(line)
        return ok

    return report


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
