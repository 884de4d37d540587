import numpy as np
import pytest

from patchsis import make_model


@pytest.fixture
def two_patch():
    """Supercritical two-patch model used across the LLN and CLI tests."""
    return make_model([3.0, 2.5], [1.0, 1.0], [[0, 1], [1, 0]], nu_s=0.1, nu_i=0.1)


def random_model(rng: np.random.Generator, ell: int | None = None, equal: bool = False):
    """Random irreducible symmetric network with positive rates."""
    ell = int(rng.integers(1, 6)) if ell is None else ell
    a = np.triu(rng.uniform(0.0, 2.0, (ell, ell)) * (rng.random((ell, ell)) < 0.6), 1)
    for j in range(ell - 1):  # a path guarantees irreducibility
        a[j, j + 1] = max(a[j, j + 1], rng.uniform(0.1, 1.0))
    a = a + a.T
    lam = rng.uniform(0.2, 3.0, ell)
    gamma = rng.uniform(0.3, 2.0, ell)
    nu_i = rng.uniform(0.0, 1.0)
    nu_s = nu_i if equal else rng.uniform(0.0, 1.0)
    return make_model(lam, gamma, a, nu_s, nu_i)


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    if mod is None or not getattr(mod, "RESULTS", None):
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[k])
