import numpy as np
import pytest

from mppfl.graph import generate_er_graph, make_rng, propagation_coefficients, row_normalize
from mppfl.mechanism import ServerModelParams, roster


def random_instance(seed, n=20, hops=5, lam=0.5, alpha=0.05, w_min=0.0):
    """Graph, roster and server parameters drawn like the default scenario."""
    rng = make_rng(seed)
    g = generate_er_graph(n, rng)
    model = propagation_coefficients(row_normalize(g, w_min), lam, hops)
    a = rng.uniform(0.5, 1.5, n)
    b = rng.uniform(0.5, 1.5, n)
    sizes = rng.integers(50, 501, n)
    profiles = roster(a, b, sizes)
    server = ServerModelParams(alpha=alpha, big_n=n)
    return model, profiles, server


@pytest.fixture
def instance():
    return random_instance(0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[number])
