import numpy as np
import pytest
from hypothesis import settings

from flowcompute.model import Complexity, FunctionClass, NetworkSpec

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")


def one_class_spec(routing, split, beta, mu, complexity=Complexity.MAPREDUCE, k=1.0,
                   surjectivity=0.5, **cls):
    fc = FunctionClass("c1", complexity, k, surjectivity, **cls)
    routing = np.asarray(routing, float)
    n = routing.shape[0]
    return NetworkSpec(n, (fc,), routing[None], np.asarray(split, float)[None],
                       np.array([float(beta)]), np.asarray(mu, float).reshape(1, n))


def single_node(beta, mu, **kw):
    return one_class_spec([[0.0]], [1.0], beta, [mu], **kw)


def two_node(beta=2.0, mu=3.0, p=0.5, **kw):
    return one_class_spec([[0.0, p], [p, 0.0]], [0.5, 0.5], beta, [mu, mu], **kw)


def random_substochastic(rng, n, max_row=0.9, density=0.6):
    P = rng.uniform(size=(n, n)) * (rng.uniform(size=(n, n)) < density)
    np.fill_diagonal(P, 0.0)
    rows = P.sum(axis=1, keepdims=True)
    scale = rng.uniform(0.1, max_row, size=(n, 1))
    return np.where(rows > 0, P / np.where(rows > 0, rows, 1.0) * scale, 0.0)


def random_network(rng, n=5, complexity=Complexity.MAPREDUCE, k=1.0, surjectivity=None,
                   load=(0.3, 0.8)):
    """Stable one-class network: service rates set so relay load is within ``load``."""
    P = random_substochastic(rng, n)
    split = rng.dirichlet(np.ones(n))
    beta = rng.uniform(0.5, 3.0)
    lam = np.linalg.solve(np.eye(n) - P.T, beta * split)
    mu = lam / rng.uniform(*load, size=n)
    G = rng.uniform(0.05, 0.9) if surjectivity is None else surjectivity
    return one_class_spec(P, split, beta, mu, complexity, k, G)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for n in sorted(results):
            terminalreporter.write_line(results[n])
