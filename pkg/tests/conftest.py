import numpy as np
import pytest

from tpp.graph import Graph


def dense_norm_adj(n, edges):
    """Independent dense oracle for D^-1/2 (A + I) D^-1/2."""
    a = np.zeros((n, n))
    for u, v in edges:
        a[u, v] = a[v, u] = 1.0
    a_hat = a + np.eye(n)
    d = a_hat.sum(axis=1)
    return a_hat / np.sqrt(np.outer(d, d))


def path_edges(n):
    return [(i, i + 1) for i in range(n - 1)]


def cycle_edges(n):
    return [(i, (i + 1) % n) for i in range(n)]


def complete_edges(n):
    return [(i, j) for i in range(n) for j in range(i + 1, n)]


def random_connected_edges(rng, n, p):
    """Erdos-Renyi edges plus a random spanning path so the graph is connected."""
    upper = np.triu(rng.random((n, n)) < p, k=1)
    edges = set(zip(*np.nonzero(upper)))
    order = rng.permutation(n)
    for a, b in zip(order[:-1], order[1:]):
        edges.add((min(a, b), max(a, b)))
    return sorted((int(u), int(v)) for u, v in edges)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def path4():
    return Graph.from_edges(4, path_edges(4), np.eye(4))


@pytest.fixture
def small_random_graph(rng):
    n = 12
    edges = random_connected_edges(rng, n, 0.25)
    return Graph.from_edges(n, edges, rng.standard_normal((n, 5)), rng.integers(0, 2, n)), edges


def fd_check(loss_fn, param, analytic, rng, n_coords=10, h=1e-6):
    """Worst relative error between ``analytic`` and central differences at random coordinates.

    ``loss_fn`` is re-evaluated after perturbing ``param`` in place.
    """
    worst = 0.0
    flat = param.reshape(-1)
    ana = np.asarray(analytic).reshape(-1)
    picks = rng.choice(flat.size, size=min(n_coords, flat.size), replace=False)
    for i in picks:
        old = flat[i]
        flat[i] = old + h
        up = loss_fn()
        flat[i] = old - h
        down = loss_fn()
        flat[i] = old
        num = (up - down) / (2 * h)
        denom = max(abs(num), abs(ana[i]), 1e-7)
        worst = max(worst, abs(num - ana[i]) / denom)
    return worst


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
