"""Self-check suites for the prototype convergence and separation results."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graph import Graph
from .profiling import (
    SpectralOracle,
    build_prototype,
    limit_prototype,
    task_gap_diagnostic,
    verify_convergence,
)


@dataclass(frozen=True)
class SuiteCheck:
    suite: str
    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'} {self.suite}/{self.name}: {self.detail}"


def random_connected_graph(rng: np.random.Generator, n: int, p: float, f: int) -> Graph:
    """Erdos-Renyi graph plus a random spanning path, with Gaussian features."""
    upper = np.triu(rng.random((n, n)) < p, k=1)
    edges = np.argwhere(upper)
    order = rng.permutation(n)
    path = np.stack([order[:-1], order[1:]], axis=1)
    return Graph.from_edges(n, np.concatenate([edges, path]), rng.standard_normal((n, f)))


def gapped_graphs(n_graphs: int = 20, seed: int = 0, gap_threshold: float = 0.1, max_tries: int = 1000):
    """Random connected graphs whose oracle spectral gap is at least ``gap_threshold``."""
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(max_tries):
        if len(out) == n_graphs:
            return out
        n = int(rng.integers(10, 51))
        g = random_connected_graph(rng, n, float(rng.uniform(0.15, 0.5)), 8)
        if SpectralOracle.from_graph(g).effective_gap >= gap_threshold:
            out.append(g)
    raise RuntimeError(f"found only {len(out)} graphs with gap >= {gap_threshold}")


def convergence_suite(graphs, seed: int = 0) -> list[SuiteCheck]:
    """Prototypes of two random halves of one graph must merge as smoothing grows."""
    rng = np.random.default_rng(seed)
    checks = []
    for i, g in enumerate(graphs):
        perm = rng.permutation(g.n)
        rep = verify_convergence(g, perm[: g.n // 2], perm[g.n // 2 :], (1, 200))
        detail = f"n={g.n} gap={rep.spectral_gap:.3f} d1={rep.distances[0]:.3e} d200={rep.distances[1]:.3e}"
        checks.append(SuiteCheck("convergence", f"graph{i:02d}", rep.applicable and rep.passed, detail))
    return checks


def limit_suite(graphs, s: int = 400, rtol: float = 1e-6) -> list[SuiteCheck]:
    """Whole-graph prototypes at large ``s`` against the closed-form limit."""
    checks = []
    for i, g in enumerate(graphs):
        lim = limit_prototype(g)
        p = build_prototype(g, np.arange(g.n), s).vector
        rel = float(np.linalg.norm(p - lim) / np.linalg.norm(lim))
        checks.append(SuiteCheck("limit", f"graph{i:02d}", rel <= rtol, f"rel_err={rel:.2e}"))
    return checks


def task_gap_suite(graphs, seed: int = 0) -> list[SuiteCheck]:
    """Task-gap decomposition on perturbed copies of each graph.

    With the structure held fixed the limit prototypes share the normalizer
    ``sum(dhat)``, so the measured gap must equal the predicted one divided
    by it; identical graphs must give a zero gap.
    """
    rng = np.random.default_rng(seed)
    checks = []
    for i, g in enumerate(graphs):
        same = task_gap_diagnostic(g, g)
        other = g.with_features(g.X + rng.normal(0.5, 1.0, size=g.X.shape))
        rep = task_gap_diagnostic(g, other)
        scaled = rep.predicted_gap / g.degrees.dhat.sum()
        rel = abs(rep.measured_gap - scaled) / scaled
        ok = same.predicted_gap == 0 and same.measured_gap == 0 and rel <= 1e-6
        checks.append(SuiteCheck("task_gap", f"graph{i:02d}", ok, f"predicted={scaled:.4e} measured={rep.measured_gap:.4e}"))
    return checks


def run_all(n_graphs: int = 20, seed: int = 0) -> list[SuiteCheck]:
    graphs = gapped_graphs(n_graphs, seed)
    return convergence_suite(graphs, seed) + limit_suite(graphs) + task_gap_suite(graphs, seed)
