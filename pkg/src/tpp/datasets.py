"""Synthetic SBM task streams and the on-disk dataset bundle format.

Bundle layout (one directory):

* ``edges.tsv``: ``src<TAB>dst`` per line, 0-indexed, each undirected edge once
* ``features.bin``: ``b"GCILF1"`` + u64 N + u64 F + N*F float32, little-endian, row-major
* ``labels.txt``: one integer class id per line
* ``tasks.json``: the class groups in task order, e.g. ``[[0, 1], [2, 3]]``
"""

from __future__ import annotations

import dataclasses
import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .graph import Graph
from .io_utils import atomic_write_bytes, atomic_write_text
from .stream import ORDERINGS, TaskStream, build_stream, make_task_groups

FEATURE_MAGIC = b"GCILF1"
_FEATURE_HEAD = struct.Struct("<QQ")


class BundleError(ValueError):
    pass


class MalformedHeaderError(BundleError):
    pass


class NodeCountMismatchError(BundleError):
    pass


class UnknownClassError(BundleError):
    pass


@dataclass(frozen=True)
class SbmSpec:
    tasks: int = 5
    classes_per_task: int = 2
    nodes_per_class: int = 50
    p_intra: float = 0.2
    p_inter: float = 0.02
    p_cross: float = 0.0
    n_features: int = 16
    mean_shift: float = 2.0
    noise: float = 1.0
    seed: int = 0
    ordering: str = "ascending"
    # "separated": class means on distinct axes; "adversarial": every task
    # shares the same class means and tasks differ only in edge density
    mode: str = "separated"
    density_ratio: float = 2.0

    def __post_init__(self):
        for name in ("p_intra", "p_inter", "p_cross"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {p}")
        if self.mean_shift < 0 or self.noise < 0:
            raise ValueError("mean_shift and noise must be non-negative")
        if self.mode not in ("separated", "adversarial"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.ordering not in ORDERINGS:
            raise ValueError(f"ordering must be one of {ORDERINGS}")
        if min(self.tasks, self.classes_per_task, self.nodes_per_class, self.n_features) < 1:
            raise ValueError("sizes must be positive")
        if self.density_ratio <= 0:
            raise ValueError("density_ratio must be positive")

    @classmethod
    def adversarial(cls, seed: int = 0, **overrides) -> "SbmSpec":
        """Tasks with identical class means that differ only in edge density."""
        params = dict(mode="adversarial", noise=0.5, p_intra=0.3, p_inter=0.03, density_ratio=1.5, seed=seed)
        params.update(overrides)
        return cls(**params)

    @classmethod
    def from_dict(cls, data: dict) -> "SbmSpec":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ValueError(f"unknown sbm keys: {sorted(unknown)}")
        return cls(**data)

    def task_densities(self, position: int) -> tuple[float, float]:
        """Within-task (intra, inter) block probabilities for the task at ``position``.

        In adversarial mode the last task uses ``p_intra``/``p_inter`` and each
        earlier task is ``density_ratio`` times sparser.
        """
        if self.mode == "separated":
            return self.p_intra, self.p_inter
        scale = self.density_ratio ** -(self.tasks - 1 - position)
        return min(1.0, self.p_intra * scale), min(1.0, self.p_inter * scale)


def _block_edges(rng, nodes_a, nodes_b, p, same):
    if p == 0.0:
        return np.empty((0, 2), dtype=np.int64)
    draws = rng.random((nodes_a.size, nodes_b.size)) < p
    if same:
        draws = np.triu(draws, k=1)
    ia, ib = np.nonzero(draws)
    return np.stack([nodes_a[ia], nodes_b[ib]], axis=1)


def generate_sbm_stream(spec: SbmSpec, split_seed: int | None = None):
    """Generate a labeled graph holding every task, cut it into a task stream.

    Returns ``(stream, membership)`` where ``membership[i]`` is the 1-based
    task of node ``i`` in ``stream.full_graph``.
    """
    n_classes = spec.tasks * spec.classes_per_task
    groups = make_task_groups(range(n_classes), spec.classes_per_task, spec.ordering, spec.seed)
    rng = np.random.default_rng(spec.seed)
    m = spec.nodes_per_class
    n = n_classes * m

    labels = np.empty(n, dtype=np.int64)
    membership = np.empty(n, dtype=np.int64)
    class_nodes = {}
    pos = 0
    for t, group in enumerate(groups, start=1):
        for c in group:
            class_nodes[c] = np.arange(pos, pos + m)
            labels[pos : pos + m] = c
            membership[pos : pos + m] = t
            pos += m

    edges = []
    for t, group in enumerate(groups):
        p_in, p_out = spec.task_densities(t)
        for a_idx, a in enumerate(group):
            for b in group[a_idx:]:
                same = a == b
                edges.append(_block_edges(rng, class_nodes[a], class_nodes[b], p_in if same else p_out, same))
    if spec.p_cross > 0:
        for t, g_a in enumerate(groups):
            for g_b in groups[t + 1 :]:
                na = np.concatenate([class_nodes[c] for c in g_a])
                nb = np.concatenate([class_nodes[c] for c in g_b])
                edges.append(_block_edges(rng, na, nb, spec.p_cross, False))

    means = np.zeros((n, spec.n_features))
    for group in groups:
        for local, c in enumerate(group):
            axis = local if spec.mode == "adversarial" else c
            means[class_nodes[c], axis % spec.n_features] = spec.mean_shift
    features = means + spec.noise * rng.standard_normal((n, spec.n_features))

    full = Graph.from_edges(n, np.concatenate(edges), features, labels)
    stream = build_stream(full, groups, spec.seed if split_seed is None else split_seed, spec.ordering)
    return stream, membership


@dataclass(frozen=True)
class DatasetBundle:
    edges: Path
    features: Path
    labels: Path
    tasks: Path

    @classmethod
    def from_dir(cls, root) -> "DatasetBundle":
        root = Path(root)
        return cls(root / "edges.tsv", root / "features.bin", root / "labels.txt", root / "tasks.json")


def write_features(path, features: np.ndarray) -> None:
    feats = np.ascontiguousarray(features, dtype="<f4")
    n, f = feats.shape
    atomic_write_bytes(Path(path), FEATURE_MAGIC + _FEATURE_HEAD.pack(n, f) + feats.tobytes())


def read_features(path) -> np.ndarray:
    data = Path(path).read_bytes()
    head = len(FEATURE_MAGIC) + _FEATURE_HEAD.size
    if len(data) < head or data[: len(FEATURE_MAGIC)] != FEATURE_MAGIC:
        raise MalformedHeaderError(f"{path}: missing GCILF1 header")
    n, f = _FEATURE_HEAD.unpack_from(data, len(FEATURE_MAGIC))
    if len(data) != head + 4 * n * f:
        raise MalformedHeaderError(
            f"{path}: header declares {n}x{f} floats but payload has {len(data) - head} bytes"
        )
    return np.frombuffer(data, "<f4", n * f, head).reshape(n, f).astype(np.float32)


def write_bundle(root, graph: Graph, groups) -> DatasetBundle:
    b = DatasetBundle.from_dir(root)
    Path(root).mkdir(parents=True, exist_ok=True)
    atomic_write_text(b.edges, "".join(f"{u}\t{v}\n" for u, v in graph.edge_list()))
    write_features(b.features, graph.features)
    atomic_write_text(b.labels, "".join(f"{y}\n" for y in graph.labels))
    atomic_write_text(b.tasks, json.dumps([list(map(int, g)) for g in groups]) + "\n")
    return b


def read_graph(b: DatasetBundle) -> Graph:
    feats = read_features(b.features)
    labels = np.array([int(x) for x in b.labels.read_text().split()], dtype=np.int64)
    if labels.size != feats.shape[0]:
        raise NodeCountMismatchError(
            f"features file has {feats.shape[0]} nodes but labels file has {labels.size}"
        )
    rows = [line.split("\t") for line in b.edges.read_text().splitlines() if line.strip()]
    edges = np.array(rows, dtype=np.int64).reshape(-1, 2)
    n = feats.shape[0]
    if edges.size and edges.max() >= n:
        raise NodeCountMismatchError(
            f"edges file references node {edges.max()} but features file has {n} nodes"
        )
    return Graph.from_edges(n, edges, feats, labels)


def load_bundle(b: DatasetBundle, seed: int = 0, ordering: str | None = None) -> TaskStream:
    """Read a bundle and cut it into tasks with seeded 0.6/0.2/0.2 per-class splits.

    ``ordering=None`` keeps the groups listed in the task file; otherwise the
    listed classes are regrouped (same group size) in the given order.
    """
    graph = read_graph(b)
    groups = [tuple(int(c) for c in g) for g in json.loads(b.tasks.read_text())]
    present = set(np.unique(graph.labels).tolist())
    for g in groups:
        missing = [c for c in g if c not in present]
        if missing:
            raise UnknownClassError(f"task spec lists classes {missing} absent from labels")
    if ordering is not None:
        flat = [c for g in groups for c in g]
        groups = make_task_groups(flat, len(groups[0]), ordering, seed)
    return build_stream(graph, groups, seed, ordering or "as_listed")
