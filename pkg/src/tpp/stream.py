"""Task sequences: class grouping, per-task graphs and train/val/test splits."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graph import Graph, induced_subgraph

ORDERINGS = ("ascending", "descending", "random")
SPLIT_FRACTIONS = (0.6, 0.2, 0.2)


@dataclass(frozen=True, eq=False)
class Task:
    """One task: its own graph, its classes in local order, and node splits."""

    task_id: int
    graph: Graph
    classes: tuple[int, ...]
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray
    class_offset: int
    node_ids: np.ndarray | None = None

    @property
    def n_classes(self) -> int:
        return len(self.classes)

    def global_labels(self, nodes) -> np.ndarray:
        """Global class ids (offset + local index) of the given task-local nodes."""
        lookup = {c: i for i, c in enumerate(self.classes)}
        labels = self.graph.labels[np.asarray(nodes, dtype=np.int64)]
        return self.class_offset + np.array([lookup[int(y)] for y in labels], dtype=np.int64)


@dataclass(eq=False)
class TaskStream:
    tasks: list[Task]
    ordering: str = "ascending"
    full_graph: Graph | None = None

    def __len__(self):
        return len(self.tasks)

    def __iter__(self):
        return iter(self.tasks)

    @property
    def n_classes(self) -> int:
        return sum(t.n_classes for t in self.tasks)

    def validate(self) -> None:
        seen: set[int] = set()
        for i, task in enumerate(self.tasks, start=1):
            if task.task_id != i:
                raise ValueError(f"task ids must be 1..T in order, got {task.task_id} at {i}")
            cls = set(task.classes)
            if cls & seen:
                raise ValueError(f"task {i} repeats classes {sorted(cls & seen)}")
            seen |= cls
            parts = np.concatenate([task.train, task.val, task.test])
            if np.unique(parts).size != parts.size or parts.size != task.graph.n:
                raise ValueError(f"task {i} splits are not disjoint and exhaustive")


def make_task_groups(classes, per_task: int = 2, ordering: str = "ascending", seed: int = 0):
    """Partition classes into consecutive groups of ``per_task`` after ordering them."""
    classes = sorted(int(c) for c in classes)
    if ordering == "descending":
        classes = classes[::-1]
    elif ordering == "random":
        rng = np.random.default_rng(seed)
        classes = [classes[i] for i in rng.permutation(len(classes))]
    elif ordering != "ascending":
        raise ValueError(f"ordering must be one of {ORDERINGS}, got {ordering!r}")
    return [tuple(classes[i : i + per_task]) for i in range(0, len(classes), per_task)]


def split_nodes(labels: np.ndarray, rng: np.random.Generator, fractions=SPLIT_FRACTIONS):
    """Per-class random split into train/val/test index arrays (sorted)."""
    train, val, test = [], [], []
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        idx = idx[rng.permutation(idx.size)]
        n_tr = int(round(fractions[0] * idx.size))
        n_va = int(round(fractions[1] * idx.size))
        train.append(idx[:n_tr])
        val.append(idx[n_tr : n_tr + n_va])
        test.append(idx[n_tr + n_va :])
    return tuple(np.sort(np.concatenate(p)).astype(np.int64) for p in (train, val, test))


def build_stream(full_graph: Graph, groups, seed: int = 0, ordering: str = "ascending") -> TaskStream:
    """Cut ``full_graph`` into one induced subgraph per class group.

    Edges between groups are dropped; each task is its own graph.
    """
    if full_graph.labels is None:
        raise ValueError("a task stream needs labeled nodes")
    seq = np.random.SeedSequence(seed)
    tasks = []
    offset = 0
    for i, (group, child) in enumerate(zip(groups, seq.spawn(len(groups))), start=1):
        group = tuple(int(c) for c in group)
        nodes = np.flatnonzero(np.isin(full_graph.labels, group))
        if nodes.size == 0:
            raise ValueError(f"task {i} has no nodes for classes {group}")
        sub, ids = induced_subgraph(full_graph, nodes)
        tr, va, te = split_nodes(sub.labels, np.random.default_rng(child))
        tasks.append(Task(i, sub, group, tr, va, te, offset, ids))
        offset += len(group)
    stream = TaskStream(tasks, ordering, full_graph)
    stream.validate()
    return stream
