"""Task profiling: degree-corrected prototypes and nearest-prototype task IDs."""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .graph import Graph, connect_isolated_nodes, smooth_features
from .io_utils import atomic_write_bytes

logger = logging.getLogger(__name__)

DEFAULT_STEPS = 3
POOL_MAGIC = b"TPPPOOL1"
_RECORD_HEAD = struct.Struct("<QQQ")


@dataclass(frozen=True)
class TaskPrototype:
    task_id: int
    vector: np.ndarray
    s_used: int

    def __post_init__(self):
        vec = np.array(self.vector, dtype=np.float64).ravel()
        if not np.all(np.isfinite(vec)):
            raise ValueError("prototype vector must be finite")
        vec.flags.writeable = False
        object.__setattr__(self, "vector", vec)


@dataclass
class PrototypePool:
    """Ordered, append-only store of one prototype per learned task."""

    prototypes: list[TaskPrototype] = field(default_factory=list)

    def __len__(self):
        return len(self.prototypes)

    def __iter__(self):
        return iter(self.prototypes)

    @property
    def dim(self) -> int | None:
        return self.prototypes[0].vector.size if self.prototypes else None

    def add(self, proto: TaskPrototype) -> None:
        expected = len(self.prototypes) + 1
        if proto.task_id != expected:
            raise ValueError(f"expected task_id {expected}, got {proto.task_id}")
        if self.dim is not None and proto.vector.size != self.dim:
            raise ValueError(
                f"prototype has dimension {proto.vector.size}, pool uses {self.dim}"
            )
        self.prototypes.append(proto)

    def matrix(self) -> np.ndarray:
        return np.stack([p.vector for p in self.prototypes])

    def task_ids(self) -> np.ndarray:
        return np.array([p.task_id for p in self.prototypes], dtype=np.int64)

    def to_bytes(self) -> bytes:
        chunks = [POOL_MAGIC]
        for p in self.prototypes:
            chunks.append(_RECORD_HEAD.pack(p.task_id, p.s_used, p.vector.size))
            chunks.append(p.vector.astype("<f8").tobytes())
        return b"".join(chunks)

    @classmethod
    def from_bytes(cls, data: bytes) -> "PrototypePool":
        if data[: len(POOL_MAGIC)] != POOL_MAGIC:
            raise ValueError("not a prototype pool file (bad magic)")
        pos = len(POOL_MAGIC)
        pool = cls()
        while pos < len(data):
            if pos + _RECORD_HEAD.size > len(data):
                raise ValueError("truncated prototype record header")
            task_id, s_used, f = _RECORD_HEAD.unpack_from(data, pos)
            pos += _RECORD_HEAD.size
            end = pos + 8 * f
            if end > len(data):
                raise ValueError("truncated prototype vector")
            vec = np.frombuffer(data[pos:end], dtype="<f8")
            pool.add(TaskPrototype(int(task_id), vec, int(s_used)))
            pos = end
        return pool

    def save(self, path) -> None:
        atomic_write_bytes(Path(path), self.to_bytes())

    @classmethod
    def load(cls, path) -> "PrototypePool":
        return cls.from_bytes(Path(path).read_bytes())


def _node_array(nodes, n) -> np.ndarray:
    nodes = np.asarray(nodes, dtype=np.int64).ravel()
    if nodes.size == 0:
        raise ValueError("node set must be nonempty")
    if nodes.min() < 0 or nodes.max() >= n:
        raise ValueError("node id out of range")
    return nodes


def build_prototype(
    g: Graph, node_set, s: int = DEFAULT_STEPS, task_id: int = 1, seed: int = 0
) -> TaskPrototype:
    """Mean of ``z_i * dhat_i^-1/2`` over ``node_set`` after ``s`` smoothing steps.

    Isolated nodes are first attached to random anchors (``seed``) so the
    smoothing runs on a graph without isolated components.
    """
    nodes = _node_array(node_set, g.n)
    g = connect_isolated_nodes(g, seed)
    z = smooth_features(g, s)
    corrected = z[nodes] * g.degrees.inv_sqrt[nodes, None]
    return TaskPrototype(task_id, corrected.mean(axis=0), s)


def attribute_prototype(g: Graph, node_set, task_id: int = 1) -> TaskPrototype:
    """Plain attribute mean; no smoothing and no degree correction."""
    nodes = _node_array(node_set, g.n)
    return TaskPrototype(task_id, g.X[nodes].mean(axis=0), 0)


def predict_task(pool: PrototypePool, p_test) -> int:
    """Task id of the Euclidean-nearest prototype; ties go to the smallest id."""
    if len(pool) == 0:
        raise ValueError("prototype pool is empty")
    vec = p_test.vector if isinstance(p_test, TaskPrototype) else np.asarray(p_test)
    mat = pool.matrix()
    if vec.shape != (mat.shape[1],):
        raise ValueError(f"test prototype has shape {vec.shape}, pool dim {mat.shape[1]}")
    dist = np.sqrt(((mat - vec[None, :]) ** 2).sum(axis=1))
    ids = pool.task_ids()
    best = dist == dist.min()
    return int(ids[best].min())


def limit_prototype(g: Graph) -> np.ndarray:
    """Infinite-step prototype ``sum_j sqrt(dhat_j) x_j / sum_j dhat_j``."""
    if not g.is_connected():
        raise ValueError("limit not unique: graph is disconnected")
    dhat = g.degrees.dhat
    return (np.sqrt(dhat)[:, None] * g.X).sum(axis=0) / dhat.sum()


@dataclass(frozen=True)
class SpectralOracle:
    """Dense eigendecomposition of the normalized operator (small graphs)."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    @classmethod
    def from_graph(cls, g: Graph) -> "SpectralOracle":
        vals, vecs = np.linalg.eigh(g.dense_operator())
        return cls(vals, vecs)

    @property
    def spectral_gap(self) -> float:
        """``1 - lambda_{N-1}``, the distance of the second eigenvalue from 1."""
        if self.eigenvalues.size < 2:
            return 1.0
        return float(1.0 - self.eigenvalues[-2])

    @property
    def contraction(self) -> float:
        """Largest ``|lambda_i|`` off the top eigenvalue; the per-step decay rate."""
        if self.eigenvalues.size < 2:
            return 0.0
        return float(np.abs(self.eigenvalues[:-1]).max())

    @property
    def effective_gap(self) -> float:
        return 1.0 - self.contraction


@dataclass(frozen=True)
class ConvergenceReport:
    s_values: tuple[int, ...]
    distances: tuple[float, ...]
    spectral_gap: float
    applicable: bool
    passed: bool

    def lines(self) -> list[str]:
        out = [f"  s={s:<4d} d={d:.3e}" for s, d in zip(self.s_values, self.distances)]
        out.append(
            f"  gap={self.spectral_gap:.4f} applicable={self.applicable} passed={self.passed}"
        )
        return out


def verify_convergence(
    g: Graph,
    split_a,
    split_b,
    s_values=(1, 200),
    ratio: float = 1e-3,
    floor: float = 1e-6,
    gap_threshold: float = 0.1,
) -> ConvergenceReport:
    """Check that two node splits of one graph yield converging prototypes.

    The gap used for applicability is ``1 - max_{i<N} |lambda_i|`` from the
    dense oracle, since negative eigenvalues also govern the decay. When the
    smallest-``s`` distance already sits below ``floor`` the ratio test is
    vacuous and only the absolute floor is checked.
    """
    if not g.is_connected():
        raise ValueError("verify_convergence needs a connected graph")
    s_values = tuple(sorted(int(s) for s in s_values))
    dists = []
    for s in s_values:
        pa = build_prototype(g, split_a, s).vector
        pb = build_prototype(g, split_b, s).vector
        dists.append(float(np.linalg.norm(pa - pb)))
    gap = SpectralOracle.from_graph(g).effective_gap
    applicable = gap >= gap_threshold
    d_min, d_max = dists[0], dists[-1]
    ratio_ok = d_min <= floor or d_max <= ratio * d_min
    passed = bool(ratio_ok and d_max <= floor) if applicable else True
    return ConvergenceReport(s_values, tuple(dists), gap, applicable, passed)


@dataclass(frozen=True)
class TaskDifference:
    degree_gap_norm: float
    attribute_gap_norm: float


@dataclass(frozen=True)
class TaskGapReport:
    difference: TaskDifference
    predicted_gap: float
    unnormalized_gap: float
    measured_gap: float
    aligned_size: int


def _sorted_alignment(g: Graph) -> np.ndarray:
    return np.lexsort((g.X.mean(axis=1), g.degree))


def task_gap_diagnostic(
    g_t: Graph, g_j: Graph, alignment="identity", s_large: int = 200
) -> TaskGapReport:
    """Degree and attribute differences between two task graphs.

    ``alignment`` is ``"identity"`` (equal sizes required), ``"sorted"``
    (both node sets ordered by degree then feature mean, paired by position,
    truncated to the smaller size) or an index array mapping each node of
    ``g_t`` to its partner in ``g_j``.

    ``predicted_gap`` is ``||sqrt(dhat_t)^T eps + e^T X_j||`` over the aligned
    nodes, with ``e = sqrt(dhat_j) - sqrt(dhat_t)`` and ``eps = X_j - X_t``.
    It uses the unnormalized top eigenvector, so it is compared against
    ``unnormalized_gap`` exactly and against ``measured_gap`` (distance of the
    ``s_large``-step whole-graph prototypes) only up to scale.
    """
    if isinstance(alignment, str):
        if alignment == "identity":
            if g_t.n != g_j.n:
                raise ValueError(
                    f"identity alignment needs equal sizes, got {g_t.n} and {g_j.n}"
                )
            idx_t = idx_j = np.arange(g_t.n)
        elif alignment == "sorted":
            idx_t, idx_j = _sorted_alignment(g_t), _sorted_alignment(g_j)
            m = min(idx_t.size, idx_j.size)
            if idx_t.size != idx_j.size:
                logger.warning(
                    "node counts differ (%d vs %d); truncating alignment to %d",
                    idx_t.size, idx_j.size, m,
                )
            idx_t, idx_j = idx_t[:m], idx_j[:m]
        else:
            raise ValueError(f"unknown alignment {alignment!r}")
    else:
        idx_j = np.asarray(alignment, dtype=np.int64)
        if idx_j.shape != (g_t.n,) or np.unique(idx_j).size != g_t.n:
            raise ValueError("explicit alignment must be a bijection onto g_j's nodes")
        if g_j.n != g_t.n:
            raise ValueError(f"explicit alignment needs equal sizes, got {g_t.n} and {g_j.n}")
        idx_t = np.arange(g_t.n)

    root_t = np.sqrt(g_t.degrees.dhat[idx_t])
    root_j = np.sqrt(g_j.degrees.dhat[idx_j])
    x_t, x_j = g_t.X[idx_t], g_j.X[idx_j]
    e = root_j - root_t
    eps = x_j - x_t
    predicted = float(np.linalg.norm(root_t @ eps + e @ x_j))
    unnormalized = float(np.linalg.norm(root_t @ x_t - root_j @ x_j))
    p_t = build_prototype(g_t, np.arange(g_t.n), s_large).vector
    p_j = build_prototype(g_j, np.arange(g_j.n), s_large).vector
    diff = TaskDifference(float(np.linalg.norm(e)), float(np.linalg.norm(eps)))
    return TaskGapReport(
        diff, predicted, unnormalized, float(np.linalg.norm(p_t - p_j)), int(idx_t.size)
    )
