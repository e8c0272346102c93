"""Continual-learning protocol: accuracy matrices, AA/AF, TPP runs, baselines, ablations."""

from __future__ import annotations

import dataclasses
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import RunConfig
from .datasets import DatasetBundle, generate_sbm_stream, load_bundle
from .estimators import TaskProfiler, TPPClassifier, derive_seed
from .graph import Graph, disjoint_union, induced_subgraph
from .io_utils import atomic_write_text
from .nn import Adam, SgcBackbone, TrainConfig, cross_entropy_loss, glorot_uniform
from .stream import TaskStream

logger = logging.getLogger(__name__)

BASELINE_KINDS = ("fine_tune", "joint", "per_task_models", "attribute_profiling_tpp")


def stream_from_config(cfg: RunConfig) -> TaskStream:
    if cfg.bundle:
        ordering = None if cfg.ordering == "as_listed" else cfg.ordering
        return load_bundle(DatasetBundle.from_dir(cfg.bundle), cfg.seed, ordering)
    stream, _ = generate_sbm_stream(dataclasses.replace(cfg.sbm, ordering=cfg.ordering), cfg.seed)
    return stream


def accuracy(pred, truth, balanced: bool = False) -> float:
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if not balanced:
        return float(np.mean(pred == truth))
    return float(np.mean([np.mean(pred[truth == c] == c) for c in np.unique(truth)]))


def compute_metrics(m) -> tuple[float, float | None]:
    """Average accuracy over the last row and average forgetting.

    ``AF = sum_{j<T} (M[T,j] - M[j,j]) / (T-1)``; ``None`` when ``T == 1``.
    """
    m = np.asarray(m, dtype=np.float64)
    t = m.shape[0]
    if m.shape != (t, t) or t == 0:
        raise ValueError(f"accuracy matrix must be square and nonempty, got {m.shape}")
    lower = m[np.tril_indices(t)]
    if np.isnan(lower).any():
        raise ValueError("accuracy matrix must be populated on and below the diagonal")
    aa = float(m[t - 1].sum() / t)
    if t == 1:
        return aa, None
    af = float(sum(m[t - 1, j] - m[j, j] for j in range(t - 1)) / (t - 1))
    return aa, af


def _nan_to_none(rows):
    return [[None if np.isnan(v) else float(v) for v in row] for row in rows]


@dataclass(eq=False)
class RunResult:
    kind: str
    accuracy: np.ndarray
    aa: float
    af: float | None
    task_id_predictions: np.ndarray
    config: dict
    seed: int
    timings: dict = field(default_factory=dict)

    @property
    def n_tasks(self) -> int:
        return self.accuracy.shape[0]

    @property
    def task_id_accuracy(self) -> list[float | None]:
        """Per task ``j``: fraction of rows ``t >= j`` that routed task ``j`` correctly."""
        p = self.task_id_predictions
        out = []
        for j in range(self.n_tasks):
            col = p[j:, j]
            out.append(None if (col == 0).all() else float(np.mean(col == j + 1)))
        return out

    @property
    def overall_task_id_accuracy(self) -> float | None:
        p = self.task_id_predictions[np.tril_indices(self.n_tasks)]
        if (p == 0).all():
            return None
        truth = np.tril_indices(self.n_tasks)[1] + 1
        return float(np.mean(p == truth))

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "seed": self.seed,
            "n_tasks": self.n_tasks,
            "aa": self.aa,
            "af": self.af,
            "accuracy_matrix": _nan_to_none(self.accuracy),
            "task_id_predictions": self.task_id_predictions.tolist(),
            "task_id_accuracy": self.task_id_accuracy,
            "config": self.config,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def to_csv(self) -> str:
        lines = ["row," + ",".join(f"task_{j + 1}" for j in range(self.n_tasks))]
        for t, row in enumerate(self.accuracy):
            lines.append(f"{t + 1}," + ",".join("" if np.isnan(v) else repr(float(v)) for v in row))
        return "\n".join(lines) + "\n"

    def save(self, path) -> None:
        """Write ``path`` (JSON), the matrix as ``.csv`` and wall-clock as ``.timings.json``.

        Timings live in the sidecar so the main file is byte-reproducible.
        """
        path = Path(path)
        atomic_write_text(path, self.to_json())
        atomic_write_text(path.with_suffix(".csv"), self.to_csv())
        atomic_write_text(
            path.with_suffix(".timings.json"), json.dumps(self.timings, indent=2, sort_keys=True) + "\n"
        )

    @classmethod
    def from_dict(cls, data: dict) -> "RunResult":
        m = np.array(
            [[np.nan if v is None else v for v in row] for row in data["accuracy_matrix"]],
            dtype=np.float64,
        )
        aa, af = compute_metrics(m)
        if aa != data["aa"] or af != data["af"]:
            raise ValueError(f"stored AA/AF ({data['aa']}, {data['af']}) disagree with matrix ({aa}, {af})")
        return cls(
            data["kind"], m, aa, af,
            np.array(data["task_id_predictions"], dtype=np.int64),
            data["config"], int(data["seed"]),
        )

    @classmethod
    def load(cls, path) -> "RunResult":
        path = Path(path)
        result = cls.from_dict(json.loads(path.read_text()))
        timings = path.with_suffix(".timings.json")
        if timings.exists():
            result.timings = json.loads(timings.read_text())
        return result


def make_estimator(cfg: RunConfig, profiling: str = "laplacian", **overrides) -> TPPClassifier:
    params = dict(
        n_steps=cfg.smoothing_steps,
        n_tokens=cfg.n_tokens,
        hidden_dim=cfg.hidden_dim,
        steps_per_layer=cfg.steps_per_layer,
        lr=cfg.task_lr,
        epochs=cfg.task_epochs,
        pretrain_lr=cfg.pretrain_lr,
        pretrain_epochs=cfg.pretrain_epochs,
        temperature=cfg.temperature,
        edge_removal_prob=cfg.edge_removal_prob,
        attr_mask_prob=cfg.attr_mask_prob,
        fresh_views=cfg.fresh_views,
        prompt_on=cfg.prompt_on,
        head_on=cfg.head_on,
        task_id_on=cfg.task_id_on,
        profiling=profiling,
        random_state=cfg.seed,
    )
    params.update(overrides)
    return TPPClassifier(**params)


def _empty_matrices(t: int):
    m = np.full((t, t), np.nan)
    return m, np.zeros((t, t), dtype=np.int64)


def _run_prompted(stream: TaskStream, cfg: RunConfig, kind: str, profiling: str) -> RunResult:
    stream.validate()
    model = make_estimator(cfg, profiling)
    m, preds = _empty_matrices(len(stream))
    timings = {"pretrain": 0.0, "prototype_and_train": [], "evaluate": []}
    start = time.perf_counter()
    backbone = model._pretrain(stream.tasks[0].graph)
    timings["pretrain"] = time.perf_counter() - start
    for t, task in enumerate(stream):
        start = time.perf_counter()
        model.partial_fit(task.graph, task.train, task.classes, backbone=backbone)
        timings["prototype_and_train"].append(time.perf_counter() - start)
        start = time.perf_counter()
        for j, old in enumerate(stream.tasks[: t + 1]):
            truth = old.global_labels(old.test)
            if cfg.task_id_on:
                routed = model.predict_task(old.graph, old.test)
                preds[t, j] = routed
                y = model.predict(old.graph, old.test, task_id=routed)
            else:
                y = model.predict(old.graph, old.test)
            m[t, j] = accuracy(y, truth, cfg.balanced_accuracy)
        timings["evaluate"].append(time.perf_counter() - start)
        logger.info("%s: learned task %d, row %s", kind, t + 1, np.round(m[t, : t + 1], 3))
    # every artifact learned so far must be untouched by later tasks
    model.backbone_.check_frozen()
    aa, af = compute_metrics(m)
    return RunResult(kind, m, aa, af, preds, cfg.to_dict(), cfg.seed, timings)


def run_ablation(stream: TaskStream, cfg: RunConfig, prompt_on=None, head_on=None, task_id_on=None) -> RunResult:
    """TPP with selected components disabled. Flags left as ``None`` keep ``cfg``'s value."""
    flags = {"prompt_on": prompt_on, "head_on": head_on, "task_id_on": task_id_on}
    cfg = cfg.replace(**{k: v for k, v in flags.items() if v is not None})
    kind = "tpp" if (cfg.prompt_on and cfg.head_on and cfg.task_id_on) else "ablation"
    return _run_prompted(stream, cfg, kind, "laplacian")


def run_tpp(stream: TaskStream, cfg: RunConfig) -> RunResult:
    """Full pipeline: pretrain on task 1, then per task enroll a prototype and train a prompt.

    After each task ``t`` every task ``j <= t`` is re-evaluated through the
    inference path (predict the task from its test-node prototype, then
    classify within the predicted task), filling row ``t`` of the matrix.
    """
    return run_ablation(stream, cfg.replace(prompt_on=True, head_on=True, task_id_on=True))


class SupervisedSgc:
    """Trainable SGC backbone with a linear head, for the non-prompted baselines."""

    def __init__(self, f: int, d: int, n_out: int, seed: int, steps_per_layer: int = 1):
        rng = np.random.default_rng(seed)
        self.backbone = SgcBackbone.init(f, d, rng, steps_per_layer)
        self.weight = glorot_uniform(rng, d, n_out)
        self.bias = np.zeros(n_out)

    def params(self):
        return {**self.backbone.params(), "weight": self.weight, "bias": self.bias}

    def logits(self, g: Graph, nodes, n_active=None) -> np.ndarray:
        out = self.backbone.forward(g)[nodes] @ self.weight + self.bias
        if n_active is not None:
            out = out[:, :n_active]
        return out

    def loss_and_grads(self, g: Graph, nodes, labels, n_active=None):
        """Cross-entropy over the first ``n_active`` outputs and gradients for every weight."""
        n_active = self.weight.shape[1] if n_active is None else n_active
        h = self.backbone.forward(g)
        h_sel = h[nodes]
        logits = h_sel @ self.weight[:, :n_active] + self.bias[:n_active]
        loss, d_logits = cross_entropy_loss(logits, labels)
        d_w = np.zeros_like(self.weight)
        d_w[:, :n_active] = h_sel.T @ d_logits
        d_b = np.zeros_like(self.bias)
        d_b[:n_active] = d_logits.sum(axis=0)
        d_h = np.zeros_like(h)
        d_h[nodes] = d_logits @ self.weight[:, :n_active].T
        grads = self.backbone.backward_weights(g, None, d_h)
        grads.update(weight=d_w, bias=d_b)
        return loss, grads

    def fit(self, g: Graph, nodes, labels, cfg: TrainConfig, n_active=None) -> "SupervisedSgc":
        nodes = np.asarray(nodes, dtype=np.int64)
        opt = Adam.from_config(cfg)
        params = self.params()
        for _ in range(cfg.epochs):
            _, grads = self.loss_and_grads(g, nodes, labels, n_active)
            opt.step(params, grads)
        return self

    def predict(self, g: Graph, nodes, n_active=None) -> np.ndarray:
        return np.argmax(self.logits(g, nodes, n_active), axis=1)


def _task_cfg(cfg: RunConfig, *keys) -> TrainConfig:
    return TrainConfig(learning_rate=cfg.task_lr, epochs=cfg.task_epochs, rng_seed=derive_seed(cfg.seed, *keys))


def _run_fine_tune(stream: TaskStream, cfg: RunConfig) -> RunResult:
    total = stream.n_classes
    f = stream.tasks[0].graph.f
    model = SupervisedSgc(f, cfg.hidden_dim, total, derive_seed(cfg.seed, 101), cfg.steps_per_layer)
    m, preds = _empty_matrices(len(stream))
    timings = {"train": [], "evaluate": []}
    for t, task in enumerate(stream):
        start = time.perf_counter()
        seen = task.class_offset + task.n_classes
        model.fit(task.graph, task.train, task.global_labels(task.train), _task_cfg(cfg, 101, t + 1), seen)
        timings["train"].append(time.perf_counter() - start)
        start = time.perf_counter()
        for j, old in enumerate(stream.tasks[: t + 1]):
            y = model.predict(old.graph, old.test, seen)
            m[t, j] = accuracy(y, old.global_labels(old.test), cfg.balanced_accuracy)
        timings["evaluate"].append(time.perf_counter() - start)
    aa, af = compute_metrics(m)
    return RunResult("fine_tune", m, aa, af, preds, cfg.to_dict(), cfg.seed, timings)


def _union_graph(stream: TaskStream, upto: int):
    """Graph over tasks ``1..upto`` and each task's node offset array inside it."""
    tasks = stream.tasks[:upto]
    if stream.full_graph is not None and all(t.node_ids is not None for t in tasks):
        ids = np.concatenate([t.node_ids for t in tasks])
        g, _ = induced_subgraph(stream.full_graph, ids)
        starts = np.cumsum([0] + [t.graph.n for t in tasks])[:-1]
        return g, starts
    return disjoint_union([t.graph for t in tasks])


def _run_joint(stream: TaskStream, cfg: RunConfig) -> RunResult:
    f = stream.tasks[0].graph.f
    m, preds = _empty_matrices(len(stream))
    timings = {"train": [], "evaluate": []}
    for t in range(len(stream)):
        tasks = stream.tasks[: t + 1]
        g, starts = _union_graph(stream, t + 1)
        train = np.concatenate([s + task.train for s, task in zip(starts, tasks)])
        labels = np.concatenate([task.global_labels(task.train) for task in tasks])
        seen = tasks[-1].class_offset + tasks[-1].n_classes
        start = time.perf_counter()
        model = SupervisedSgc(f, cfg.hidden_dim, seen, derive_seed(cfg.seed, 202, t + 1), cfg.steps_per_layer)
        model.fit(g, train, labels, _task_cfg(cfg, 202, t + 1))
        timings["train"].append(time.perf_counter() - start)
        start = time.perf_counter()
        for j, (s, old) in enumerate(zip(starts, tasks)):
            logits = model.logits(g, s + old.test)
            if cfg.oracle_task_ids:
                lo, hi = old.class_offset, old.class_offset + old.n_classes
                y = lo + np.argmax(logits[:, lo:hi], axis=1)
                preds[t, j] = j + 1
            else:
                y = np.argmax(logits, axis=1)
            m[t, j] = accuracy(y, old.global_labels(old.test), cfg.balanced_accuracy)
        timings["evaluate"].append(time.perf_counter() - start)
    aa, af = compute_metrics(m)
    kind = "oracle_joint" if cfg.oracle_task_ids else "joint"
    return RunResult(kind, m, aa, af, preds, cfg.to_dict(), cfg.seed, timings)


def _run_per_task_models(stream: TaskStream, cfg: RunConfig) -> RunResult:
    profiler = TaskProfiler(cfg.smoothing_steps)
    models = []
    m, preds = _empty_matrices(len(stream))
    timings = {"train": [], "evaluate": []}
    for t, task in enumerate(stream):
        start = time.perf_counter()
        profiler.partial_fit(task.graph, task.train)
        local = task.global_labels(task.train) - task.class_offset
        model = SupervisedSgc(task.graph.f, cfg.hidden_dim, task.n_classes, derive_seed(cfg.seed, 303, t + 1), cfg.steps_per_layer)
        models.append(model.fit(task.graph, task.train, local, _task_cfg(cfg, 303, t + 1)))
        timings["train"].append(time.perf_counter() - start)
        start = time.perf_counter()
        for j, old in enumerate(stream.tasks[: t + 1]):
            routed = profiler.predict(old.graph, old.test)
            preds[t, j] = routed
            y = stream.tasks[routed - 1].class_offset + models[routed - 1].predict(old.graph, old.test)
            m[t, j] = accuracy(y, old.global_labels(old.test), cfg.balanced_accuracy)
        timings["evaluate"].append(time.perf_counter() - start)
    aa, af = compute_metrics(m)
    return RunResult("per_task_models", m, aa, af, preds, cfg.to_dict(), cfg.seed, timings)


def run_baseline(stream: TaskStream, kind: str, cfg: RunConfig) -> RunResult:
    stream.validate()
    if kind == "fine_tune":
        return _run_fine_tune(stream, cfg)
    if kind == "joint":
        return _run_joint(stream, cfg)
    if kind == "per_task_models":
        return _run_per_task_models(stream, cfg)
    if kind == "attribute_profiling_tpp":
        full = cfg.replace(prompt_on=True, head_on=True, task_id_on=True)
        return _run_prompted(stream, full, kind, "attribute")
    raise ValueError(f"kind must be one of {BASELINE_KINDS}, got {kind!r}")


@dataclass(frozen=True)
class ProfileReport:
    mode: str
    predictions: tuple[int, ...]

    @property
    def accuracy(self) -> float:
        return float(np.mean(np.array(self.predictions) == np.arange(1, len(self.predictions) + 1)))


def profile_tasks(stream: TaskStream, n_steps: int = 3, mode: str = "laplacian") -> ProfileReport:
    """Enroll every task's train prototype, then route each task's test set."""
    profiler = TaskProfiler(n_steps, mode).fit((t.graph, t.train) for t in stream)
    return ProfileReport(mode, tuple(profiler.predict(t.graph, t.test) for t in stream))


def bench(cfg: RunConfig, nodes_per_class=(50, 100, 200, 400)) -> list[dict]:
    """Per-phase wall-clock for growing graph sizes; no absolute targets asserted."""
    rows = []
    for size in nodes_per_class:
        spec = dataclasses.replace(cfg.sbm, nodes_per_class=size)
        stream, _ = generate_sbm_stream(spec, cfg.seed)
        model = make_estimator(cfg)
        g1 = stream.tasks[0].graph
        start = time.perf_counter()
        backbone = model._pretrain(g1)
        rows.append(dict(phase="pretrain", nodes=g1.n, edges=g1.num_edges, seconds=time.perf_counter() - start))
        per_task = {"prototype": 0.0, "prompt_train": 0.0, "inference": 0.0}
        n_total = e_total = 0
        for task in stream:
            n_total += task.graph.n
            e_total += task.graph.num_edges
            start = time.perf_counter()
            model.partial_fit(task.graph, task.train, task.classes, backbone=backbone)
            per_task["prompt_train"] += time.perf_counter() - start
            start = time.perf_counter()
            model.profiler_.transform(task.graph, task.test)
            per_task["prototype"] += time.perf_counter() - start
            start = time.perf_counter()
            model.predict(task.graph, task.test)
            per_task["inference"] += time.perf_counter() - start
        # prompt_train includes the enrollment prototype; report it net of that
        per_task["prompt_train"] = max(per_task["prompt_train"] - per_task["prototype"], 0.0)
        for phase, secs in per_task.items():
            rows.append(dict(phase=phase, nodes=n_total, edges=e_total, seconds=secs))
    return rows
