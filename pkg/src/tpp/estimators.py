"""Estimator-style wrappers so the pipeline composes with scikit-learn tooling.

Both estimators learn incrementally: ``partial_fit`` enrolls one task and
``predict`` answers for a node set of a (possibly unseen) graph.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .graph import AugmentationParams, Graph
from .nn import SgcBackbone, TrainConfig, pretrain_backbone, softmax
from .profiling import (
    PrototypePool,
    attribute_prototype,
    build_prototype,
    predict_task,
)
from .prompting import TaskArtifacts, classify, task_logits, train_task
from .validation import check_graph, check_nodes

PROFILING_MODES = ("laplacian", "attribute")


def derive_seed(*keys: int) -> int:
    return int(np.random.SeedSequence([int(k) for k in keys]).generate_state(1)[0])


class TaskProfiler(BaseEstimator):
    """Nearest-prototype task identifier.

    Parameters
    ----------
    n_steps : int, default=3
        Laplacian smoothing steps used to build each prototype.
    mode : {"laplacian", "attribute"}, default="laplacian"
        ``"attribute"`` averages raw node attributes instead, with no smoothing
        and no degree correction.
    isolated_seed : int, default=0
        Seed for attaching isolated nodes before smoothing.

    Attributes
    ----------
    pool_ : PrototypePool
        One prototype per enrolled task, ids ``1..T``.
    n_features_in_ : int
    """

    def __init__(self, n_steps=3, mode="laplacian", isolated_seed=0):
        self.n_steps = n_steps
        self.mode = mode
        self.isolated_seed = isolated_seed

    def _prototype(self, graph, nodes, task_id):
        if self.mode == "laplacian":
            return build_prototype(graph, nodes, self.n_steps, task_id, self.isolated_seed)
        if self.mode == "attribute":
            return attribute_prototype(graph, nodes, task_id)
        raise ValueError(f"mode must be one of {PROFILING_MODES}, got {self.mode!r}")

    def transform(self, graph: Graph, nodes) -> np.ndarray:
        """Prototype vector of ``nodes`` in ``graph``."""
        check_graph(graph)
        return self._prototype(graph, check_nodes(nodes, graph.n), 0).vector

    def partial_fit(self, graph: Graph, nodes) -> "TaskProfiler":
        check_graph(graph)
        nodes = check_nodes(nodes, graph.n)
        if not hasattr(self, "pool_"):
            self.pool_ = PrototypePool()
            self.n_features_in_ = graph.f
        elif graph.f != self.n_features_in_:
            raise ValueError(f"graph has {graph.f} features, expected {self.n_features_in_}")
        self.pool_.add(self._prototype(graph, nodes, len(self.pool_) + 1))
        return self

    def fit(self, tasks) -> "TaskProfiler":
        """Enroll a sequence of ``(graph, nodes)`` pairs from scratch."""
        for attr in ("pool_", "n_features_in_"):
            self.__dict__.pop(attr, None)
        for graph, nodes in tasks:
            self.partial_fit(graph, nodes)
        return self

    def predict(self, graph: Graph, nodes) -> int:
        check_is_fitted(self, "pool_")
        return predict_task(self.pool_, self.transform(graph, nodes))


class TPPClassifier(BaseEstimator):
    """Task profiling plus per-task graph prompts over a frozen backbone.

    The first ``partial_fit`` call contrastively pretrains the backbone on
    that task's graph. Every call then enrolls the task prototype and trains
    a prompt and head for it. ``predict`` first identifies the task of the
    queried node set, then classifies inside that task's classes. Predicted
    labels are global ids: a task's local class ``c`` maps to the number of
    classes in earlier tasks plus ``c``.

    Parameters
    ----------
    n_steps, n_tokens, hidden_dim, steps_per_layer : int
        Smoothing steps, prompt tokens per task, backbone width and
        propagations per backbone stage.
    lr, epochs : float, int
        Adam learning rate and epochs for per-task prompt training.
    pretrain_lr, pretrain_epochs, temperature : float, int, float
        Contrastive pretraining settings.
    edge_removal_prob, attr_mask_prob : float
        Corruption strengths for the contrastive view.
    fresh_views : bool
        Draw a new corrupted view every pretraining epoch.
    prompt_on, head_on, task_id_on : bool
        Component switches for ablations.
    profiling : {"laplacian", "attribute"}
    random_state : int
    """

    def __init__(
        self,
        n_steps=3,
        n_tokens=3,
        hidden_dim=64,
        steps_per_layer=1,
        lr=0.005,
        epochs=200,
        pretrain_lr=0.001,
        pretrain_epochs=200,
        temperature=0.5,
        edge_removal_prob=0.2,
        attr_mask_prob=0.3,
        fresh_views=True,
        prompt_on=True,
        head_on=True,
        task_id_on=True,
        profiling="laplacian",
        random_state=0,
    ):
        self.n_steps = n_steps
        self.n_tokens = n_tokens
        self.hidden_dim = hidden_dim
        self.steps_per_layer = steps_per_layer
        self.lr = lr
        self.epochs = epochs
        self.pretrain_lr = pretrain_lr
        self.pretrain_epochs = pretrain_epochs
        self.temperature = temperature
        self.edge_removal_prob = edge_removal_prob
        self.attr_mask_prob = attr_mask_prob
        self.fresh_views = fresh_views
        self.prompt_on = prompt_on
        self.head_on = head_on
        self.task_id_on = task_id_on
        self.profiling = profiling
        self.random_state = random_state

    def _pretrain(self, graph: Graph) -> SgcBackbone:
        cfg = TrainConfig(
            learning_rate=self.pretrain_lr,
            epochs=self.pretrain_epochs,
            temperature=self.temperature,
            rng_seed=derive_seed(self.random_state, 0),
            fresh_views=self.fresh_views,
        )
        aug = AugmentationParams(
            self.edge_removal_prob, self.attr_mask_prob, derive_seed(self.random_state, 0, 1)
        )
        return pretrain_backbone(graph, aug, cfg, self.hidden_dim, self.steps_per_layer)

    def partial_fit(self, graph: Graph, train_nodes, classes=None, backbone=None) -> "TPPClassifier":
        """Learn one more task. ``backbone`` optionally supplies a frozen pretrained model."""
        check_graph(graph, require_labels=True)
        nodes = check_nodes(train_nodes, graph.n)
        if classes is None:
            classes = tuple(int(c) for c in np.unique(graph.labels[nodes]))
        if not hasattr(self, "artifacts_"):
            self.backbone_ = backbone if backbone is not None else self._pretrain(graph)
            self.profiler_ = TaskProfiler(self.n_steps, self.profiling)
            self.artifacts_: list[TaskArtifacts] = []
            self.class_offsets_: list[int] = []
            self.n_classes_ = 0
            self.n_features_in_ = graph.f
        task_id = len(self.artifacts_) + 1
        self.profiler_.partial_fit(graph, nodes)
        cfg = TrainConfig(learning_rate=self.lr, epochs=self.epochs, rng_seed=derive_seed(self.random_state, task_id))
        art = train_task(
            graph, nodes, self.backbone_, cfg,
            k=self.n_tokens, classes=classes, class_id_offset=self.n_classes_,
            task_id=task_id, prompt_on=self.prompt_on, head_on=self.head_on,
        )
        self.artifacts_.append(art)
        self.class_offsets_.append(self.n_classes_)
        self.n_classes_ += len(classes)
        return self

    def fit(self, tasks) -> "TPPClassifier":
        """Learn ``(graph, train_nodes[, classes])`` tuples in order, from scratch."""
        for attr in ("artifacts_", "backbone_", "profiler_", "class_offsets_", "n_classes_", "n_features_in_"):
            self.__dict__.pop(attr, None)
        for item in tasks:
            self.partial_fit(*item)
        return self

    @property
    def n_tasks_(self) -> int:
        check_is_fitted(self, "artifacts_")
        return len(self.artifacts_)

    def predict_task(self, graph: Graph, nodes) -> int:
        check_is_fitted(self, "artifacts_")
        return self.profiler_.predict(graph, nodes)

    def predict(self, graph: Graph, nodes, task_id=None) -> np.ndarray:
        """Global class ids for ``nodes``.

        With task identification on, the whole node set is routed to one task
        (``task_id`` if given, otherwise predicted). With it off, every learned
        task scores the nodes and the class with the highest softmax
        probability across all tasks wins.
        """
        check_is_fitted(self, "artifacts_")
        check_graph(graph)
        nodes = check_nodes(nodes, graph.n)
        if self.task_id_on or task_id is not None:
            if task_id is None:
                task_id = self.predict_task(graph, nodes)
            return classify(graph, nodes, self.artifacts_[task_id - 1], self.backbone_)
        probs = np.concatenate(
            [softmax(task_logits(graph, nodes, art, self.backbone_)) for art in self.artifacts_],
            axis=1,
        )
        return np.argmax(probs, axis=1)

    def score(self, graph: Graph, nodes, y) -> float:
        return float(np.mean(self.predict(graph, nodes) == np.asarray(y)))
