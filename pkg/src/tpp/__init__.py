"""Graph class-incremental learning with task profiling and graph prompts."""

from .estimators import TaskProfiler, TPPClassifier
from .graph import (
    AugmentationParams,
    Graph,
    augment_contrastive,
    connect_isolated_nodes,
    induced_subgraph,
    smooth_features,
)
from .harness import RunResult, compute_metrics, run_ablation, run_baseline, run_tpp
from .profiling import PrototypePool, TaskPrototype, build_prototype, limit_prototype, predict_task

__all__ = [
    "AugmentationParams",
    "Graph",
    "PrototypePool",
    "RunResult",
    "TPPClassifier",
    "TaskProfiler",
    "TaskPrototype",
    "augment_contrastive",
    "build_prototype",
    "compute_metrics",
    "connect_isolated_nodes",
    "induced_subgraph",
    "limit_prototype",
    "predict_task",
    "run_ablation",
    "run_baseline",
    "run_tpp",
    "smooth_features",
]
