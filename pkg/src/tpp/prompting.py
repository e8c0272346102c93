"""Per-task graph prompts and classification heads over a frozen backbone."""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass

import numpy as np

from .graph import Graph
from .nn import Adam, SgcBackbone, TrainConfig, cross_entropy_loss, glorot_uniform, softmax

ARTIFACT_MAGIC = b"TPPART1"
_ARTIFACT_HEAD = struct.Struct("<QQQQQQ")
PROMPT_INIT_STD = 0.01


def _readonly(arr) -> np.ndarray:
    out = np.array(arr, dtype=np.float64)
    out.flags.writeable = False
    return out


@dataclass(frozen=True, eq=False)
class GraphPrompt:
    """``k`` feature-space tokens and one projection vector per token."""

    tokens: np.ndarray
    projections: np.ndarray

    def __post_init__(self):
        if self.tokens.ndim != 2 or self.tokens.shape[0] < 1:
            raise ValueError("tokens must be a k x f matrix with k >= 1")
        if self.projections.shape != self.tokens.shape:
            raise ValueError("projections must match the token matrix shape")

    @property
    def k(self) -> int:
        return self.tokens.shape[0]

    @classmethod
    def init(cls, k: int, f: int, rng: np.random.Generator) -> "GraphPrompt":
        return cls(
            rng.normal(0.0, PROMPT_INIT_STD, size=(k, f)),
            rng.normal(0.0, PROMPT_INIT_STD, size=(k, f)),
        )

    @classmethod
    def zeros(cls, k: int, f: int) -> "GraphPrompt":
        return cls(np.zeros((k, f)), np.zeros((k, f)))


def prompt_weights(prompt: GraphPrompt, x: np.ndarray) -> np.ndarray:
    """Token importance scores: softmax over ``w_j . x`` for every row of ``x``."""
    return softmax(np.atleast_2d(x) @ prompt.projections.T)


def apply_prompt(prompt: GraphPrompt, x: np.ndarray) -> np.ndarray:
    """``x + sum_j alpha_j phi_j``; accepts a single vector or a batch of rows."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != prompt.tokens.shape[1]:
        raise ValueError(
            f"feature dim {x.shape[-1]} does not match prompt dim {prompt.tokens.shape[1]}"
        )
    out = np.atleast_2d(x) + prompt_weights(prompt, x) @ prompt.tokens
    return out[0] if x.ndim == 1 else out


def apply_prompt_backward(prompt: GraphPrompt, x: np.ndarray, d_out: np.ndarray):
    """Gradients of a loss w.r.t. tokens and projections given ``d_out`` on ``x_bar``."""
    alpha = prompt_weights(prompt, x)
    d_tokens = alpha.T @ d_out
    d_alpha = d_out @ prompt.tokens.T
    d_logits = alpha * (d_alpha - (alpha * d_alpha).sum(axis=1, keepdims=True))
    return {"tokens": d_tokens, "projections": d_logits.T @ x}


@dataclass(frozen=True, eq=False)
class ClassifierHead:
    """Linear map from embeddings to this task's ``C`` local classes.

    Local class ``c`` corresponds to global id ``class_id_offset + c``.
    """

    weight: np.ndarray
    bias: np.ndarray
    class_id_offset: int = 0

    @property
    def n_classes(self) -> int:
        return self.weight.shape[1]

    def logits(self, h: np.ndarray) -> np.ndarray:
        return h @ self.weight + self.bias


@dataclass(frozen=True, eq=False)
class TaskArtifacts:
    task_id: int
    prompt: GraphPrompt
    head: ClassifierHead

    def __post_init__(self):
        for arr in (self.prompt.tokens, self.prompt.projections, self.head.weight, self.head.bias):
            arr.flags.writeable = False

    @property
    def n_params(self) -> int:
        k, f = self.prompt.tokens.shape
        d, c = self.head.weight.shape
        return 2 * k * f + d * c + c

    def fingerprint(self) -> str:
        return hashlib.sha256(self.to_bytes()).hexdigest()

    def to_bytes(self) -> bytes:
        k, f = self.prompt.tokens.shape
        d, c = self.head.weight.shape
        parts = [ARTIFACT_MAGIC, _ARTIFACT_HEAD.pack(self.task_id, k, f, d, c, self.head.class_id_offset)]
        for arr in (self.prompt.tokens, self.prompt.projections, self.head.weight, self.head.bias):
            parts.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, data: bytes) -> "TaskArtifacts":
        if data[: len(ARTIFACT_MAGIC)] != ARTIFACT_MAGIC:
            raise ValueError("not a task artifact file (bad magic)")
        pos = len(ARTIFACT_MAGIC)
        task_id, k, f, d, c, offset = _ARTIFACT_HEAD.unpack_from(data, pos)
        pos += _ARTIFACT_HEAD.size
        shapes = [(k, f), (k, f), (d, c), (c,)]
        total = pos + 8 * sum(int(np.prod(s)) for s in shapes)
        if len(data) != total:
            raise ValueError(f"artifact file has {len(data)} bytes, expected {total}")
        arrays = []
        for shape in shapes:
            size = int(np.prod(shape))
            arrays.append(np.frombuffer(data, "<f8", size, pos).reshape(shape).copy())
            pos += 8 * size
        tokens, proj, weight, bias = arrays
        return cls(int(task_id), GraphPrompt(tokens, proj), ClassifierHead(weight, bias, int(offset)))


def _local_labels(g: Graph, nodes: np.ndarray, classes) -> np.ndarray:
    if g.labels is None:
        raise ValueError("train nodes must be labeled")
    lookup = {int(c): i for i, c in enumerate(classes)}
    try:
        return np.array([lookup[int(y)] for y in g.labels[nodes]], dtype=np.int64)
    except KeyError as exc:
        raise ValueError(f"train node carries label {exc.args[0]} outside the task classes") from None


def class_mean_head(h: np.ndarray, local: np.ndarray, n_classes: int, offset: int) -> ClassifierHead:
    """Linear head equivalent to a nearest-class-mean readout in embedding space."""
    means = np.stack([h[local == c].mean(axis=0) for c in range(n_classes)])
    return ClassifierHead(2.0 * means.T, -(means**2).sum(axis=1), offset)


def task_objective(g: Graph, nodes, local, params, backbone: SgcBackbone, prompt_on=True, head_on=True):
    """Cross-entropy of the prompted, frozen-backbone classifier and its gradients.

    ``params`` holds ``tokens``, ``projections``, ``weight`` and ``bias``;
    gradients are returned only for the groups switched on.
    """
    prompt = GraphPrompt(params["tokens"], params["projections"])
    weight, bias = params["weight"], params["bias"]
    x = g.X
    h = backbone.forward(g, apply_prompt(prompt, x))
    h_sel = h[nodes]
    loss, d_logits = cross_entropy_loss(h_sel @ weight + bias, local)
    grads = {}
    if head_on:
        grads["weight"] = h_sel.T @ d_logits
        grads["bias"] = d_logits.sum(axis=0)
    if prompt_on:
        d_h = np.zeros_like(h)
        d_h[nodes] = d_logits @ weight.T
        grads.update(apply_prompt_backward(prompt, x, backbone.backward_input(g, d_h)))
    return loss, grads


def train_task(
    g: Graph,
    train_nodes,
    backbone: SgcBackbone,
    cfg: TrainConfig,
    k: int = 3,
    classes=None,
    class_id_offset: int = 0,
    task_id: int = 1,
    prompt_on: bool = True,
    head_on: bool = True,
) -> TaskArtifacts:
    """Fit one task's prompt and head by Adam on cross-entropy over ``train_nodes``.

    Gradients reach the prompt through the frozen backbone; the backbone
    itself is never updated. With ``prompt_on=False`` the tokens stay at zero
    and the projections are not trained; with ``head_on=False`` the head keeps
    its random initialization. With both off the head is a nearest-class-mean
    readout over unprompted embeddings.
    """
    backbone.check_frozen()
    nodes = np.asarray(train_nodes, dtype=np.int64)
    if nodes.size == 0:
        raise ValueError("train_nodes must be nonempty")
    if classes is None:
        if g.labels is None:
            raise ValueError("train nodes must be labeled")
        classes = np.unique(g.labels[nodes])
    local = _local_labels(g, nodes, classes)
    n_classes = len(classes)

    rng = np.random.default_rng(cfg.rng_seed)
    prompt = GraphPrompt.init(k, g.f, rng) if prompt_on else GraphPrompt.zeros(k, g.f)
    weight = glorot_uniform(rng, backbone.out_dim, n_classes)
    bias = np.zeros(n_classes)
    params = {"tokens": prompt.tokens, "projections": prompt.projections, "weight": weight, "bias": bias}

    if not prompt_on and not head_on:
        h = backbone.forward(g)[nodes]
        head = class_mean_head(h, local, n_classes, class_id_offset)
        return TaskArtifacts(task_id, prompt, head)

    opt = Adam.from_config(cfg)
    for _ in range(cfg.epochs):
        _, grads = task_objective(g, nodes, local, params, backbone, prompt_on, head_on)
        opt.step(params, grads)
        backbone.check_frozen()
    return TaskArtifacts(
        task_id,
        GraphPrompt(params["tokens"].copy(), params["projections"].copy()),
        ClassifierHead(params["weight"].copy(), params["bias"].copy(), class_id_offset),
    )


def task_logits(g: Graph, nodes, artifacts: TaskArtifacts, backbone: SgcBackbone) -> np.ndarray:
    nodes = np.asarray(nodes, dtype=np.int64)
    h = backbone.forward(g, apply_prompt(artifacts.prompt, g.X))
    return artifacts.head.logits(h[nodes])


def classify(g: Graph, test_nodes, artifacts: TaskArtifacts, backbone: SgcBackbone) -> np.ndarray:
    """Global class id per test node; ties break to the smaller id."""
    logits = task_logits(g, test_nodes, artifacts, backbone)
    return artifacts.head.class_id_offset + np.argmax(logits, axis=1)
