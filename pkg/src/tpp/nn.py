"""Dense numerical kernel: losses, Adam, the SGC backbone and contrastive pretraining.

Every trainable op comes with a hand-derived backward pass. The model is a
short linear chain, so no general autodiff machinery is needed; the test
suite checks each backward against central finite differences.
"""

from __future__ import annotations

import hashlib
import logging
import struct
from dataclasses import dataclass, field

import numpy as np

from .graph import AugmentationParams, Graph, augment_contrastive, propagate

logger = logging.getLogger(__name__)

BACKBONE_MAGIC = b"TPPBKB1"
_BACKBONE_HEAD = struct.Struct("<QQQ")


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.005
    epochs: int = 200
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    temperature: float = 0.5
    rng_seed: int = 0
    # draw a new corrupted view every pretraining epoch instead of one fixed view
    fresh_views: bool = True

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


class Adam:
    """Adam with bias correction over a dict of named parameter arrays."""

    def __init__(self, lr=0.001, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t = 0

    @classmethod
    def from_config(cls, cfg: TrainConfig) -> "Adam":
        return cls(cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        """Update ``params`` in place from ``grads`` (keys absent from grads are skipped)."""
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for name, g in grads.items():
            p = params[name]
            if g.shape != p.shape:
                raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape} for {name}")
            if name not in self.m:
                self.m[name] = np.zeros_like(p)
                self.v[name] = np.zeros_like(p)
            m, v = self.m[name], self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    ex = np.exp(shifted)
    return ex / ex.sum(axis=-1, keepdims=True)


def cross_entropy_loss(logits: np.ndarray, labels) -> tuple[float, np.ndarray]:
    """Mean softmax cross-entropy and its gradient w.r.t. ``logits``."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    n, c = logits.shape
    if labels.shape != (n,) or (n and (labels.min() < 0 or labels.max() >= c)):
        raise ValueError(f"labels must be {n} ints in [0, {c})")
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1))
    log_p = shifted - log_z[:, None]
    rows = np.arange(n)
    loss = -log_p[rows, labels].mean()
    grad = np.exp(log_p)
    grad[rows, labels] -= 1.0
    return float(loss), grad / n


def _row_normalize(z: np.ndarray, eps: float = 0.0) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    norms = np.linalg.norm(z, axis=1)
    if eps <= 0 and np.any(norms == 0):
        raise ValueError("cosine similarity undefined for a zero-norm embedding row")
    clamped = norms < eps
    norms = np.where(clamped, eps, norms)
    return z / norms[:, None], norms, clamped


def _ntxent_direction(s_cross: np.ndarray, s_self: np.ndarray):
    """Per-anchor losses for anchors in one view and gradients of their sum.

    Row ``i`` of ``s_cross`` holds similarities to the other view (positive on
    the diagonal); row ``i`` of ``s_self`` holds intra-view similarities whose
    diagonal is excluded.
    """
    n = s_cross.shape[0]
    self_masked = s_self.copy()
    np.fill_diagonal(self_masked, -np.inf)
    both = np.concatenate([s_cross, self_masked], axis=1)
    top = both.max(axis=1, keepdims=True)
    ex = np.exp(both - top)
    log_z = np.log(ex.sum(axis=1)) + top[:, 0]
    losses = log_z - np.diag(s_cross)
    prob = ex / ex.sum(axis=1, keepdims=True)
    g_cross = prob[:, :n].copy()
    g_cross[np.arange(n), np.arange(n)] -= 1.0
    g_self = prob[:, n:]
    return losses, g_cross, g_self


def ntxent_loss(z1: np.ndarray, z2: np.ndarray, tau: float, eps: float = 0.0):
    """Symmetric NT-Xent over ``2n`` anchors with cosine similarity.

    Returns ``(loss, grad_z1, grad_z2)``. Negatives for an anchor are every
    other node in both views. With ``eps > 0`` row norms are floored at
    ``eps`` instead of raising on a zero row.
    """
    z1 = np.asarray(z1, dtype=np.float64)
    z2 = np.asarray(z2, dtype=np.float64)
    if z1.shape != z2.shape or z1.ndim != 2:
        raise ValueError(f"views must share a 2-D shape, got {z1.shape} and {z2.shape}")
    n = z1.shape[0]
    if n < 2:
        raise ValueError("NT-Xent needs at least two nodes")
    u, nu, cu = _row_normalize(z1, eps)
    v, nv, cv = _row_normalize(z2, eps)
    s_uv = u @ v.T / tau
    s_uu = u @ u.T / tau
    s_vv = v @ v.T / tau
    l1, g_uv, g_uu = _ntxent_direction(s_uv, s_uu)
    l2, g_vu, g_vv = _ntxent_direction(s_uv.T, s_vv)
    scale = 1.0 / (2 * n)
    loss = (l1.sum() + l2.sum()) * scale

    d_uv = (g_uv + g_vu.T) * scale
    d_uu = g_uu * scale
    d_vv = g_vv * scale
    du = (d_uv @ v + (d_uu + d_uu.T) @ u) / tau
    dv = (d_uv.T @ u + (d_vv + d_vv.T) @ v) / tau
    # back through row normalization
    # floored rows are a plain scaling, so they skip the projection
    du = (du - ~cu[:, None] * u * (u * du).sum(axis=1, keepdims=True)) / nu[:, None]
    dv = (dv - ~cv[:, None] * v * (v * dv).sum(axis=1, keepdims=True)) / nv[:, None]
    return float(loss), du, dv


@dataclass(eq=False)
class SgcBackbone:
    """Two (propagate, linear) stages without a nonlinearity in between."""

    w1: np.ndarray
    w2: np.ndarray
    steps_per_layer: int = 1
    frozen: bool = False
    loss_history: tuple = field(default=(), repr=False)
    _frozen_hash: str | None = field(default=None, repr=False)

    @classmethod
    def init(cls, f: int, d: int, rng, steps_per_layer: int = 1) -> "SgcBackbone":
        rng = np.random.default_rng(rng)
        return cls(glorot_uniform(rng, f, d), glorot_uniform(rng, d, d), steps_per_layer)

    @property
    def in_dim(self) -> int:
        return self.w1.shape[0]

    @property
    def out_dim(self) -> int:
        return self.w2.shape[1]

    def params(self) -> dict[str, np.ndarray]:
        return {"w1": self.w1, "w2": self.w2}

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(struct.pack("<Q", self.steps_per_layer))
        for w in (self.w1, self.w2):
            h.update(np.ascontiguousarray(w, dtype="<f8").tobytes())
        return h.hexdigest()

    def freeze(self) -> "SgcBackbone":
        self.w1.flags.writeable = False
        self.w2.flags.writeable = False
        self.frozen = True
        self._frozen_hash = self.fingerprint()
        return self

    def check_frozen(self) -> None:
        if not self.frozen:
            raise RuntimeError("backbone is not frozen")
        if self.fingerprint() != self._frozen_hash:
            raise RuntimeError("frozen backbone weights changed")

    def _input(self, g: Graph, x) -> np.ndarray:
        x = g.X if x is None else np.asarray(x, dtype=np.float64)
        if x.shape != (g.n, self.in_dim):
            raise ValueError(f"input must have shape ({g.n}, {self.in_dim}), got {x.shape}")
        return x

    def forward(self, g: Graph, x=None) -> np.ndarray:
        x = self._input(g, x)
        k = self.steps_per_layer
        return propagate(g, propagate(g, x, k) @ self.w1, k) @ self.w2

    def backward_input(self, g: Graph, d_out: np.ndarray) -> np.ndarray:
        """Gradient w.r.t. the input features. The operator is symmetric."""
        k = self.steps_per_layer
        return propagate(g, propagate(g, d_out @ self.w2.T, k) @ self.w1.T, k)

    def backward_weights(self, g: Graph, x, d_out: np.ndarray) -> dict[str, np.ndarray]:
        x = self._input(g, x)
        k = self.steps_per_layer
        a1 = propagate(g, x, k)
        a2 = propagate(g, a1 @ self.w1, k)
        d_b1 = propagate(g, d_out @ self.w2.T, k)
        return {"w1": a1.T @ d_b1, "w2": a2.T @ d_out}

    def to_bytes(self) -> bytes:
        f, d = self.w1.shape
        return b"".join([
            BACKBONE_MAGIC,
            _BACKBONE_HEAD.pack(f, d, self.steps_per_layer),
            np.ascontiguousarray(self.w1, dtype="<f8").tobytes(),
            np.ascontiguousarray(self.w2, dtype="<f8").tobytes(),
        ])

    @classmethod
    def from_bytes(cls, data: bytes, frozen: bool = True) -> "SgcBackbone":
        if data[: len(BACKBONE_MAGIC)] != BACKBONE_MAGIC:
            raise ValueError("not a backbone file (bad magic)")
        pos = len(BACKBONE_MAGIC)
        f, d, k = _BACKBONE_HEAD.unpack_from(data, pos)
        pos += _BACKBONE_HEAD.size
        expected = pos + 8 * (f * d + d * d)
        if len(data) != expected:
            raise ValueError(f"backbone file has {len(data)} bytes, expected {expected}")
        w1 = np.frombuffer(data, "<f8", f * d, pos).reshape(f, d).astype(np.float64)
        w2 = np.frombuffer(data, "<f8", d * d, pos + 8 * f * d).reshape(d, d).astype(np.float64)
        bb = cls(w1, w2, int(k))
        return bb.freeze() if frozen else bb


def sgc_forward(backbone: SgcBackbone, g: Graph, x_override=None) -> np.ndarray:
    return backbone.forward(g, x_override)


@dataclass(eq=False)
class ProjectionHead:
    """``relu(h V1 + c1) V2 + c2``; used only while pretraining."""

    v1: np.ndarray
    c1: np.ndarray
    v2: np.ndarray
    c2: np.ndarray

    @classmethod
    def init(cls, d: int, rng: np.random.Generator) -> "ProjectionHead":
        return cls(glorot_uniform(rng, d, d), np.zeros(d), glorot_uniform(rng, d, d), np.zeros(d))

    def params(self) -> dict[str, np.ndarray]:
        return {"v1": self.v1, "c1": self.c1, "v2": self.v2, "c2": self.c2}

    def forward(self, h: np.ndarray):
        pre = h @ self.v1 + self.c1
        act = np.maximum(pre, 0.0)
        return act @ self.v2 + self.c2, (h, pre, act)

    def backward(self, d_out: np.ndarray, cache):
        h, pre, act = cache
        d_act = d_out @ self.v2.T
        d_pre = d_act * (pre > 0)
        grads = {
            "v1": h.T @ d_pre,
            "c1": d_pre.sum(axis=0),
            "v2": act.T @ d_out,
            "c2": d_out.sum(axis=0),
        }
        return grads, d_pre @ self.v1.T


NORM_FLOOR = 1e-12


def contrastive_objective(backbone, head, g_view, g_orig, tau, need_grads=True):
    """NT-Xent between corrupted and original views and gradients for all weights."""
    h1 = backbone.forward(g_view)
    h2 = backbone.forward(g_orig)
    z1, c1 = head.forward(h1)
    z2, c2 = head.forward(h2)
    loss, dz1, dz2 = ntxent_loss(z1, z2, tau, NORM_FLOOR)
    if not need_grads:
        return loss, None
    g_head1, dh1 = head.backward(dz1, c1)
    g_head2, dh2 = head.backward(dz2, c2)
    g_bb1 = backbone.backward_weights(g_view, None, dh1)
    g_bb2 = backbone.backward_weights(g_orig, None, dh2)
    grads = {k: g_head1[k] + g_head2[k] for k in g_head1}
    grads.update({k: g_bb1[k] + g_bb2[k] for k in g_bb1})
    return loss, grads


def pretrain_backbone(
    g1: Graph,
    aug: AugmentationParams,
    cfg: TrainConfig,
    hidden_dim: int = 64,
    steps_per_layer: int = 1,
) -> SgcBackbone:
    """Contrastively train a backbone and projection head on one graph.

    Returns the frozen backbone; the head is discarded. Per-epoch losses
    (measured before each update) are kept in ``loss_history``.
    """
    rng = np.random.default_rng(cfg.rng_seed)
    backbone = SgcBackbone.init(g1.f, hidden_dim, rng, steps_per_layer)
    head = ProjectionHead.init(hidden_dim, rng)
    params = {**backbone.params(), **head.params()}
    opt = Adam.from_config(cfg)
    view_rng = np.random.default_rng(aug.rng_seed)
    fixed_view = augment_contrastive(g1, aug)
    history = []
    for epoch in range(cfg.epochs):
        if cfg.fresh_views:
            epoch_aug = AugmentationParams(
                aug.edge_removal_prob, aug.attr_mask_prob, int(view_rng.integers(2**62))
            )
            view = augment_contrastive(g1, epoch_aug)
        else:
            view = fixed_view
        loss, grads = contrastive_objective(backbone, head, view, g1, cfg.temperature)
        history.append(loss)
        opt.step(params, grads)
        logger.debug("pretrain epoch %d loss %.5f", epoch, loss)
    backbone.loss_history = tuple(history)
    return backbone.freeze()
