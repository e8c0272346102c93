import numpy as np
import pytest

from tpp.datasets import SbmSpec, generate_sbm_stream
from tpp.graph import AugmentationParams, Graph, augment_contrastive
from tpp.nn import (
    Adam,
    ProjectionHead,
    SgcBackbone,
    TrainConfig,
    contrastive_objective,
    cross_entropy_loss,
    glorot_uniform,
    ntxent_loss,
    pretrain_backbone,
    sgc_forward,
    softmax,
)

from .conftest import dense_norm_adj, fd_check, random_connected_edges


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(learning_rate=0)
    with pytest.raises(ValueError):
        TrainConfig(temperature=-1)


def test_glorot_bound(rng):
    w = glorot_uniform(rng, 30, 10)
    assert np.abs(w).max() <= np.sqrt(6 / 40)


def test_softmax_rows_sum_to_one(rng):
    p = softmax(rng.standard_normal((5, 4)) * 50)
    np.testing.assert_allclose(p.sum(axis=1), 1.0)


def test_ce_uniform_logits():
    loss, _ = cross_entropy_loss(np.zeros((3, 2)), [0, 1, 0])
    assert loss == pytest.approx(np.log(2), abs=1e-12)


def test_ce_large_margin_goes_to_zero():
    logits = np.array([[500.0, 0.0], [0.0, 500.0]])
    loss, grad = cross_entropy_loss(logits, [0, 1])
    assert loss < 1e-12
    assert np.abs(grad).max() < 1e-12


def test_ce_gradient_matches_fd(rng):
    logits = rng.standard_normal((3, 4))
    labels = np.array([0, 3, 1])
    _, grad = cross_entropy_loss(logits, labels)
    err = fd_check(lambda: cross_entropy_loss(logits, labels)[0], logits, grad, rng, n_coords=12)
    assert err <= 1e-6


def test_ce_rejects_out_of_range_labels():
    with pytest.raises(ValueError):
        cross_entropy_loss(np.zeros((2, 2)), [0, 2])


def test_ntxent_closed_form():
    z = np.eye(2)
    loss, _, _ = ntxent_loss(z, z.copy(), 1.0)
    expected = -np.log(np.e / (np.e + 2))
    assert loss == pytest.approx(expected, abs=1e-12)
    assert loss == pytest.approx(0.5514, abs=1e-4)


def test_ntxent_gradients_match_fd(rng):
    z1 = rng.standard_normal((4, 5))
    z2 = rng.standard_normal((4, 5))
    _, d1, d2 = ntxent_loss(z1, z2, 0.5)
    fn = lambda: ntxent_loss(z1, z2, 0.5)[0]  # noqa: E731
    assert fd_check(fn, z1, d1, rng, n_coords=20) <= 1e-5
    assert fd_check(fn, z2, d2, rng, n_coords=20) <= 1e-5


def test_ntxent_scale_invariant(rng):
    z1, z2 = rng.standard_normal((6, 3)), rng.standard_normal((6, 3))
    a = ntxent_loss(z1, z2, 0.5)[0]
    b = ntxent_loss(7.5 * z1, 7.5 * z2, 0.5)[0]
    assert a == pytest.approx(b, abs=1e-12)


def test_ntxent_errors():
    with pytest.raises(ValueError, match="zero-norm"):
        ntxent_loss(np.array([[1.0, 0.0], [0.0, 0.0]]), np.eye(2), 1.0)
    with pytest.raises(ValueError):
        ntxent_loss(np.ones((1, 2)), np.ones((1, 2)), 1.0)


def test_adam_zero_gradient_keeps_params():
    p = {"w": np.array([1.0, -2.0])}
    opt = Adam(lr=0.1)
    for _ in range(5):
        opt.step(p, {"w": np.zeros(2)})
    np.testing.assert_array_equal(p["w"], [1.0, -2.0])
    np.testing.assert_array_equal(opt.m["w"], 0)
    np.testing.assert_array_equal(opt.v["w"], 0)


def test_adam_constant_gradient_step_is_lr():
    p = {"w": np.zeros(3)}
    opt = Adam(lr=0.01)
    g = np.array([3.0, -0.2, 40.0])
    for _ in range(100):
        before = p["w"].copy()
        opt.step(p, {"w": g})
    np.testing.assert_allclose(p["w"] - before, -0.01 * np.sign(g), rtol=1e-6)


def test_adam_quadratic_bowl():
    p = {"x": np.array([1.0, -1.0, 0.5])}
    opt = Adam(lr=0.05)
    for _ in range(200):
        opt.step(p, {"x": 2 * p["x"]})
    assert np.linalg.norm(p["x"]) <= 1e-3


def test_adam_shape_mismatch():
    with pytest.raises(ValueError):
        Adam().step({"w": np.zeros(2)}, {"w": np.zeros(3)})


def test_sgc_edgeless_identity():
    x = np.arange(12.0).reshape(4, 3)
    g = Graph.from_edges(4, [], x)
    bb = SgcBackbone(np.eye(3), np.eye(3))
    np.testing.assert_allclose(sgc_forward(bb, g), x)


def test_sgc_zero_weights(small_random_graph):
    g, _ = small_random_graph
    bb = SgcBackbone(np.zeros((g.f, 4)), np.zeros((4, 4)))
    assert not sgc_forward(bb, g).any()


def test_sgc_dense_oracle(rng):
    n = 6
    edges = random_connected_edges(rng, n, 0.4)
    g = Graph.from_edges(n, edges, rng.standard_normal((n, 3)))
    bb = SgcBackbone.init(3, 5, rng)
    p = dense_norm_adj(n, edges)
    oracle = p @ (p @ g.X @ bb.w1) @ bb.w2
    np.testing.assert_allclose(sgc_forward(bb, g), oracle, atol=1e-10, rtol=0)


def test_sgc_linear_in_input(small_random_graph, rng):
    g, _ = small_random_graph
    bb = SgcBackbone.init(g.f, 4, rng)
    x1, x2 = rng.standard_normal((2, g.n, g.f))
    lhs = sgc_forward(bb, g, 2.5 * x1 - 0.5 * x2)
    rhs = 2.5 * sgc_forward(bb, g, x1) - 0.5 * sgc_forward(bb, g, x2)
    np.testing.assert_allclose(lhs, rhs, atol=1e-10)


def test_sgc_shape_mismatch(small_random_graph, rng):
    g, _ = small_random_graph
    bb = SgcBackbone.init(g.f, 4, rng)
    with pytest.raises(ValueError):
        sgc_forward(bb, g, np.zeros((g.n, g.f + 1)))


def test_sgc_backward_passes_match_fd(small_random_graph, rng):
    g, _ = small_random_graph
    bb = SgcBackbone.init(g.f, 4, rng, steps_per_layer=2)
    x = g.X.copy()
    target = rng.standard_normal((g.n, 4))

    def loss():
        return 0.5 * ((bb.forward(g, x) - target) ** 2).sum()

    d_out = bb.forward(g, x) - target
    assert fd_check(loss, x, bb.backward_input(g, d_out), rng) <= 1e-4
    grads = bb.backward_weights(g, x, d_out)
    assert fd_check(loss, bb.w1, grads["w1"], rng) <= 1e-4
    assert fd_check(loss, bb.w2, grads["w2"], rng) <= 1e-4


def test_contrastive_gradients_match_fd(small_random_graph, rng):
    g, _ = small_random_graph
    bb = SgcBackbone.init(g.f, 6, rng)
    head = ProjectionHead.init(6, rng)
    view = augment_contrastive(g, AugmentationParams(0.2, 0.3, 1))
    _, grads = contrastive_objective(bb, head, view, g, 0.5)
    fn = lambda: contrastive_objective(bb, head, view, g, 0.5, need_grads=False)[0]  # noqa: E731
    for name, arr in {**bb.params(), **head.params()}.items():
        assert fd_check(fn, arr, grads[name], rng) <= 1e-4, name


def test_backbone_round_trip(rng):
    bb = SgcBackbone.init(5, 3, rng, steps_per_layer=2).freeze()
    back = SgcBackbone.from_bytes(bb.to_bytes())
    assert back.fingerprint() == bb.fingerprint()
    assert back.steps_per_layer == 2 and back.frozen
    with pytest.raises(ValueError):
        SgcBackbone.from_bytes(bb.to_bytes()[:-1])
    with pytest.raises(ValueError):
        SgcBackbone.from_bytes(b"X" + bb.to_bytes()[1:])


def test_frozen_backbone_detects_mutation(rng):
    bb = SgcBackbone.init(3, 2, rng).freeze()
    bb.check_frozen()
    with pytest.raises(ValueError):
        bb.w1[0, 0] = 1.0
    bb.w1.flags.writeable = True
    bb.w1[0, 0] += 1.0
    with pytest.raises(RuntimeError, match="changed"):
        bb.check_frozen()


def _first_task_graph():
    stream, _ = generate_sbm_stream(SbmSpec(tasks=1, nodes_per_class=30, seed=2))
    return stream.tasks[0].graph


def test_pretrain_zero_epochs_returns_init():
    g = _first_task_graph()
    cfg = TrainConfig(epochs=0, rng_seed=4)
    bb = pretrain_backbone(g, AugmentationParams(), cfg, hidden_dim=8)
    init = SgcBackbone.init(g.f, 8, np.random.default_rng(4))
    np.testing.assert_array_equal(bb.w1, init.w1)
    np.testing.assert_array_equal(bb.w2, init.w2)
    assert bb.frozen


def test_pretrain_reduces_loss():
    g = _first_task_graph()
    assert g.n == 60
    cfg = TrainConfig(learning_rate=0.001, epochs=30)
    bb = pretrain_backbone(g, AugmentationParams(), cfg, hidden_dim=16)
    assert len(bb.loss_history) == 30
    assert bb.loss_history[-1] < bb.loss_history[0]


def test_pretrain_is_deterministic():
    g = _first_task_graph()
    cfg = TrainConfig(learning_rate=0.001, epochs=5, rng_seed=1)
    a = pretrain_backbone(g, AugmentationParams(rng_seed=3), cfg, hidden_dim=8)
    b = pretrain_backbone(g, AugmentationParams(rng_seed=3), cfg, hidden_dim=8)
    assert a.to_bytes() == b.to_bytes()


def test_ntxent_norm_floor_handles_zero_rows(rng):
    z1 = rng.standard_normal((4, 3))
    z1[2] = 0.0
    z2 = rng.standard_normal((4, 3))
    loss, d1, d2 = ntxent_loss(z1, z2, 0.5, eps=1e-12)
    assert np.isfinite(loss) and np.all(np.isfinite(d1)) and np.all(np.isfinite(d2))
    # rows above the floor behave exactly as the strict loss would
    z1[2] = 1e-3
    strict = ntxent_loss(z1, z2, 0.5)
    floored = ntxent_loss(z1, z2, 0.5, eps=1e-12)
    assert strict[0] == floored[0]
    np.testing.assert_array_equal(strict[1], floored[1])
