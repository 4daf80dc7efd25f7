"""Network-level behavior: masking, capture/resume, determinism, gradients."""

import numpy as np
import pytest

from ablg import layers as L
from ablg.errors import BoundsError, ConfigError, DomainError
from ablg.network import (UnitMask, accuracy, backprop, backward, build_network,
                          forward, forward_capture, forward_trace, predictions,
                          resume_forward, softmax_cross_entropy)
from ablg.rng import rng_for

from helpers import (fd_param_grads, max_param_rel_err, rand_batch, rand_labels,
                     reference_forward, rel_err, toy_cnn)


@pytest.fixture(scope="module")
def net():
    return toy_cnn(dtype=np.float32)


@pytest.fixture(scope="module")
def batch(net):
    return rand_batch(net, n=6, seed=1, dtype=np.float32)


def test_build_validates_final_logit_shape():
    with pytest.raises(ConfigError):
        build_network([L.dense(4, 3)], (4,), n_classes=5)


def test_forward_empty_mask_is_identity(net, batch):
    plain = forward(net, batch)
    masked = forward(net, batch, UnitMask.of(3, ()))
    assert np.array_equal(plain, masked)


def test_identity_dense_net_passes_input_through():
    net = build_network([L.dense(3, 3)], (3,), 3)
    net.params[0]["W"] = np.eye(3, dtype=np.float32)
    net.params[0]["b"] = np.zeros(3, dtype=np.float32)
    out = forward(net, np.array([[1.0, 2.0, 3.0]], dtype=np.float32))
    assert np.array_equal(out, [[1.0, 2.0, 3.0]])


def test_full_mask_matches_manually_zeroed_feature_map(net, batch):
    # masking every unit of the last conv layer == classifier on zero features
    layer_id = 3
    m = net.specs[layer_id].out_channels
    got = forward(net, batch, UnitMask.of(layer_id, range(m)))
    want = reference_forward(net, batch, zero_layer=layer_id, zero_units=range(m))
    assert np.allclose(got, want, rtol=1e-6, atol=0)


def test_masked_unit_activation_is_identically_zero(net, batch):
    mask = UnitMask.of(3, {0, 2})
    cache = forward_capture(net, batch, 3, mask=mask)
    assert np.all(cache.activations[:, [0, 2]] == 0)
    assert np.any(cache.activations[:, 1] != 0)


def test_capture_resume_equals_full_forward(net, batch):
    cache = forward_capture(net, batch, 3)
    assert np.array_equal(resume_forward(net, cache), forward(net, batch))
    for u in (0, 1, 3):
        mask = UnitMask.of(3, {u})
        assert np.array_equal(resume_forward(net, cache, mask),
                              forward(net, batch, mask))


def test_capture_at_final_layer_returns_logits(net, batch):
    last = len(net.specs) - 1
    cache = forward_capture(net, batch, last)
    assert np.array_equal(cache.activations, forward(net, batch))


def test_forward_is_deterministic(net, batch):
    assert np.array_equal(forward(net, batch), forward(net, batch))


def test_forward_outputs_are_finite(net, batch):
    assert np.all(np.isfinite(forward(net, batch)))


def test_shape_and_mask_validation(net, batch):
    with pytest.raises(ConfigError):
        forward(net, batch[:, :, :2, :])
    with pytest.raises(BoundsError):
        forward(net, batch, UnitMask.of(99, {0}))
    with pytest.raises(BoundsError):
        forward(net, batch, UnitMask.of(1, {0}))          # relu has no units
    with pytest.raises(BoundsError):
        forward(net, batch, UnitMask.of(3, {999}))
    with pytest.raises(BoundsError):
        cache = forward_capture(net, batch, 3)
        resume_forward(net, cache, UnitMask.of(0, {0}))   # wrong layer for cache


def test_zero_weight_dense_net_has_zero_input_gradient():
    net = build_network([L.dense(4, 3)], (4,), 3)
    net.params[0]["W"][:] = 0
    g = backward(net, np.ones((2, 4), dtype=np.float32), np.array([0, 1]))
    assert np.all(g.x == 0)


def test_parameter_gradients_match_finite_differences():
    net = toy_cnn(dtype=np.float64)
    x = rand_batch(net, n=4, seed=2)
    labels = rand_labels(net, n=4, seed=2)
    g = backward(net, x, labels)
    fd = fd_param_grads(net, x, labels, step=1e-3)
    assert max_param_rel_err(g.params, fd) < 1e-4


def test_input_gradient_matches_finite_differences():
    net = toy_cnn(dtype=np.float64)
    x = rand_batch(net, n=3, seed=3)
    labels = rand_labels(net, n=3, seed=3)
    g = backward(net, x, labels)

    from helpers import fd_input_grad, loss_of
    fd = fd_input_grad(lambda a: loss_of(net, a, labels), x)
    assert rel_err(g.x, fd) < 1e-4


def test_loss_scale_linearity():
    net = toy_cnn(dtype=np.float64)
    x = rand_batch(net, n=4, seed=4)
    labels = rand_labels(net, n=4, seed=4)
    g1 = backward(net, x, labels)
    g2 = backward(net, x, labels, loss_scale=2.0)
    assert g2.loss == pytest.approx(2 * g1.loss)
    assert np.allclose(g2.x, 2 * g1.x, rtol=1e-12)
    for p1, p2 in zip(g1.params, g2.params):
        for key in p1:
            assert np.allclose(p2[key], 2 * p1[key], rtol=1e-12)


def test_backward_rejects_invalid_labels():
    net = toy_cnn(dtype=np.float32)
    x = rand_batch(net, n=2, seed=5, dtype=np.float32)
    with pytest.raises(DomainError):
        backward(net, x, np.array([0, 9]))


def test_softmax_cross_entropy_known_value():
    logits = np.array([[0.0, 0.0]])
    loss, grad = softmax_cross_entropy(logits, np.array([0]))
    assert loss == pytest.approx(np.log(2))
    assert np.allclose(grad, [[-0.5, 0.5]])


def test_predictions_tie_breaks_to_lowest_class():
    logits = np.array([[1.0, 1.0, 0.0], [0.0, 2.0, 2.0]])
    assert predictions(logits).tolist() == [0, 1]


def test_accuracy_counts_argmax_hits():
    net = build_network([L.dense(2, 2)], (2,), 2)
    net.params[0]["W"] = np.eye(2, dtype=np.float32)
    x = np.array([[1, 0], [0, 1], [1, 0]], dtype=np.float32)
    assert accuracy(net, x, np.array([0, 1, 1])) == pytest.approx(2 / 3)


def test_dropout_trace_needs_rng_and_masks_apply():
    net = toy_cnn(dtype=np.float32, dropout_rate=0.5)
    x = rand_batch(net, n=4, seed=6, dtype=np.float32)
    with pytest.raises(DomainError):
        forward_trace(net, x, train=True)
    t1 = forward_trace(net, x, train=True, rng=rng_for(0, "d"))
    t2 = forward_trace(net, x, train=True, rng=rng_for(0, "d"))
    assert np.array_equal(t1.logits, t2.logits)       # same stream, same masks
    eval_trace = forward_trace(net, x)
    assert np.array_equal(eval_trace.logits, forward(net, x))


def test_backprop_vjp_linearity(net, batch):
    trace = forward_trace(net, batch)
    seed = np.zeros_like(trace.logits)
    seed[:, 0] = 1.0
    g1, gx1 = backprop(net, trace, seed)
    g2, gx2 = backprop(net, trace, 2 * seed)
    assert np.allclose(gx2, 2 * gx1, rtol=1e-6)
    assert np.allclose(g2[0]["W"], 2 * g1[0]["W"], rtol=1e-6)
