"""Shared test utilities: toy networks and independent oracles.

The oracles here deliberately avoid the code paths they check: gradient
checks use central finite differences, ablation checks use a plain
layer-by-layer forward loop with manual zeroing, and least-squares checks
use the normal equations.
"""

import numpy as np

from ablg import layers as L
from ablg.network import (Network, build_network, forward_trace,
                          softmax_cross_entropy)
from ablg.rng import rng_for


def toy_cnn(n_classes=5, in_shape=(1, 4, 4), seed=11, dtype=np.float64,
            dropout_rate=0.0) -> Network:
    """3-layer toy CNN (conv, conv, dense) used across the gradient checks."""
    specs = [
        L.conv2d(in_shape[0], 3, 3, padding=1), L.relu(), L.maxpool2d(2),
        L.conv2d(3, 4, 3, padding=1), L.relu(), L.flatten(),
    ]
    if dropout_rate:
        specs.append(L.dropout(dropout_rate))
    specs.append(L.dense(4 * (in_shape[1] // 2) * (in_shape[2] // 2), n_classes))
    return build_network(specs, in_shape, n_classes, seed=seed).astype(dtype)


def toy_ablation_cnn(m=16, n_classes=4, in_shape=(1, 6, 6), seed=7,
                     dtype=np.float32) -> Network:
    """3-layer CNN whose last conv layer has `m` units, for ablation checks."""
    specs = [
        L.conv2d(in_shape[0], 6, 3, padding=1), L.relu(), L.maxpool2d(2),
        L.conv2d(6, m, 3, padding=1), L.relu(), L.flatten(),
        L.dense(m * (in_shape[1] // 2) * (in_shape[2] // 2), n_classes),
    ]
    return build_network(specs, in_shape, n_classes, seed=seed).astype(dtype)


def rand_batch(net: Network, n=8, seed=0, dtype=None) -> np.ndarray:
    rng = rng_for(seed, "batch")
    x = rng.normal(size=(n, *net.input_shape))
    return x.astype(dtype or net.params[-1]["W"].dtype)


def rand_labels(net: Network, n=8, seed=0) -> np.ndarray:
    return rng_for(seed, "labels").integers(0, net.n_classes, size=n)


def loss_of(net: Network, x, labels) -> float:
    trace = forward_trace(net, x)
    loss, _ = softmax_cross_entropy(trace.logits, labels)
    return loss


def fd_param_grads(net: Network, x, labels, step=1e-3):
    """Central finite differences of the loss wrt every parameter."""
    grads = []
    for p in net.params:
        g = {}
        for key, w in p.items():
            gw = np.zeros_like(w)
            flat = w.reshape(-1)
            gflat = gw.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + step
                hi = loss_of(net, x, labels)
                flat[i] = orig - step
                lo = loss_of(net, x, labels)
                flat[i] = orig
                gflat[i] = (hi - lo) / (2 * step)
            g[key] = gw
        grads.append(g)
    return grads


def fd_input_grad(fn, x, step=1e-3):
    """Central finite differences of scalar fn(x) wrt the array x."""
    g = np.zeros_like(x, dtype=np.float64)
    flat = x.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        hi = fn(x)
        flat[i] = orig - step
        lo = fn(x)
        flat[i] = orig
        gflat[i] = (hi - lo) / (2 * step)
    return g


def rel_err(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Max elementwise error relative to the numeric gradient's scale."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    scale = max(float(np.abs(numeric).max(initial=0.0)), 1e-6)
    return float(np.abs(analytic - numeric).max(initial=0.0) / scale)


def max_param_rel_err(analytic_grads, fd_grads) -> float:
    worst = 0.0
    for ag, ng in zip(analytic_grads, fd_grads):
        for key in ag:
            worst = max(worst, rel_err(ag[key], ng[key]))
    return worst


def reference_forward(net: Network, x, zero_layer=None, zero_units=()):
    """Plain layer loop with manual post-activation zeroing; no caching path.

    `zero_layer` names a conv/dense layer whose post-activation units in
    `zero_units` are forced to zero, mirroring what a UnitMask should do.
    """
    from ablg.network import _layer_forward, activation_index
    point = activation_index(net, zero_layer) if zero_layer is not None else None
    out = x
    for i, (spec, params) in enumerate(zip(net.specs, net.params)):
        out, _ = _layer_forward(spec, params, out)
        if point is not None and i == point and len(zero_units):
            out = out.copy()
            out[:, list(zero_units)] = 0
    return out


def naive_cumulative(net: Network, x_class, class_id, layer_id, ranking):
    """Full-recompute ablation oracle: one reference forward per mask size."""
    m = len(ranking)
    accs = np.empty(m + 1)
    for n in range(m + 1):
        logits = reference_forward(net, x_class, zero_layer=layer_id,
                                   zero_units=ranking[:n])
        accs[n] = float(np.mean(logits.argmax(axis=1) == class_id))
    return accs


def normal_equations(x, y):
    """Least-squares oracle by solving X^T X beta = X^T y directly."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    return np.linalg.solve(x.T @ x, x.T @ y)
