"""Networks: ordered layer stacks with forward, backward, and unit masking.

A "unit" is a post-activation conv channel (whole feature map) or a single
post-activation dense neuron. Masking a unit forces its output to all
zeros; because ReLU maps 0 to 0, zeroing the producing layer's output is
exactly equivalent to zeroing after the activation, so masks are applied
at the producing layer and stay zero downstream.
"""

from dataclasses import dataclass, field

import numpy as np

from . import layers as L
from .errors import BoundsError, ConfigError, DomainError
from .rng import rng_for


@dataclass(frozen=True)
class UnitMask:
    """Disable units of one conv/dense layer during a forward pass."""

    layer_id: int
    disabled: frozenset = frozenset()

    @staticmethod
    def of(layer_id: int, disabled) -> "UnitMask":
        return UnitMask(layer_id, frozenset(int(u) for u in disabled))


@dataclass
class Network:
    specs: list
    params: list                      # per-layer dict of ndarrays ({} if none)
    input_shape: tuple                # sample shape without batch dim
    n_classes: int
    net_id: str = ""
    seed: int = 0
    config_digest: str = ""
    shapes: list = field(default_factory=list)   # per-layer output shapes

    def astype(self, dtype) -> "Network":
        """Copy with parameters cast to `dtype` (float64 copies back the oracles)."""
        params = [{k: v.astype(dtype) for k, v in p.items()} for p in self.params]
        return Network(self.specs, params, self.input_shape, self.n_classes,
                       self.net_id, self.seed, self.config_digest, list(self.shapes))

    def copy(self) -> "Network":
        params = [{k: v.copy() for k, v in p.items()} for p in self.params]
        return Network(self.specs, params, self.input_shape, self.n_classes,
                       self.net_id, self.seed, self.config_digest, list(self.shapes))

    def param_count(self) -> int:
        return sum(v.size for p in self.params for v in p.values())


def build_network(specs, input_shape, n_classes, seed=0, net_id="",
                  config_digest="", dtype=np.float32) -> Network:
    """Validate the stack, infer shapes, and He-initialize parameters from `seed`."""
    shapes = []
    shape = tuple(input_shape)
    for i, spec in enumerate(specs):
        try:
            shape = L.infer_shape(spec, shape)
        except ConfigError as e:
            raise ConfigError(f"layer {i} ({spec.kind}): {e}") from None
        shapes.append(shape)
    if shape != (n_classes,):
        raise ConfigError(
            f"final layer produces shape {shape}, expected ({n_classes},) logits")
    params = [L.init_params(spec, rng_for(seed, "init", i), dtype=dtype)
              for i, spec in enumerate(specs)]
    return Network(list(specs), params, tuple(input_shape), n_classes,
                   net_id, seed, config_digest, shapes)


def _check_batch(net: Network, x: np.ndarray):
    if x.ndim != len(net.input_shape) + 1 or tuple(x.shape[1:]) != net.input_shape:
        raise ConfigError(
            f"batch shape {x.shape} does not match input spec {net.input_shape}")


def check_mask(net: Network, mask: UnitMask) -> np.ndarray:
    """Validate a mask against the network; returns the disabled indices as an array."""
    if not 0 <= mask.layer_id < len(net.specs):
        raise BoundsError(f"mask layer id {mask.layer_id} out of range")
    spec = net.specs[mask.layer_id]
    if spec.kind not in L.UNIT_KINDS:
        raise BoundsError(f"layer {mask.layer_id} ({spec.kind}) has no maskable units")
    m = L.unit_count(spec)
    idx = np.fromiter(mask.disabled, dtype=np.int64) if mask.disabled else \
        np.empty(0, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= m):
        raise BoundsError(
            f"mask indices {sorted(mask.disabled)} out of bounds for M={m}")
    return idx


def _layer_forward(spec, params, x, dmask=None):
    if spec.kind == L.CONV2D:
        return L.conv2d_forward(x, params["W"], params["b"], spec.stride, spec.padding)
    if spec.kind == L.RELU:
        return L.relu_forward(x)
    if spec.kind == L.MAXPOOL2D:
        return L.maxpool2d_forward(x, spec.kernel_size, spec.stride)
    if spec.kind == L.FLATTEN:
        return L.flatten_forward(x)
    if spec.kind == L.DENSE:
        return L.dense_forward(x, params["W"], params["b"])
    return L.dropout_forward(x, dmask, spec.rate)


def _layer_backward(spec, params, gy, cache):
    """Returns (grad_input, param_grads or None)."""
    if spec.kind == L.CONV2D:
        return L.conv2d_backward(gy, cache, params["W"], spec.stride, spec.padding)
    if spec.kind == L.RELU:
        return L.relu_backward(gy, cache), None
    if spec.kind == L.MAXPOOL2D:
        return L.maxpool2d_backward(gy, cache, spec.kernel_size, spec.stride), None
    if spec.kind == L.FLATTEN:
        return L.flatten_backward(gy, cache), None
    if spec.kind == L.DENSE:
        return L.dense_backward(gy, cache, params["W"])
    return L.dropout_backward(gy, cache), None


def _run(net, x, mask=None, stop_after=None, capture=None):
    """Shared forward loop; optionally stops after `stop_after` or records `capture`."""
    idx = check_mask(net, mask) if mask is not None else None
    captured = None
    out = x
    for i, (spec, params) in enumerate(zip(net.specs, net.params)):
        out, _ = _layer_forward(spec, params, out)
        if mask is not None and i == mask.layer_id and idx.size:
            out = out.copy()
            out[:, idx] = 0
        if capture is not None and i == capture:
            captured = out
        if stop_after is not None and i == stop_after:
            return out, captured
    return out, captured


def forward(net: Network, x: np.ndarray, mask: UnitMask | None = None) -> np.ndarray:
    """Inference forward pass (dropout disabled); returns [batch, N] logits."""
    _check_batch(net, x)
    logits, _ = _run(net, x, mask=mask)
    return logits


def activation_index(net: Network, layer_id: int) -> int:
    """Pipeline index whose output is the post-activation map of `layer_id`."""
    if not 0 <= layer_id < len(net.specs):
        raise BoundsError(f"layer id {layer_id} out of range")
    if net.specs[layer_id].kind not in L.UNIT_KINDS:
        raise BoundsError(f"layer {layer_id} ({net.specs[layer_id].kind}) has no units")
    j = layer_id + 1
    if j < len(net.specs) and net.specs[j].kind == L.RELU:
        return j
    return layer_id


@dataclass
class ForwardCache:
    """Post-activation state at one layer, sufficient to resume the suffix."""

    layer_id: int
    capture_index: int
    activations: np.ndarray


def forward_capture(net: Network, x: np.ndarray, layer_id: int,
                    mask: UnitMask | None = None) -> ForwardCache:
    """Run the prefix up to `layer_id`'s activation and cache it."""
    _check_batch(net, x)
    cap = activation_index(net, layer_id)
    act, _ = _run(net, x, mask=mask, stop_after=cap)
    return ForwardCache(layer_id, cap, act)


def resume_forward(net: Network, cache: ForwardCache,
                   mask: UnitMask | None = None) -> np.ndarray:
    """Continue from a cached prefix, optionally masking units of the cached layer."""
    act = cache.activations
    if mask is not None:
        if mask.layer_id != cache.layer_id:
            raise BoundsError(
                f"resume mask targets layer {mask.layer_id}, cache holds {cache.layer_id}")
        idx = check_mask(net, mask)
        if idx.size:
            act = act.copy()
            act[:, idx] = 0
    out = act
    for i in range(cache.capture_index + 1, len(net.specs)):
        out, _ = _layer_forward(net.specs[i], net.params[i], out)
    return out


@dataclass
class Trace:
    """Per-layer caches from one forward pass, for backprop."""

    caches: list
    logits: np.ndarray


def forward_trace(net: Network, x: np.ndarray, train: bool = False,
                  rng: np.random.Generator | None = None) -> Trace:
    """Forward pass that records backward caches; dropout active only when training."""
    _check_batch(net, x)
    caches = []
    out = x
    for spec, params in zip(net.specs, net.params):
        dmask = None
        if spec.kind == L.DROPOUT and train and spec.rate > 0.0:
            if rng is None:
                raise DomainError("training forward through dropout needs an rng")
            dmask = L.dropout_mask(rng, out.shape, spec.rate)
        out, cache = _layer_forward(spec, params, out, dmask=dmask)
        caches.append(cache)
    return Trace(caches, out)


def backprop(net: Network, trace: Trace, grad_logits: np.ndarray):
    """Vector-Jacobian product through the whole stack.

    Returns (param_grads, grad_input) with param_grads aligned to net.params.
    """
    grads = [None] * len(net.specs)
    g = grad_logits
    for i in range(len(net.specs) - 1, -1, -1):
        g, pg = _layer_backward(net.specs[i], net.params[i], g, trace.caches[i])
        grads[i] = pg if pg is not None else {}
    return grads, g


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray):
    """Mean softmax cross-entropy; returns (loss, grad wrt logits)."""
    labels = np.asarray(labels)
    n = logits.shape[1]
    if labels.ndim != 1 or labels.shape[0] != logits.shape[0]:
        raise DomainError(f"labels shape {labels.shape} mismatches logits {logits.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= n):
        raise DomainError(f"labels must lie in [0, {n})")
    z = logits.astype(np.float64)
    z -= z.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    b = logits.shape[0]
    loss = float(np.mean(lse - z[np.arange(b), labels]))
    probs = np.exp(z - lse[:, None])
    probs[np.arange(b), labels] -= 1.0
    grad = (probs / b).astype(logits.dtype)
    return loss, grad


@dataclass
class Gradients:
    loss: float
    params: list            # per-layer dict of ndarrays, aligned with net.params
    x: np.ndarray           # gradient with respect to the input batch


def backward(net: Network, x: np.ndarray, labels: np.ndarray,
             loss_scale: float = 1.0) -> Gradients:
    """Gradients of mean softmax cross-entropy wrt all parameters and the input."""
    trace = forward_trace(net, x)
    loss, g = softmax_cross_entropy(trace.logits, labels)
    if loss_scale != 1.0:
        loss *= loss_scale
        g = g * np.asarray(loss_scale, dtype=g.dtype)
    pgrads, gx = backprop(net, trace, g)
    return Gradients(loss, pgrads, gx)


def predictions(logits: np.ndarray) -> np.ndarray:
    """Argmax class per row; ties resolve to the lowest class index."""
    return logits.argmax(axis=1)


def accuracy(net: Network, x: np.ndarray, labels: np.ndarray,
             batch_size: int = 512) -> float:
    """Fraction of samples whose argmax logit matches `labels`."""
    hits = 0
    for start in range(0, x.shape[0], batch_size):
        logits = forward(net, x[start:start + batch_size])
        hits += int((predictions(logits) == labels[start:start + batch_size]).sum())
    return hits / x.shape[0]
