"""Layer specs plus functional forward/backward kernels.

Kernels are dtype-generic (float32 in production, float64 for the
finite-difference oracles in the tests). Matrix products accumulate in
float64 and cast back to the working dtype, which keeps the ablation
curves stable across sweep orderings.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError

CONV2D = "conv2d"
RELU = "relu"
MAXPOOL2D = "maxpool2d"
FLATTEN = "flatten"
DENSE = "dense"
DROPOUT = "dropout"

KINDS = (CONV2D, RELU, MAXPOOL2D, FLATTEN, DENSE, DROPOUT)

# kinds whose output is a stack of units that a UnitMask may disable
UNIT_KINDS = (CONV2D, DENSE)


@dataclass(frozen=True)
class LayerSpec:
    """One layer of a network; only the fields for `kind` are meaningful."""

    kind: str
    in_channels: int = 0
    out_channels: int = 0
    kernel_size: int = 0
    stride: int = 1
    padding: int = 0
    in_features: int = 0
    out_features: int = 0
    rate: float = 0.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown layer kind: {self.kind!r}")


def conv2d(in_channels: int, out_channels: int, kernel_size: int,
           stride: int = 1, padding: int = 0) -> LayerSpec:
    if min(in_channels, out_channels, kernel_size, stride) < 1 or padding < 0:
        raise ConfigError("conv2d hyperparameters must be positive (padding >= 0)")
    return LayerSpec(CONV2D, in_channels=in_channels, out_channels=out_channels,
                     kernel_size=kernel_size, stride=stride, padding=padding)


def relu() -> LayerSpec:
    return LayerSpec(RELU)


def maxpool2d(kernel_size: int, stride: int = 0) -> LayerSpec:
    if kernel_size < 1:
        raise ConfigError("maxpool2d kernel_size must be >= 1")
    return LayerSpec(MAXPOOL2D, kernel_size=kernel_size, stride=stride or kernel_size)


def flatten() -> LayerSpec:
    return LayerSpec(FLATTEN)


def dense(in_features: int, out_features: int) -> LayerSpec:
    if min(in_features, out_features) < 1:
        raise ConfigError("dense feature counts must be >= 1")
    return LayerSpec(DENSE, in_features=in_features, out_features=out_features)


def dropout(rate: float) -> LayerSpec:
    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"dropout rate must be in [0, 1), got {rate}")
    return LayerSpec(DROPOUT, rate=rate)


def unit_count(spec: LayerSpec) -> int:
    """Number of maskable units (conv channels / dense neurons)."""
    if spec.kind == CONV2D:
        return spec.out_channels
    if spec.kind == DENSE:
        return spec.out_features
    raise ConfigError(f"layer kind {spec.kind!r} has no maskable units")


def infer_shape(spec: LayerSpec, in_shape: tuple[int, ...]) -> tuple[int, ...]:
    """Output shape (without the batch dim) for `in_shape`; raises ConfigError on mismatch."""
    if spec.kind == CONV2D:
        if len(in_shape) != 3 or in_shape[0] != spec.in_channels:
            raise ConfigError(f"conv2d expects (C={spec.in_channels}, H, W), got {in_shape}")
        c, h, w = in_shape
        ho = (h + 2 * spec.padding - spec.kernel_size) // spec.stride + 1
        wo = (w + 2 * spec.padding - spec.kernel_size) // spec.stride + 1
        if ho < 1 or wo < 1:
            raise ConfigError(f"conv2d output collapses to {ho}x{wo} for input {in_shape}")
        return (spec.out_channels, ho, wo)
    if spec.kind == MAXPOOL2D:
        if len(in_shape) != 3:
            raise ConfigError(f"maxpool2d expects (C, H, W), got {in_shape}")
        c, h, w = in_shape
        ho = (h - spec.kernel_size) // spec.stride + 1
        wo = (w - spec.kernel_size) // spec.stride + 1
        if ho < 1 or wo < 1:
            raise ConfigError(f"maxpool2d output collapses to {ho}x{wo} for input {in_shape}")
        return (c, ho, wo)
    if spec.kind == FLATTEN:
        return (int(np.prod(in_shape)),)
    if spec.kind == DENSE:
        if len(in_shape) != 1 or in_shape[0] != spec.in_features:
            raise ConfigError(f"dense expects ({spec.in_features},), got {in_shape}")
        return (spec.out_features,)
    # relu / dropout
    return in_shape


def init_params(spec: LayerSpec, rng: np.random.Generator,
                dtype=np.float32) -> dict[str, np.ndarray]:
    """He-initialized weights, zero biases; empty dict for parameterless kinds."""
    if spec.kind == CONV2D:
        fan_in = spec.in_channels * spec.kernel_size ** 2
        w = rng.normal(0.0, np.sqrt(2.0 / fan_in),
                       (spec.out_channels, spec.in_channels,
                        spec.kernel_size, spec.kernel_size))
        return {"W": w.astype(dtype), "b": np.zeros(spec.out_channels, dtype=dtype)}
    if spec.kind == DENSE:
        w = rng.normal(0.0, np.sqrt(2.0 / spec.in_features),
                       (spec.out_features, spec.in_features))
        return {"W": w.astype(dtype), "b": np.zeros(spec.out_features, dtype=dtype)}
    return {}


def _mm(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product accumulated in float64, cast back to the working dtype."""
    out_dtype = np.result_type(a.dtype, b.dtype)
    prod = a.astype(np.float64, copy=False) @ b.astype(np.float64, copy=False)
    return prod.astype(out_dtype, copy=False)


def _pool_windows(x: np.ndarray, k: int, s: int) -> np.ndarray:
    win = np.lib.stride_tricks.sliding_window_view(x, (k, k), axis=(2, 3))
    return win[:, :, ::s, ::s, :, :]


# --- conv2d -----------------------------------------------------------------

def conv2d_forward(x, w, b, stride, padding):
    bsz, cin, h, wdt = x.shape
    cout, _, kh, kw = w.shape
    if padding:
        x_pad = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    else:
        x_pad = x
    cols = _pool_windows(x_pad, kh, stride)          # (B, C, Ho, Wo, kh, kw)
    _, _, ho, wo, _, _ = cols.shape
    cols2 = np.ascontiguousarray(cols.transpose(0, 2, 3, 1, 4, 5)).reshape(
        bsz * ho * wo, cin * kh * kw)
    y = _mm(cols2, w.reshape(cout, -1).T) + b
    y = y.reshape(bsz, ho, wo, cout).transpose(0, 3, 1, 2)
    cache = (cols2, x.shape, (ho, wo))
    return np.ascontiguousarray(y), cache


def conv2d_backward(gy, cache, w, stride, padding):
    cols2, x_shape, (ho, wo) = cache
    bsz, cin, h, wdt = x_shape
    cout, _, kh, kw = w.shape
    g2 = np.ascontiguousarray(gy.transpose(0, 2, 3, 1)).reshape(bsz * ho * wo, cout)
    gw = _mm(g2.T, cols2).reshape(w.shape)
    gb = g2.sum(axis=0, dtype=np.float64).astype(gy.dtype)
    gcols = _mm(g2, w.reshape(cout, -1))             # (B*Ho*Wo, C*kh*kw)
    gcols = gcols.reshape(bsz, ho, wo, cin, kh, kw)
    hp, wp = h + 2 * padding, wdt + 2 * padding
    gx_pad = np.zeros((bsz, cin, hp, wp), dtype=gy.dtype)
    for i in range(kh):
        for j in range(kw):
            gx_pad[:, :, i:i + ho * stride:stride, j:j + wo * stride:stride] += \
                gcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    if padding:
        gx = gx_pad[:, :, padding:-padding, padding:-padding]
    else:
        gx = gx_pad
    return np.ascontiguousarray(gx), {"W": gw, "b": gb}


# --- relu --------------------------------------------------------------------

def relu_forward(x):
    y = np.maximum(x, 0)
    return y, (x > 0)


def relu_backward(gy, cache):
    return gy * cache


# --- maxpool2d ---------------------------------------------------------------

def maxpool2d_forward(x, k, s):
    win = _pool_windows(x, k, s)
    bsz, c, ho, wo = win.shape[:4]
    flat = win.reshape(bsz, c, ho, wo, k * k)
    idx = flat.argmax(axis=-1)                       # ties -> first max, deterministic
    y = np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]
    return np.ascontiguousarray(y), (idx, x.shape)


def maxpool2d_backward(gy, cache, k, s):
    idx, x_shape = cache
    gx = np.zeros(x_shape, dtype=gy.dtype)
    b_i, c_i, ho_i, wo_i = np.indices(idx.shape, sparse=True)
    np.add.at(gx, (b_i, c_i, ho_i * s + idx // k, wo_i * s + idx % k), gy)
    return gx


# --- flatten -----------------------------------------------------------------

def flatten_forward(x):
    return x.reshape(x.shape[0], -1), x.shape


def flatten_backward(gy, cache):
    return gy.reshape(cache)


# --- dense -------------------------------------------------------------------

def dense_forward(x, w, b):
    return _mm(x, w.T) + b, x


def dense_backward(gy, cache, w):
    x = cache
    gw = _mm(gy.T, x)
    gb = gy.sum(axis=0, dtype=np.float64).astype(gy.dtype)
    gx = _mm(gy, w)
    return gx, {"W": gw, "b": gb}


# --- dropout -----------------------------------------------------------------

def dropout_mask(rng: np.random.Generator, shape, rate: float) -> np.ndarray:
    return (rng.random(shape) >= rate)


def dropout_forward(x, mask, rate):
    """Inverted dropout; `mask is None` means inference (identity)."""
    if mask is None or rate == 0.0:
        return x, None
    scale = np.asarray(1.0 / (1.0 - rate), dtype=x.dtype)
    return x * mask * scale, (mask, scale)


def dropout_backward(gy, cache):
    if cache is None:
        return gy
    mask, scale = cache
    return gy * mask * scale
