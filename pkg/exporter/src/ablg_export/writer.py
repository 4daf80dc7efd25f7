"""Writer for the portable ABLG weight format (little-endian, bit-exact).

Layout:
    magic "ABLG" | version u16 (=1) | layer_count u16
    per layer:
        kind u8 (1 conv2d, 2 relu, 3 maxpool2d, 4 flatten, 5 dense, 6 dropout)
        hyperparameters:
            conv2d    in_c u32, out_c u32, kernel u32, stride u32, padding u32
            maxpool2d kernel u32, stride u32
            dense     in_f u32, out_f u32
            dropout   rate f32
        tensor_count u8 (2 for conv2d/dense: W then b; 0 otherwise)
        per tensor: rank u8 | dims u32[rank] | payload f32[], row-major
A JSON sidecar at <path>.json carries {id, seed, config_digest,
input_shape, n_classes}.
"""

import json
import struct
from pathlib import Path

import numpy as np

from .arch import ArchDescriptor, LayerDesc

FORMAT_VERSION = 1
KIND_TAGS = {"conv2d": 1, "relu": 2, "maxpool2d": 3, "flatten": 4,
             "dense": 5, "dropout": 6}


def _hyper_block(layer: LayerDesc) -> bytes:
    if layer.kind == "conv2d":
        return struct.pack("<5I", layer.in_channels, layer.out_channels,
                           layer.kernel_size, layer.stride, layer.padding)
    if layer.kind == "maxpool2d":
        return struct.pack("<2I", layer.kernel_size, layer.stride)
    if layer.kind == "dense":
        return struct.pack("<2I", layer.in_features, layer.out_features)
    if layer.kind == "dropout":
        return struct.pack("<f", layer.rate)
    return b""


def _tensor_block(arr: np.ndarray) -> bytes:
    arr = np.ascontiguousarray(arr, dtype=np.float32)
    head = struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + arr.astype("<f4").tobytes()


def write_weights(arch: ArchDescriptor, params: dict, path,
                  config_digest: str = "") -> None:
    """Write the binary plus its sidecar; `params` maps layer name -> (W, b)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    blob = [b"ABLG", struct.pack("<HH", FORMAT_VERSION, len(arch.layers))]
    for layer in arch.layers:
        blob.append(struct.pack("<B", KIND_TAGS[layer.kind]))
        blob.append(_hyper_block(layer))
        if layer.name in params:
            w, b = params[layer.name]
            blob.append(struct.pack("<B", 2))
            blob.append(_tensor_block(w))
            blob.append(_tensor_block(b))
        else:
            blob.append(struct.pack("<B", 0))
    path.write_bytes(b"".join(blob))
    sidecar = {
        "id": arch.net_id,
        "seed": 0,
        "config_digest": config_digest,
        "input_shape": list(arch.input_shape),
        "n_classes": arch.n_classes,
    }
    path.with_suffix(path.suffix + ".json").write_text(
        json.dumps(sidecar, sort_keys=True, indent=2) + "\n")
