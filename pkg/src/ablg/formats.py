"""Portable binary formats for weights ("ABLG") and datasets ("ABLD").

Both formats are little-endian and bit-exact on round trip. Layouts:

Weights (.ablg):
    magic "ABLG" | version u16 | layer_count u16
    per layer:
        kind u8 (1 conv2d, 2 relu, 3 maxpool2d, 4 flatten, 5 dense, 6 dropout)
        hyperparameters:
            conv2d    in_c u32, out_c u32, kernel u32, stride u32, padding u32
            maxpool2d kernel u32, stride u32
            dense     in_f u32, out_f u32
            dropout   rate f32
            relu / flatten: none
        tensor_count u8 (2 for conv2d/dense: W then b; 0 otherwise)
        per tensor: rank u8 | dims u32[rank] | payload f32[], row-major
    A JSON sidecar at <path>.json carries {id, seed, config_digest,
    input_shape, n_classes}.

Datasets (.ds):
    magic "ABLD" | version u16 | n_classes u16 | split u8 (0 train, 1 test)
    dtype u8 (0 uint8, 1 float32) | rank u8 | dims u32[rank] | count u32
    payload count*prod(dims) values | labels_original u16[count]
    labels_current u16[count]
"""

import json
import struct
from pathlib import Path

import numpy as np

from . import layers as L
from .datasets import LabeledDataset
from .errors import FormatError
from .network import Network, build_network

WEIGHT_MAGIC = b"ABLG"
DATA_MAGIC = b"ABLD"
WEIGHT_VERSION = 1
DATA_VERSION = 1

KIND_TAGS = {L.CONV2D: 1, L.RELU: 2, L.MAXPOOL2D: 3, L.FLATTEN: 4,
             L.DENSE: 5, L.DROPOUT: 6}
TAG_KINDS = {v: k for k, v in KIND_TAGS.items()}


class _Reader:
    """Byte cursor that raises FormatError with the offending offset."""

    def __init__(self, data: bytes, name: str):
        self.data = data
        self.name = name
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise FormatError(f"{self.name}: truncated, needed {n} more bytes", self.pos)
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack("<" + fmt, self.take(struct.calcsize("<" + fmt)))

    def array(self, dtype, count: int) -> np.ndarray:
        raw = self.take(count * np.dtype(dtype).itemsize)
        return np.frombuffer(raw, dtype=np.dtype(dtype).newbyteorder("<")).astype(dtype)

    def done(self):
        if self.pos != len(self.data):
            raise FormatError(f"{self.name}: {len(self.data) - self.pos} trailing bytes", self.pos)


def _pack_hyper(spec: L.LayerSpec) -> bytes:
    if spec.kind == L.CONV2D:
        return struct.pack("<5I", spec.in_channels, spec.out_channels,
                           spec.kernel_size, spec.stride, spec.padding)
    if spec.kind == L.MAXPOOL2D:
        return struct.pack("<2I", spec.kernel_size, spec.stride)
    if spec.kind == L.DENSE:
        return struct.pack("<2I", spec.in_features, spec.out_features)
    if spec.kind == L.DROPOUT:
        return struct.pack("<f", spec.rate)
    return b""


def _unpack_hyper(kind: str, r: _Reader) -> L.LayerSpec:
    if kind == L.CONV2D:
        in_c, out_c, k, s, p = r.unpack("5I")
        return L.conv2d(in_c, out_c, k, stride=s, padding=p)
    if kind == L.MAXPOOL2D:
        k, s = r.unpack("2I")
        return L.maxpool2d(k, stride=s)
    if kind == L.DENSE:
        in_f, out_f = r.unpack("2I")
        return L.dense(in_f, out_f)
    if kind == L.DROPOUT:
        (rate,) = r.unpack("f")
        return L.dropout(float(rate))
    return L.LayerSpec(kind)


def _pack_tensor(arr: np.ndarray) -> bytes:
    arr = np.ascontiguousarray(arr, dtype=np.float32)
    head = struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + arr.astype("<f4").tobytes()


def _unpack_tensor(r: _Reader) -> np.ndarray:
    (rank,) = r.unpack("B")
    dims = r.unpack(f"{rank}I") if rank else ()
    count = int(np.prod(dims)) if dims else 1
    return r.array(np.float32, count).reshape(dims)


def save_network(net: Network, path) -> None:
    """Write the ABLG file and its JSON metadata sidecar."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    blob = [WEIGHT_MAGIC, struct.pack("<HH", WEIGHT_VERSION, len(net.specs))]
    for spec, params in zip(net.specs, net.params):
        blob.append(struct.pack("<B", KIND_TAGS[spec.kind]))
        blob.append(_pack_hyper(spec))
        tensors = [params["W"], params["b"]] if params else []
        blob.append(struct.pack("<B", len(tensors)))
        for t in tensors:
            blob.append(_pack_tensor(t))
    path.write_bytes(b"".join(blob))
    sidecar = {
        "id": net.net_id,
        "seed": net.seed,
        "config_digest": net.config_digest,
        "input_shape": list(net.input_shape),
        "n_classes": net.n_classes,
    }
    path.with_suffix(path.suffix + ".json").write_text(
        json.dumps(sidecar, sort_keys=True, indent=2) + "\n")


def load_network(path, input_shape=None, n_classes=None) -> Network:
    """Read an ABLG file; shape metadata comes from the sidecar unless given."""
    path = Path(path)
    meta = {}
    sidecar = path.with_suffix(path.suffix + ".json")
    if sidecar.exists():
        meta = json.loads(sidecar.read_text())
    if input_shape is None:
        input_shape = meta.get("input_shape")
    if n_classes is None:
        n_classes = meta.get("n_classes")
    if input_shape is None or n_classes is None:
        raise FormatError(f"{path}: missing sidecar metadata (input_shape, n_classes)", 0)

    r = _Reader(path.read_bytes(), str(path))
    if r.take(4) != WEIGHT_MAGIC:
        raise FormatError(f"{path}: bad magic, expected ABLG", 0)
    version, n_layers = r.unpack("HH")
    if version != WEIGHT_VERSION:
        raise FormatError(f"{path}: unsupported version {version}", 4)
    specs, params = [], []
    for i in range(n_layers):
        tag_offset = r.pos
        (tag,) = r.unpack("B")
        if tag not in TAG_KINDS:
            raise FormatError(f"{path}: unknown layer kind tag {tag}", tag_offset)
        spec = _unpack_hyper(TAG_KINDS[tag], r)
        (n_tensors,) = r.unpack("B")
        tensors = [_unpack_tensor(r) for _ in range(n_tensors)]
        if spec.kind in L.UNIT_KINDS:
            if n_tensors != 2:
                raise FormatError(f"{path}: layer {i} expects W and b tensors", tag_offset)
            params.append({"W": tensors[0], "b": tensors[1]})
        else:
            if n_tensors != 0:
                raise FormatError(f"{path}: layer {i} ({spec.kind}) carries tensors", tag_offset)
            params.append({})
        specs.append(spec)
    r.done()

    net = build_network(specs, tuple(input_shape), int(n_classes),
                        seed=int(meta.get("seed", 0)),
                        net_id=str(meta.get("id", "")),
                        config_digest=str(meta.get("config_digest", "")))
    for p, loaded in zip(net.params, params):
        for key in p:
            if p[key].shape != loaded[key].shape:
                raise FormatError(f"{path}: tensor shape {loaded[key].shape} "
                                  f"mismatches spec {p[key].shape}", 0)
            p[key] = loaded[key]
    return net


_DTYPE_TAGS = {np.dtype(np.uint8): 0, np.dtype(np.float32): 1}
_TAG_DTYPES = {0: np.uint8, 1: np.float32}
_SPLIT_TAGS = {"train": 0, "test": 1}
_TAG_SPLITS = {0: "train", 1: "test"}


def save_dataset(ds: LabeledDataset, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    dtype = np.dtype(ds.x.dtype)
    if dtype not in _DTYPE_TAGS:
        raise FormatError(f"{path}: dataset payload must be uint8 or float32, got {dtype}", 0)
    dims = ds.sample_shape
    blob = [DATA_MAGIC,
            struct.pack("<HHBBB", DATA_VERSION, ds.n_classes,
                        _SPLIT_TAGS[ds.split], _DTYPE_TAGS[dtype], len(dims)),
            struct.pack(f"<{len(dims)}I", *dims),
            struct.pack("<I", len(ds))]
    payload = np.ascontiguousarray(ds.x)
    blob.append(payload.astype(payload.dtype.newbyteorder("<")).tobytes())
    blob.append(ds.original_labels.astype("<u2").tobytes())
    blob.append(ds.labels.astype("<u2").tobytes())
    path.write_bytes(b"".join(blob))


def load_dataset(path) -> LabeledDataset:
    path = Path(path)
    r = _Reader(path.read_bytes(), str(path))
    if r.take(4) != DATA_MAGIC:
        raise FormatError(f"{path}: bad magic, expected ABLD", 0)
    version, n_classes, split_tag, dtype_tag, rank = r.unpack("HHBBB")
    if version != DATA_VERSION:
        raise FormatError(f"{path}: unsupported version {version}", 4)
    if split_tag not in _TAG_SPLITS:
        raise FormatError(f"{path}: unknown split tag {split_tag}", 8)
    if dtype_tag not in _TAG_DTYPES:
        raise FormatError(f"{path}: unknown dtype tag {dtype_tag}", 9)
    dims = r.unpack(f"{rank}I") if rank else ()
    (count,) = r.unpack("I")
    x = r.array(_TAG_DTYPES[dtype_tag], count * int(np.prod(dims))).reshape(count, *dims)
    labels_offset = r.pos
    original = r.array(np.uint16, count).astype(np.int64)
    current = r.array(np.uint16, count).astype(np.int64)
    r.done()
    for arr in (original, current):
        if arr.size and arr.max() >= n_classes:
            raise FormatError(f"{path}: label {arr.max()} >= N={n_classes}", labels_offset)
    return LabeledDataset(x, current, original, int(n_classes),
                          split=_TAG_SPLITS[split_tag])
