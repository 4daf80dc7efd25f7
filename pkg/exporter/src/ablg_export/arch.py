"""Architecture descriptors: the ordered layer list an exported checkpoint must match.

A descriptor JSON looks like:

    {
      "id": "my-net",
      "input_shape": [1, 12, 12],
      "n_classes": 10,
      "layers": [
        {"kind": "conv2d", "name": "conv1", "in_channels": 1,
         "out_channels": 12, "kernel_size": 3, "stride": 1, "padding": 1},
        {"kind": "relu"},
        {"kind": "maxpool2d", "kernel_size": 2, "stride": 2},
        {"kind": "flatten"},
        {"kind": "dense", "name": "fc", "in_features": 432, "out_features": 10}
      ]
    }

`name` maps a parameterized layer to its checkpoint keys `<name>.weight`
and `<name>.bias`. Supported kinds are exactly the ones the portable
format carries; anything else is rejected up front.
"""

import json
from dataclasses import dataclass, field
from pathlib import Path

SUPPORTED_KINDS = ("conv2d", "relu", "maxpool2d", "flatten", "dense", "dropout")
PARAM_KINDS = ("conv2d", "dense")

_REQUIRED_FIELDS = {
    "conv2d": ("name", "in_channels", "out_channels", "kernel_size"),
    "dense": ("name", "in_features", "out_features"),
    "maxpool2d": ("kernel_size",),
    "dropout": ("rate",),
    "relu": (),
    "flatten": (),
}


class ExportError(Exception):
    """Checkpoint or descriptor cannot be exported; message names the offender."""


@dataclass
class LayerDesc:
    kind: str
    name: str = ""
    in_channels: int = 0
    out_channels: int = 0
    kernel_size: int = 0
    stride: int = 1
    padding: int = 0
    in_features: int = 0
    out_features: int = 0
    rate: float = 0.0

    @property
    def weight_shape(self) -> tuple:
        if self.kind == "conv2d":
            return (self.out_channels, self.in_channels,
                    self.kernel_size, self.kernel_size)
        if self.kind == "dense":
            return (self.out_features, self.in_features)
        return ()

    @property
    def bias_shape(self) -> tuple:
        if self.kind == "conv2d":
            return (self.out_channels,)
        if self.kind == "dense":
            return (self.out_features,)
        return ()


@dataclass
class ArchDescriptor:
    net_id: str
    input_shape: tuple
    n_classes: int
    layers: list = field(default_factory=list)


def parse_layer(index: int, raw: dict) -> LayerDesc:
    kind = raw.get("kind", "<missing>")
    if kind not in SUPPORTED_KINDS:
        raise ExportError(
            f"layer {index} has unsupported kind {kind!r} "
            f"(supported: {', '.join(SUPPORTED_KINDS)})")
    missing = [f for f in _REQUIRED_FIELDS[kind] if f not in raw]
    if missing:
        raise ExportError(f"layer {index} ({kind}) is missing fields {missing}")
    known = {f.name for f in LayerDesc.__dataclass_fields__.values()}
    extra = set(raw) - known
    if extra:
        raise ExportError(f"layer {index} ({kind}) has unknown fields {sorted(extra)}")
    desc = LayerDesc(**raw)
    if kind == "maxpool2d" and "stride" not in raw:
        desc.stride = desc.kernel_size
    return desc


def load_descriptor(path) -> ArchDescriptor:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ExportError(f"{path} is not valid JSON: {e}") from None
    for key in ("input_shape", "n_classes", "layers"):
        if key not in doc:
            raise ExportError(f"{path}: descriptor is missing {key!r}")
    layers = [parse_layer(i, raw) for i, raw in enumerate(doc["layers"])]
    names = [l.name for l in layers if l.kind in PARAM_KINDS]
    if len(names) != len(set(names)):
        raise ExportError(f"{path}: duplicate layer names in descriptor")
    if not names:
        raise ExportError(f"{path}: descriptor has no parameterized layers")
    return ArchDescriptor(doc.get("id", path.stem), tuple(doc["input_shape"]),
                          int(doc["n_classes"]), layers)
