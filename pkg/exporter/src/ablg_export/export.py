"""Checkpoint export: PyTorch state_dict -> ABLG file + manifest.

The manifest records the source framework/version, the layer mapping
table, and reference logits on a fixed probe batch. Logit agreement when
the exported file is loaded elsewhere is the only correctness contract;
any tensor-layout mistake shows up there.
"""

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .arch import ArchDescriptor, ExportError, PARAM_KINDS, load_descriptor
from .writer import write_weights

PROBE_SEED = 20240817      # published; the probe batch is reproducible from it
PROBE_BATCH = 8


def probe_batch(input_shape, seed: int = PROBE_SEED) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return rng.standard_normal((PROBE_BATCH, *input_shape)).astype(np.float32)


def load_state_dict(ckpt_path) -> dict:
    try:
        blob = torch.load(ckpt_path, map_location="cpu", weights_only=True)
    except Exception as e:
        raise ExportError(f"{ckpt_path}: cannot read checkpoint: {e}") from None
    if isinstance(blob, dict) and "state_dict" in blob:
        blob = blob["state_dict"]
    if not isinstance(blob, dict) or not all(
            torch.is_tensor(v) for v in blob.values()):
        raise ExportError(f"{ckpt_path}: checkpoint is not a state_dict")
    return blob


def build_torch_model(arch: ArchDescriptor) -> nn.Sequential:
    mods = []
    for layer in arch.layers:
        if layer.kind == "conv2d":
            mods.append(nn.Conv2d(layer.in_channels, layer.out_channels,
                                  layer.kernel_size, stride=layer.stride,
                                  padding=layer.padding))
        elif layer.kind == "relu":
            mods.append(nn.ReLU())
        elif layer.kind == "maxpool2d":
            mods.append(nn.MaxPool2d(layer.kernel_size, stride=layer.stride))
        elif layer.kind == "flatten":
            mods.append(nn.Flatten())
        elif layer.kind == "dense":
            mods.append(nn.Linear(layer.in_features, layer.out_features))
        else:
            mods.append(nn.Dropout(layer.rate))
    return nn.Sequential(*mods)


def match_parameters(arch: ArchDescriptor, state: dict) -> dict:
    """Map descriptor layers onto checkpoint tensors; reject any leftovers."""
    params = {}
    consumed = set()
    for i, layer in enumerate(arch.layers):
        if layer.kind not in PARAM_KINDS:
            continue
        for suffix, want_shape in (("weight", layer.weight_shape),
                                   ("bias", layer.bias_shape)):
            key = f"{layer.name}.{suffix}"
            if key not in state:
                raise ExportError(f"checkpoint is missing {key!r} "
                                  f"for layer {i} ({layer.kind})")
            got = tuple(state[key].shape)
            if got != want_shape:
                raise ExportError(f"{key}: shape {got} does not match "
                                  f"descriptor {want_shape}")
            consumed.add(key)
        params[layer.name] = (state[f"{layer.name}.weight"].numpy(),
                              state[f"{layer.name}.bias"].numpy())
    leftovers = sorted(set(state) - consumed)
    if leftovers:
        raise ExportError(
            "checkpoint carries tensors with no supported layer mapping: "
            + ", ".join(leftovers))
    return params


@dataclass
class ExportResult:
    weights_path: Path
    manifest_path: Path
    manifest: dict


def export(ckpt_path, arch_path, out_path, manifest_path=None) -> ExportResult:
    """Export a checkpoint; returns paths plus the manifest contents."""
    arch = load_descriptor(arch_path)
    state = load_state_dict(ckpt_path)
    params = match_parameters(arch, state)

    model = build_torch_model(arch)
    renamed = {}
    for torch_idx, layer in enumerate(arch.layers):
        if layer.kind in PARAM_KINDS:
            renamed[f"{torch_idx}.weight"] = torch.from_numpy(params[layer.name][0])
            renamed[f"{torch_idx}.bias"] = torch.from_numpy(params[layer.name][1])
    model.load_state_dict(renamed, strict=True)
    model.eval()

    probe = probe_batch(arch.input_shape)
    with torch.no_grad():
        logits = model(torch.from_numpy(probe)).numpy()
    if logits.shape != (PROBE_BATCH, arch.n_classes):
        raise ExportError(f"probe forward produced shape {logits.shape}, "
                          f"expected ({PROBE_BATCH}, {arch.n_classes})")

    ckpt_digest = hashlib.sha256(Path(ckpt_path).read_bytes()).hexdigest()[:16]
    out_path = Path(out_path)
    write_weights(arch, params, out_path, config_digest=ckpt_digest)

    mapping = []
    for i, layer in enumerate(arch.layers):
        row = {"index": i, "kind": layer.kind}
        if layer.kind in PARAM_KINDS:
            row["source"] = layer.name
        mapping.append(row)
    manifest = {
        "framework": "pytorch",
        "framework_version": torch.__version__,
        "checkpoint_digest": ckpt_digest,
        "network_id": arch.net_id,
        "input_shape": list(arch.input_shape),
        "n_classes": arch.n_classes,
        "layer_mapping": mapping,
        "probe": {
            "seed": PROBE_SEED,
            "batch": PROBE_BATCH,
            "digest": hashlib.sha256(probe.tobytes()).hexdigest(),
        },
        "reference_logits": [[float(v) for v in row] for row in logits],
    }
    manifest_path = Path(manifest_path) if manifest_path else \
        out_path.with_suffix(out_path.suffix + ".manifest.json")
    manifest_path.parent.mkdir(parents=True, exist_ok=True)
    manifest_path.write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n")
    return ExportResult(out_path, manifest_path, manifest)
