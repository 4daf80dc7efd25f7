"""Training: label corruption, SGD with momentum, and network zoos.

Networks are trained for a fixed epoch budget and the achieved accuracies
are recorded; under heavy label corruption a small network may not reach
1.0 train accuracy, and the downstream metrics normalize by the recorded
training accuracy instead of assuming it.
"""

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import layers as L
from .datasets import LabeledDataset
from .errors import ConfigError, DomainError, TrainingError
from .network import (Network, accuracy, backprop, build_network, forward_trace,
                      softmax_cross_entropy)
from .rng import rng_for

BATCH_SIZES = (32, 64, 128)
MOMENTA = (0.0, 0.5, 0.9)
WEIGHT_DECAYS = (0.0, 1e-4)
DROPOUT_RATES = (0.0, 0.3, 0.5)
CORRUPTION_FRACTIONS = (0.0, 0.25, 0.5, 0.75, 1.0)


def build_template(template_id: str, input_shape, n_classes: int,
                   dropout_rate: float = 0.0):
    """Layer stack for a named architecture template."""
    if len(input_shape) == 3:
        c, h, w = input_shape
    elif len(input_shape) == 1:
        c, h, w = 0, 0, 0
    else:
        raise ConfigError(f"unsupported input shape {input_shape}")

    if template_id == "cnn-m32":
        # last conv layer has M=32 units; that is the default ablation layer
        if len(input_shape) != 3:
            raise ConfigError("cnn-m32 needs image input (C, H, W)")
        h2, w2 = h // 2 // 2, w // 2 // 2
        return [
            L.conv2d(c, 12, 3, padding=1), L.relu(), L.maxpool2d(2),
            L.conv2d(12, 32, 3, padding=1), L.relu(), L.maxpool2d(2),
            L.flatten(),
            L.dense(32 * h2 * w2, 128), L.relu(), L.dropout(dropout_rate),
            L.dense(128, n_classes),
        ]
    if template_id == "cnn-m16":
        if len(input_shape) != 3:
            raise ConfigError("cnn-m16 needs image input (C, H, W)")
        h2, w2 = h // 2, w // 2
        return [
            L.conv2d(c, 8, 3, padding=1), L.relu(), L.maxpool2d(2),
            L.conv2d(8, 16, 3, padding=1), L.relu(),
            L.flatten(),
            L.dense(16 * h2 * w2, 64), L.relu(), L.dropout(dropout_rate),
            L.dense(64, n_classes),
        ]
    if template_id == "mlp-small":
        n_in = int(np.prod(input_shape))
        specs = [L.flatten()] if len(input_shape) > 1 else []
        return specs + [L.dense(n_in, 64), L.relu(), L.dropout(dropout_rate),
                        L.dense(64, n_classes)]
    if template_id == "linear":
        n_in = int(np.prod(input_shape))
        specs = [L.flatten()] if len(input_shape) > 1 else []
        return specs + [L.dense(n_in, n_classes)]
    raise ConfigError(f"unknown template id {template_id!r}")


@dataclass(frozen=True)
class TrainConfig:
    template: str = "cnn-m32"
    epochs: int = 100
    batch_size: int = 64
    learning_rate: float = 0.05
    momentum: float = 0.9
    weight_decay: float = 0.0
    dropout: float = 0.0
    corruption_fraction: float = 0.0
    seed: int = 0

    def validate(self) -> "TrainConfig":
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.batch_size not in BATCH_SIZES:
            raise ConfigError(f"batch_size must be one of {BATCH_SIZES}")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if self.momentum not in MOMENTA:
            raise ConfigError(f"momentum must be one of {MOMENTA}")
        if self.weight_decay not in WEIGHT_DECAYS:
            raise ConfigError(f"weight_decay must be one of {WEIGHT_DECAYS}")
        if self.dropout not in DROPOUT_RATES:
            raise ConfigError(f"dropout must be one of {DROPOUT_RATES}")
        if self.corruption_fraction not in CORRUPTION_FRACTIONS:
            raise ConfigError(f"corruption_fraction must be one of {CORRUPTION_FRACTIONS}")
        return self

    def digest(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()

    def network_id(self) -> str:
        return "net-" + self.digest()[:10]

    @staticmethod
    def from_dict(d: dict) -> "TrainConfig":
        known = {f for f in TrainConfig.__dataclass_fields__}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown TrainConfig fields: {sorted(extra)}")
        return TrainConfig(**d).validate()


@dataclass
class ZooEntry:
    network_id: str
    config: TrainConfig
    train_accuracy: float
    test_accuracy: float

    @property
    def gap(self) -> float:
        return self.train_accuracy - self.test_accuracy

    def to_dict(self) -> dict:
        return {"network_id": self.network_id, "config": asdict(self.config),
                "train_accuracy": self.train_accuracy,
                "test_accuracy": self.test_accuracy, "gap": self.gap}


def corrupt_labels(dataset: LabeledDataset, fraction: float, seed: int) -> LabeledDataset:
    """Replace round(fraction*|D_k|) labels per class with uniform random classes.

    A corrupted label may coincide with the original; only labels change,
    never sample features, and original labels ride along for bookkeeping.
    """
    if not 0.0 <= fraction <= 1.0:
        raise DomainError(f"corruption fraction must be in [0, 1], got {fraction}")
    n = dataset.n_classes
    counts = np.bincount(dataset.labels, minlength=n)
    if counts.min() < 1:
        raise DomainError("every class needs at least one sample to corrupt")
    labels = dataset.labels.copy()
    rng = rng_for(seed, "corrupt")
    for k in range(n):
        idx = np.flatnonzero(dataset.labels == k)
        m = int(math.floor(fraction * idx.size + 0.5))
        if m == 0:
            continue
        chosen = rng.choice(idx, size=m, replace=False)
        labels[chosen] = rng.integers(0, n, size=m)
    return replace(dataset, labels=labels)


@dataclass
class TrainResult:
    network: Network
    entry: ZooEntry
    epoch_losses: list


def _sgd_step(net: Network, pgrads, velocity, lr: float, momentum: float,
              weight_decay: float):
    for p, g, v in zip(net.params, pgrads, velocity):
        for key in p:
            grad = g[key]
            if weight_decay:
                grad = grad + weight_decay * p[key]
            v[key] = momentum * v[key] - lr * grad
            p[key] += v[key]


def train(config: TrainConfig, train_ds: LabeledDataset,
          test_ds: LabeledDataset) -> TrainResult:
    """Train one network; deterministic given (config, data)."""
    config.validate()
    corrupted = corrupt_labels(train_ds, config.corruption_fraction, seed=config.seed)
    specs = build_template(config.template, train_ds.sample_shape,
                           train_ds.n_classes, dropout_rate=config.dropout)
    net = build_network(specs, train_ds.sample_shape, train_ds.n_classes,
                        seed=config.seed, net_id=config.network_id(),
                        config_digest=config.digest())
    x = corrupted.as_float()
    y = corrupted.labels
    n = len(corrupted)

    velocity = [{k: np.zeros_like(v) for k, v in p.items()} for p in net.params]
    shuffle_rng = rng_for(config.seed, "shuffle")
    drop_rng = rng_for(config.seed, "dropout")
    epoch_losses = []
    for epoch in range(config.epochs):
        perm = shuffle_rng.permutation(n)
        batch_losses = []
        for start in range(0, n, config.batch_size):
            sel = perm[start:start + config.batch_size]
            # overflow here is the divergence signal, caught right below
            with np.errstate(over="ignore", invalid="ignore"):
                trace = forward_trace(net, x[sel], train=True, rng=drop_rng)
                loss, grad = softmax_cross_entropy(trace.logits, y[sel])
            if not np.isfinite(loss):
                raise TrainingError(f"training loss diverged to {loss}", epoch)
            pgrads, _ = backprop(net, trace, grad)
            _sgd_step(net, pgrads, velocity, config.learning_rate,
                      config.momentum, config.weight_decay)
            batch_losses.append(loss)
        epoch_losses.append(float(np.mean(batch_losses)))

    entry = ZooEntry(config.network_id(), config,
                     train_accuracy=accuracy(net, x, y),
                     test_accuracy=accuracy(net, test_ds.as_float(), test_ds.labels))
    return TrainResult(net, entry, epoch_losses)


@dataclass
class ZooResult:
    entries: list = field(default_factory=list)       # ZooEntry, successful runs
    networks: dict = field(default_factory=dict)      # network_id -> Network
    failures: list = field(default_factory=list)      # {config, error}

    @property
    def gap_spread(self) -> float:
        if not self.entries:
            return 0.0
        gaps = [e.gap for e in self.entries]
        return max(gaps) - min(gaps)

    def manifest(self) -> dict:
        return {
            "entries": [e.to_dict() for e in self.entries],
            "failures": list(self.failures),
            "gap_spread": self.gap_spread,
        }


def build_zoo(configs, train_ds: LabeledDataset, test_ds: LabeledDataset,
              map_fn=map) -> ZooResult:
    """Train every config; failed members land in the failure report, not dropped."""
    if not configs:
        raise ConfigError("zoo config grid is empty")
    result = ZooResult()

    def _one(config):
        try:
            return config, train(config, train_ds, test_ds), None
        except TrainingError as e:
            return config, None, str(e)

    for config, res, err in map_fn(_one, list(configs)):
        if err is not None:
            result.failures.append({"config": asdict(config), "error": err})
        else:
            result.entries.append(res.entry)
            result.networks[res.entry.network_id] = res.network
    return result
