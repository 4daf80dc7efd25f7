"""Cumulative unit ablation: attribute ranking and accuracy evolution curves.

For one class subset, units of a layer are ranked by their mean L1
activation on that subset, then removed progressively in descending and in
ascending order while the per-class accuracy is recorded after each
removal. Both curves come from a single cached prefix pass; only the
suffix behind the ablation layer is recomputed per step.
"""

from dataclasses import dataclass

import numpy as np

from . import layers as L
from .datasets import LabeledDataset
from .errors import BoundsError, ConfigError, DomainError
from .network import (ForwardCache, Network, UnitMask, forward_capture,
                      predictions, resume_forward)


@dataclass
class UnitAttribute:
    layer_id: int
    values: np.ndarray      # (M,) nonnegative mean L1 activations

    @property
    def m(self) -> int:
        return self.values.shape[0]


@dataclass
class AblationCurve:
    class_id: int
    layer_id: int
    m: int
    e_desc: np.ndarray      # length M+1, descending-rank removals
    e_asc: np.ndarray       # length M+1, ascending-rank removals

    @property
    def baseline(self) -> float:
        return float(self.e_desc[0])


def resolve_layer(net: Network, selector) -> int:
    """Map a layer selector ("last-conv", "hidden-dense", or index) to a layer id."""
    if isinstance(selector, (int, np.integer)):
        idx = int(selector)
        if not 0 <= idx < len(net.specs) or net.specs[idx].kind not in L.UNIT_KINDS:
            raise ConfigError(f"layer {idx} is not an ablatable conv/dense layer")
        return idx
    if selector == "last-conv":
        for i in range(len(net.specs) - 1, -1, -1):
            if net.specs[i].kind == L.CONV2D:
                return i
        raise ConfigError("network has no conv2d layer for selector 'last-conv'")
    if selector == "hidden-dense":
        for i in range(len(net.specs) - 1, -1, -1):
            if net.specs[i].kind == L.DENSE and i + 1 < len(net.specs) \
                    and net.specs[i + 1].kind == L.RELU:
                return i
        raise ConfigError("network has no hidden dense layer for selector 'hidden-dense'")
    raise ConfigError(f"unknown layer selector {selector!r}")


def attributes_from_activations(act: np.ndarray) -> np.ndarray:
    """Mean-over-samples L1 attribute per unit from post-activation maps."""
    if act.ndim == 4:                       # (B, M, H, W) conv feature maps
        return np.abs(act).sum(axis=(2, 3), dtype=np.float64).mean(axis=0)
    if act.ndim == 2:                       # (B, M) dense neurons
        return np.abs(act).mean(axis=0, dtype=np.float64)
    raise DomainError(f"unsupported activation rank {act.ndim}")


def unit_attributes(net: Network, x_class: np.ndarray, layer_id: int) -> UnitAttribute:
    """Mean L1 activation of each unit of `layer_id` over the class subset."""
    if x_class.shape[0] == 0:
        raise DomainError("class subset is empty")
    cache = forward_capture(net, x_class, layer_id)
    return UnitAttribute(layer_id, attributes_from_activations(cache.activations))


def rank_units(attr: UnitAttribute, order: str = "descending") -> np.ndarray:
    """Stable rank permutation; ties resolve to the lower unit index first."""
    if order == "descending":
        return np.argsort(-attr.values, kind="stable")
    if order == "ascending":
        return np.argsort(attr.values, kind="stable")
    raise DomainError(f"order must be 'descending' or 'ascending', got {order!r}")


def _check_ranking(ranking: np.ndarray, m: int) -> np.ndarray:
    ranking = np.asarray(ranking, dtype=np.int64)
    if ranking.shape != (m,) or not np.array_equal(np.sort(ranking), np.arange(m)):
        raise DomainError(f"ranking must be a permutation of [0, {m})")
    return ranking


def _curve_from_cache(net: Network, cache: ForwardCache, ranking: np.ndarray,
                      targets) -> np.ndarray:
    """Accuracy after masking the first n ranked units, for n = 0..M."""
    m = ranking.shape[0]
    accs = np.empty(m + 1, dtype=np.float64)
    for n in range(m + 1):
        mask = UnitMask.of(cache.layer_id, ranking[:n])
        logits = resume_forward(net, cache, mask)
        accs[n] = float(np.mean(predictions(logits) == targets))
    return accs


def cumulative_ablation(net: Network, x_class: np.ndarray, class_id: int,
                        layer_id: int, ranking: np.ndarray) -> np.ndarray:
    """Per-class accuracy sequence of length M+1 for one removal order."""
    if x_class.shape[0] == 0:
        raise DomainError("class subset is empty")
    cache = forward_capture(net, x_class, layer_id)
    m = L.unit_count(net.specs[layer_id])
    ranking = _check_ranking(ranking, m)
    return _curve_from_cache(net, cache, ranking, class_id)


def sweep_class(net: Network, dataset: LabeledDataset, class_id: int,
                layer_id: int, eval_on: str = "class") -> AblationCurve:
    """Both evolution curves for one class, from a single cached prefix pass.

    eval_on="class" scores the fraction of the class subset predicted as
    that class; eval_on="dataset" scores whole-dataset accuracy instead
    (sensitivity mode; the ranking always comes from the class subset).
    """
    if eval_on not in ("class", "dataset"):
        raise DomainError(f"eval_on must be 'class' or 'dataset', got {eval_on!r}")
    class_rows = dataset.class_indices(class_id)
    if class_rows.size == 0:
        raise DomainError(f"class {class_id} has no samples")
    if eval_on == "class":
        cache = forward_capture(net, dataset.as_float()[class_rows], layer_id)
        attr_act = cache.activations
        targets = class_id
    else:
        cache = forward_capture(net, dataset.as_float(), layer_id)
        attr_act = cache.activations[class_rows]
        targets = dataset.labels
    attr = UnitAttribute(layer_id, attributes_from_activations(attr_act))
    e_desc = _curve_from_cache(net, cache, rank_units(attr, "descending"), targets)
    e_asc = _curve_from_cache(net, cache, rank_units(attr, "ascending"), targets)
    return AblationCurve(class_id, layer_id, attr.m, e_desc, e_asc)


def sweep_network(net: Network, dataset: LabeledDataset, layer_id: int,
                  classes=None, eval_on: str = "class",
                  map_fn=map) -> tuple[list[AblationCurve], list[int]]:
    """Sweep every (requested) class; returns (curves, classes skipped as empty)."""
    if classes is None:
        classes = range(dataset.n_classes)
    present = [j for j in classes if dataset.class_indices(j).size > 0]
    skipped = [j for j in classes if j not in present]
    curves = list(map_fn(
        lambda j: sweep_class(net, dataset, j, layer_id, eval_on=eval_on), present))
    return curves, skipped
