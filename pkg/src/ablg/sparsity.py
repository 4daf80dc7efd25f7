"""Turning points and the two sparsity quantities derived from ablation curves.

For a descending-order curve E and ascending-order curve E_r over M units:

  n0   = smallest n with E(n) <= chance accuracy (M + degenerate flag if never)
  n0_r = largest n maximizing E_r(n)
  zeta  = (n0 + M - n0_r) / (2M), in [0, 1]; smaller = sparser critical units
  kappa = (1/M) * sum_{n=0..M} |E_r(n) - E(n)|, in [0, (M+1)/M]; larger = sparser

kappa sums M+1 terms but divides by M, so its upper bound is (M+1)/M rather
than 1; the value is kept verbatim instead of being renormalized. When
networks with different training accuracies are compared, kappa may be
divided by the network's training accuracy (mode recorded in the output).
"""

from dataclasses import dataclass

import numpy as np

from .ablation import AblationCurve
from .errors import DomainError


def turning_point_desc(e: np.ndarray, acc_chance: float) -> tuple[int, bool]:
    """Smallest n with E(n) <= chance; (M, True) when the curve never reaches it."""
    e = np.asarray(e, dtype=np.float64)
    hits = np.flatnonzero(e <= acc_chance)
    if hits.size == 0:
        return e.shape[0] - 1, True
    return int(hits[0]), False


def turning_point_asc(e_r: np.ndarray) -> int:
    """Largest n attaining the maximum of E_r (so M - n0_r is minimal)."""
    e_r = np.asarray(e_r, dtype=np.float64)
    return int(np.flatnonzero(e_r == e_r.max())[-1])


def zeta(n0: int, n0_r: int, m: int) -> float:
    if m < 1:
        raise DomainError("zeta needs at least one unit (M >= 1)")
    if not (0 <= n0 <= m and 0 <= n0_r <= m):
        raise DomainError(f"turning points must lie in [0, {m}], got {n0}, {n0_r}")
    return (n0 + m - n0_r) / (2.0 * m)


def kappa(e: np.ndarray, e_r: np.ndarray, normalize_by: float | None = None) -> float:
    e = np.asarray(e, dtype=np.float64)
    e_r = np.asarray(e_r, dtype=np.float64)
    if e.shape != e_r.shape or e.ndim != 1 or e.shape[0] < 2:
        raise DomainError("curves must be equal-length vectors over n = 0..M")
    m = e.shape[0] - 1
    value = float(np.abs(e_r - e).sum() / m)
    if normalize_by is not None:
        if normalize_by <= 0.0:
            raise DomainError(f"normalization accuracy must be positive, got {normalize_by}")
        value /= normalize_by
    return value


@dataclass
class TurningPoints:
    n0: int
    n0_r: int
    acc_chance: float
    degenerate: bool = False


@dataclass
class ClassQuantities:
    class_id: int
    n0: int
    n0_r: int
    zeta: float
    kappa: float
    degenerate: bool

    def to_dict(self) -> dict:
        flags = ["degenerate_desc"] if self.degenerate else []
        return {"class": self.class_id, "n0": self.n0, "n0_r": self.n0_r,
                "zeta": self.zeta, "kappa": self.kappa, "flags": flags}


@dataclass
class SparsityQuantities:
    network_id: str
    layer_id: int
    m: int
    acc_chance: float
    per_class: list                     # ClassQuantities
    zeta: float                         # fused
    kappa: float                        # fused
    normalization: str                  # "none" | "train_acc"
    normalize_by: float | None = None
    skipped_classes: list | None = None

    @property
    def degenerate_classes(self) -> list:
        return [q.class_id for q in self.per_class if q.degenerate]

    def to_dict(self) -> dict:
        return {
            "network_id": self.network_id,
            "layer": self.layer_id,
            "M": self.m,
            "acc_chance": self.acc_chance,
            "per_class": [q.to_dict() for q in self.per_class],
            "fused": {"zeta": self.zeta, "kappa": self.kappa},
            "normalization": {"mode": self.normalization,
                              "train_accuracy": self.normalize_by},
            "degenerate_classes": self.degenerate_classes,
            "skipped_classes": self.skipped_classes or [],
        }


def quantify_curve(curve: AblationCurve, acc_chance: float,
                   normalize_by: float | None = None) -> ClassQuantities:
    n0, degenerate = turning_point_desc(curve.e_desc, acc_chance)
    n0_r = turning_point_asc(curve.e_asc)
    return ClassQuantities(curve.class_id, n0, n0_r,
                           zeta(n0, n0_r, curve.m),
                           kappa(curve.e_desc, curve.e_asc, normalize_by),
                           degenerate)


def fuse(per_class: list) -> tuple[float, float]:
    """Average the per-class quantities into the dataset-level pair."""
    if not per_class:
        raise DomainError("fusion needs at least one class")
    return (float(np.mean([q.zeta for q in per_class])),
            float(np.mean([q.kappa for q in per_class])))


def quantify_network(curves: list, acc_chance: float, network_id: str = "",
                     normalize_by: float | None = None,
                     skipped_classes: list | None = None) -> SparsityQuantities:
    """Per-class and fused quantities for one network's curve set."""
    if not curves:
        raise DomainError("no ablation curves to quantify")
    per_class = [quantify_curve(c, acc_chance, normalize_by) for c in curves]
    fz, fk = fuse(per_class)
    return SparsityQuantities(
        network_id=network_id, layer_id=curves[0].layer_id, m=curves[0].m,
        acc_chance=acc_chance, per_class=per_class, zeta=fz, kappa=fk,
        normalization="none" if normalize_by is None else "train_acc",
        normalize_by=normalize_by, skipped_classes=skipped_classes)
