"""Linear gap model: fit by least squares, predict, and the repeated
0.9/0.1 split evaluation protocol with SSR and Pearson diagnostics."""

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import DomainError, SingularFitError, UndefinedCorrelationError
from .rng import rng_for

_RANK_RTOL = 1e-10


@dataclass(frozen=True)
class GapSample:
    network_id: str
    zeta: float
    kappa: float
    gap: float


@dataclass
class LinearGapModel:
    a: float                  # zeta coefficient
    b: float                  # kappa coefficient
    c: float                  # intercept
    pearson_r: float          # fitted vs true gaps on the training samples
    ssr: float                # training sum of squared residuals

    def to_dict(self) -> dict:
        return {"a": self.a, "b": self.b, "c": self.c,
                "diagnostics": {"pearson_train": self.pearson_r,
                                "ssr_train": self.ssr}}

    @staticmethod
    def from_dict(d: dict) -> "LinearGapModel":
        diag = d.get("diagnostics", {})
        return LinearGapModel(d["a"], d["b"], d["c"],
                              diag.get("pearson_train", float("nan")),
                              diag.get("ssr_train", float("nan")))


def least_squares(x: np.ndarray, y: np.ndarray, columns: list[str]) -> np.ndarray:
    """Minimum-SSR coefficients via orthogonal decomposition (SVD).

    Rank deficiency raises SingularFitError naming the dependent column(s),
    found by QR with column pivoting.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.ndim != 2 or y.shape != (x.shape[0],):
        raise DomainError(f"design matrix {x.shape} and targets {y.shape} mismatch")
    _, r_mat, piv = scipy.linalg.qr(x, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r_mat))
    rank = int((diag > _RANK_RTOL * max(diag[0], 1e-300)).sum()) if diag.size else 0
    if rank < x.shape[1]:
        raise SingularFitError([columns[piv[k]] for k in range(rank, x.shape[1])])
    beta, *_ = np.linalg.lstsq(x, y, rcond=None)
    return beta


def fit(samples: list[GapSample]) -> LinearGapModel:
    """Least-squares fit of gap = a*zeta + b*kappa + c over the samples."""
    if len(samples) < 3:
        raise DomainError(f"fit needs at least 3 samples, got {len(samples)}")
    x = np.array([[s.zeta, s.kappa, 1.0] for s in samples])
    y = np.array([s.gap for s in samples])
    a, b, c = least_squares(x, y, ["zeta", "kappa", "intercept"])
    fitted = x @ np.array([a, b, c])
    return LinearGapModel(float(a), float(b), float(c),
                          pearson_r=pearson(fitted, y),
                          ssr=ssr(fitted, y))


def predict(model: LinearGapModel, zeta: float, kappa: float) -> float:
    """Raw model output a*zeta + b*kappa + c, deliberately not clamped."""
    if not (np.isfinite(zeta) and np.isfinite(kappa)):
        raise DomainError("predict needs finite quantities")
    return model.a * zeta + model.b * kappa + model.c


def ssr(predictions, truths) -> float:
    """Sum of squared residuals."""
    p = np.asarray(predictions, dtype=np.float64)
    t = np.asarray(truths, dtype=np.float64)
    if p.shape != t.shape or p.ndim != 1 or p.size < 1:
        raise DomainError(f"prediction/truth length mismatch: {p.shape} vs {t.shape}")
    return float(((p - t) ** 2).sum())


def pearson(x, y) -> float:
    """Sample Pearson correlation coefficient."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1 or x.size < 2:
        raise DomainError("pearson needs two equal-length vectors of size >= 2")
    xc = x - x.mean()
    yc = y - y.mean()
    denom = np.sqrt((xc ** 2).sum() * (yc ** 2).sum())
    if denom == 0.0:
        raise UndefinedCorrelationError("zero variance makes the correlation undefined")
    return float((xc * yc).sum() / denom)


@dataclass
class ProtocolRepeat:
    train_idx: list
    test_idx: list
    model: LinearGapModel
    test_ssr: float


@dataclass
class ProtocolResult:
    repeats: list                       # ProtocolRepeat
    test_ssrs: np.ndarray
    sq_residuals: np.ndarray            # per held-out network, pooled over repeats
    baseline_sq_residuals: np.ndarray   # constant-mean-gap predictor on same splits

    def summary(self) -> dict:
        hist, edges = np.histogram(self.test_ssrs, bins=10)
        return {
            "repeats": len(self.repeats),
            "test_ssr": {"mean": float(self.test_ssrs.mean()),
                         "median": float(np.median(self.test_ssrs)),
                         "max": float(self.test_ssrs.max())},
            "median_sq_residual": float(np.median(self.sq_residuals)),
            "baseline_median_sq_residual": float(np.median(self.baseline_sq_residuals)),
            "histogram": {"counts": hist.tolist(), "edges": edges.tolist()},
        }


def evaluate_protocol(samples: list[GapSample], train_fraction: float = 0.9,
                      repeats: int = 100, seed: int = 0) -> ProtocolResult:
    """Repeated random-split evaluation; deterministic under `seed`.

    Each repeat draws its own RNG stream from (seed, repeat index), fits on
    the train split, and records the test-split SSR. The constant-mean-gap
    baseline predictor is scored on the same splits for comparison.
    """
    n = len(samples)
    n_train = int(round(train_fraction * n))
    if not 3 <= n_train < n:
        raise DomainError(
            f"degenerate split sizes: {n_train} train of {n} total at fraction {train_fraction}")
    if repeats < 1:
        raise DomainError("repeats must be >= 1")
    gaps = np.array([s.gap for s in samples])
    x = np.array([[s.zeta, s.kappa] for s in samples])

    out, ssrs, resid, base_resid = [], [], [], []
    for r in range(repeats):
        perm = rng_for(seed, "protocol", r).permutation(n)
        train_idx, test_idx = perm[:n_train], perm[n_train:]
        model = fit([samples[i] for i in train_idx])
        preds = model.a * x[test_idx, 0] + model.b * x[test_idx, 1] + model.c
        sq = (preds - gaps[test_idx]) ** 2
        base_sq = (gaps[train_idx].mean() - gaps[test_idx]) ** 2
        out.append(ProtocolRepeat(sorted(int(i) for i in train_idx),
                                  sorted(int(i) for i in test_idx),
                                  model, float(sq.sum())))
        ssrs.append(sq.sum())
        resid.extend(sq)
        base_resid.extend(base_sq)
    return ProtocolResult(out, np.array(ssrs), np.array(resid), np.array(base_resid))
