"""Margin-distribution baseline for gap estimation.

Per-sample signed distance to the decision boundary between the true class
i and the runner-up class j, by first-order Taylor approximation:

    d = (f_i(x) - f_j(x)) / ||grad_x f_i(x) - grad_x f_j(x)||_2

positive iff the sample is classified correctly. Quartile features of the
distance distribution feed the same least-squares machinery as the
sparsity model. The IQR feature is reported but excluded from the
regression design matrix (it is exactly q75 - q25, which would make every
fit singular).
"""

from dataclasses import dataclass

import numpy as np

from .datasets import LabeledDataset
from .errors import DomainError
from .gap_model import least_squares, pearson, ssr
from .network import Network, backprop, forward_trace
from .rng import rng_for

UNDEFINED_MARGIN_EPS = 1e-12
FEATURE_NAMES = ("q25", "median", "q75", "iqr")
# regression design uses these plus an intercept; iqr is linearly dependent
FIT_FEATURES = ("q25", "median", "q75")


@dataclass
class MarginDistribution:
    network_id: str
    distances: np.ndarray          # defined distances only
    features: dict                 # q25 / median / q75 / iqr
    undefined_count: int

    def to_dict(self, include_distances: bool = False) -> dict:
        d = {"network_id": self.network_id, "features": self.features,
             "undefined_count": self.undefined_count,
             "sample_count": int(self.distances.size) + self.undefined_count}
        if include_distances:
            d["distances"] = [float(v) for v in self.distances]
        return d


def margin_distances(net: Network, x: np.ndarray, labels: np.ndarray,
                     batch_size: int = 256) -> tuple[np.ndarray, np.ndarray]:
    """Signed margin distance per sample; returns (distances, defined mask).

    Samples whose Taylor denominator falls below 1e-12 are flagged
    undefined (NaN distance, mask False) rather than dropped silently.
    """
    labels = np.asarray(labels)
    out = np.empty(x.shape[0], dtype=np.float64)
    defined = np.ones(x.shape[0], dtype=bool)
    for start in range(0, x.shape[0], batch_size):
        xb = x[start:start + batch_size]
        yb = labels[start:start + batch_size]
        trace = forward_trace(net, xb)
        logits = trace.logits.astype(np.float64)
        b = logits.shape[0]
        rows = np.arange(b)
        # runner-up: highest logit among the non-true classes
        masked = logits.copy()
        masked[rows, yb] = -np.inf
        j = masked.argmax(axis=1)
        numer = logits[rows, yb] - logits[rows, j]
        seed = np.zeros_like(trace.logits)
        seed[rows, yb] = 1.0
        seed[rows, j] -= 1.0
        _, gx = backprop(net, trace, seed)
        denom = np.sqrt((gx.astype(np.float64).reshape(b, -1) ** 2).sum(axis=1))
        ok = denom >= UNDEFINED_MARGIN_EPS
        vals = np.full(b, np.nan)
        vals[ok] = numer[ok] / denom[ok]
        out[start:start + b] = vals
        defined[start:start + b] = ok
    return out, defined


def margin_distance(net: Network, sample: np.ndarray, true_class: int) -> float:
    """Single-sample margin distance; NaN when the denominator is degenerate."""
    d, ok = margin_distances(net, sample[None], np.array([true_class]))
    return float(d[0]) if ok[0] else float("nan")


def margin_features(distances: np.ndarray) -> dict:
    """Quartile features {q25, median, q75, iqr}, linear-interpolated."""
    distances = np.asarray(distances, dtype=np.float64)
    if distances.ndim != 1 or distances.size < 4:
        raise DomainError(f"need at least 4 defined distances, got {distances.size}")
    q25, median, q75 = np.quantile(distances, [0.25, 0.5, 0.75], method="linear")
    return {"q25": float(q25), "median": float(median), "q75": float(q75),
            "iqr": float(q75 - q25)}


def collect_margins(net: Network, dataset: LabeledDataset,
                    network_id: str = "") -> MarginDistribution:
    """Margin distribution of a network over a dataset's effective labels."""
    d, ok = margin_distances(net, dataset.as_float(), dataset.labels)
    kept = d[ok]
    return MarginDistribution(network_id or net.net_id, kept,
                              margin_features(kept), int((~ok).sum()))


@dataclass
class MarginModel:
    coefficients: dict             # feature name (incl. "intercept") -> value
    pearson_r: float
    ssr: float

    def predict(self, features: dict) -> float:
        return sum(self.coefficients[name] * features[name] for name in FIT_FEATURES) \
            + self.coefficients["intercept"]

    def to_dict(self) -> dict:
        return {"coefficients": self.coefficients,
                "diagnostics": {"pearson_train": self.pearson_r,
                                "ssr_train": self.ssr}}


def _design(features_list) -> np.ndarray:
    return np.array([[f[name] for name in FIT_FEATURES] + [1.0] for f in features_list])


def fit_margin_model(features_list: list[dict], gaps) -> MarginModel:
    """Least-squares fit of the gap onto the margin quartile features."""
    gaps = np.asarray(gaps, dtype=np.float64)
    if len(features_list) != gaps.size:
        raise DomainError("one feature dict per gap value required")
    if len(features_list) < len(FIT_FEATURES) + 2:
        raise DomainError(f"margin fit needs >= {len(FIT_FEATURES) + 2} networks")
    x = _design(features_list)
    beta = least_squares(x, gaps, list(FIT_FEATURES) + ["intercept"])
    fitted = x @ beta
    coeffs = {name: float(b) for name, b in zip(list(FIT_FEATURES) + ["intercept"], beta)}
    return MarginModel(coeffs, pearson_r=pearson(fitted, gaps), ssr=ssr(fitted, gaps))


def margin_protocol(features_list: list[dict], gaps, train_fraction: float = 0.9,
                    repeats: int = 20, seed: int = 0) -> dict:
    """Repeated-split test SSR for the margin model.

    Uses the same (seed, repeat) split streams as the sparsity protocol so
    the two models are compared on identical splits.
    """
    gaps = np.asarray(gaps, dtype=np.float64)
    n = gaps.size
    n_train = int(round(train_fraction * n))
    if not len(FIT_FEATURES) + 2 <= n_train < n:
        raise DomainError(f"degenerate split sizes for margin protocol (n={n})")
    x = _design(features_list)
    ssrs, resid = [], []
    for r in range(repeats):
        perm = rng_for(seed, "protocol", r).permutation(n)
        tr, te = perm[:n_train], perm[n_train:]
        beta = least_squares(x[tr], gaps[tr], list(FIT_FEATURES) + ["intercept"])
        sq = (x[te] @ beta - gaps[te]) ** 2
        ssrs.append(float(sq.sum()))
        resid.extend(sq)
    return {"test_ssr_median": float(np.median(ssrs)),
            "test_ssrs": ssrs,
            "median_sq_residual": float(np.median(resid))}
