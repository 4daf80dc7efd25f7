"""Generalization-gap estimation via cumulative unit ablation.

The pipeline: train a zoo of small networks over varied strategies and
label-corruption fractions, sweep cumulative unit ablation per class to
get the two accuracy evolution curves, reduce them to the sparsity
quantities (zeta, kappa), and fit a linear model of the generalization gap
on those quantities. A margin-distribution baseline rides along for
comparison.
"""

__version__ = "0.1.0"

from .ablation import (AblationCurve, UnitAttribute, cumulative_ablation,
                       rank_units, resolve_layer, sweep_class, sweep_network,
                       unit_attributes)
from .datasets import LabeledDataset, SyntheticSpec, make_synthetic
from .errors import (AblgError, BoundsError, ConfigError, DomainError,
                     FormatError, SingularFitError, TrainingError,
                     UndefinedCorrelationError)
from .formats import load_dataset, load_network, save_dataset, save_network
from .gap_model import (GapSample, LinearGapModel, evaluate_protocol, fit,
                        pearson, predict, ssr)
from .margin import (MarginDistribution, MarginModel, collect_margins,
                     fit_margin_model, margin_distance, margin_distances,
                     margin_features)
from .network import (ForwardCache, Gradients, Network, UnitMask, accuracy,
                      backprop, backward, build_network, forward,
                      forward_capture, forward_trace, predictions,
                      resume_forward, softmax_cross_entropy)
from .sparsity import (SparsityQuantities, fuse, kappa, quantify_curve,
                       quantify_network, turning_point_asc, turning_point_desc,
                       zeta)
from .trainer import (TrainConfig, TrainResult, ZooEntry, ZooResult, build_zoo,
                      build_template, corrupt_labels, train)
