"""Desk-scale lab for data-poisoning attacks on test-time adaptation.

Small differentiable networks with swappable batch-norm statistics
estimators, a PGD attack on shared batch statistics, adaptation
strategies with sample filters, and verification suites for the
robustness properties of median aggregation.
"""

__version__ = "0.1.0"

from .normalization import (
    ChannelStats,
    Estimator,
    EstimatorKind,
    NormLayer,
    estimate_stats,
    normalize_backward,
    normalize_forward,
    parse_estimator,
)
from .robust import (
    SampleSet,
    cwmed,
    geomed,
    lemma9_factor,
    mad,
    mean,
    median,
    median_breach_search,
    worst_case_mean_shift,
)
from .tensor import Tensor, elementwise, reduce_over_bhw

__all__ = [
    "ChannelStats", "Estimator", "EstimatorKind", "NormLayer", "SampleSet",
    "Tensor", "cwmed", "elementwise", "estimate_stats", "geomed",
    "lemma9_factor", "mad", "mean", "median", "median_breach_search",
    "normalize_backward", "normalize_forward", "parse_estimator",
    "reduce_over_bhw", "worst_case_mean_shift",
]
