"""Test-time adaptation strategies and sample-filtering schemes.

Strategies: "tebn" re-estimates batch statistics with no parameter
update; "tent:<lr>" takes one optimizer step of entropy minimization on
the normalization affine parameters only; "sema:<alpha>" wraps the
victim's base estimator in an EMA whose state is committed per batch.

Filters keep low-entropy or high-confidence samples; the kept subset is
what the adaptation step sees (both its statistics and its loss).
Metric predictions are always made on the full batch.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import network as nn
from .normalization import Estimator, EstimatorKind
from .optim import make_optimizer
from .tensor import Tensor


@dataclass
class FilterSpec:
    kind: str  # "entropy" | "confidence"
    threshold: float

    def __post_init__(self):
        if self.kind == "entropy":
            if self.threshold <= 0:
                raise ValueError("entropy threshold must be positive")
        elif self.kind == "confidence":
            # 1.0 is allowed as a deliberately impossible bar
            if not 0.0 < self.threshold <= 1.0:
                raise ValueError("confidence threshold must lie in (0, 1]")
        else:
            raise ValueError(f"unknown filter kind {self.kind!r}")


def parse_filter(text, num_classes):
    """Parse "none" | "entropy[:<thr>]" | "confidence[:<thr>]".

    Default thresholds are conventions, not measured values: 0.4*ln(K)
    for entropy, 0.99 for confidence.
    """
    text = text.strip()
    if text == "none":
        return None
    head, _, arg = text.partition(":")
    if head == "entropy":
        thr = float(arg) if arg else 0.4 * math.log(num_classes)
        return FilterSpec("entropy", thr)
    if head == "confidence":
        thr = float(arg) if arg else 0.99
        return FilterSpec("confidence", thr)
    raise ValueError(
        f"invalid filter {text!r}; expected none, entropy:<thr> or confidence:<thr>"
    )


@dataclass
class AdaptStrategy:
    kind: str  # "tebn" | "tent" | "sema"
    lr: float = 1e-3
    steps_per_batch: int = 1
    filter: FilterSpec | None = None
    ema_alpha: float = 0.8
    optimizer: str = "adam"

    def __post_init__(self):
        if self.kind not in ("tebn", "tent", "sema"):
            raise ValueError(f"unknown strategy kind {self.kind!r}")
        if self.steps_per_batch < 0:
            raise ValueError("steps_per_batch must be non-negative")


def parse_strategy(text, filter_spec=None):
    """Parse "tebn" | "tent:<lr>" | "sema:<alpha>"."""
    head, _, arg = text.strip().partition(":")
    if head == "tebn":
        if arg:
            raise ValueError("tebn takes no argument")
        return AdaptStrategy("tebn", filter=filter_spec)
    if head == "tent":
        return AdaptStrategy("tent", lr=float(arg) if arg else 1e-3,
                             filter=filter_spec)
    if head == "sema":
        return AdaptStrategy("sema", ema_alpha=float(arg) if arg else 0.8,
                             filter=filter_spec)
    raise ValueError(
        f"invalid strategy {text!r}; expected tebn, tent:<lr> or sema:<alpha>"
    )


def bind_estimators(net, base_estimator, strategy):
    """Install per-layer estimators for the (estimator, strategy) pair.

    "sema" wraps the base estimator as the EMA's current-batch estimator;
    wrapping an ema/interp/source base is rejected as ambiguous.
    """
    if strategy.kind == "sema":
        if base_estimator.kind not in (
            EstimatorKind.TEBN, EstimatorKind.MEDBN, EstimatorKind.MEDBN_MAD
        ):
            raise ValueError(
                "sema requires a direct batch estimator (tebn/medbn/medbn-mad)"
            )
        wrapped = Estimator(
            EstimatorKind.EMA, ema_alpha=strategy.ema_alpha,
            inner=base_estimator.kind,
        )
        net.set_estimators(wrapped)
    else:
        net.set_estimators(base_estimator)
    return net


@dataclass
class FilterReport:
    total: int
    kept: int
    kept_malicious: int
    skipped: bool

    @property
    def leakage(self):
        """Fraction of kept samples that are malicious (0 if none kept)."""
        return self.kept_malicious / self.kept if self.kept else 0.0


def filter_batch(net, x, spec, mal_indices=None):
    """Select sample indices passing the filter.

    Entropy filters keep samples with prediction entropy below the
    threshold; confidence filters keep samples whose max softmax is at
    least the threshold. Malicious ground truth (from the harness) is
    only used for the leakage report.
    """
    logits, _ = nn.forward(net, x, stats_mode="batch")
    p = nn.softmax(logits)
    if spec.kind == "entropy":
        with np.errstate(divide="ignore", invalid="ignore"):
            plogp = np.where(p > 0, p * np.log(p), 0.0)
        per_sample = -plogp.sum(axis=-1)
        keep = per_sample < spec.threshold
    else:
        keep = p.max(axis=-1) >= spec.threshold
    kept_idx = np.flatnonzero(keep)
    mal = set() if mal_indices is None else set(int(i) for i in mal_indices)
    kept_mal = sum(1 for i in kept_idx if int(i) in mal)
    report = FilterReport(
        total=int(x.shape[0]), kept=int(kept_idx.size),
        kept_malicious=kept_mal, skipped=kept_idx.size == 0,
    )
    return kept_idx, report


@dataclass
class AdaptReport:
    skipped: bool = False
    filter_report: FilterReport | None = None
    committed: bool = False
    entropy_before: float | None = None


def tent_params(net):
    return [p for p in net.parameters() if p.partition == nn.AFFINE_BN]


def adapt_once(net, x, strategy, optimizer=None, mal_indices=None):
    """Adapt the network in place on one batch; returns an AdaptReport.

    tebn: statistics only, no parameter update. tent: steps_per_batch
    optimizer steps of entropy minimization on gamma/beta, backbone
    frozen. sema: estimate EMA statistics and commit the state.
    """
    report = AdaptReport()
    if strategy.filter is not None:
        kept_idx, freport = filter_batch(net, x, strategy.filter, mal_indices)
        report.filter_report = freport
        if freport.skipped:
            report.skipped = True
            return report
        arr = (x.data if isinstance(x, Tensor) else np.asarray(x))[kept_idx]
        x = Tensor(arr)
    if x.shape[0] == 0:
        report.skipped = True
        return report

    if strategy.kind == "tebn":
        return report
    if strategy.kind == "sema":
        for _, layer in net.norm_layers():
            if layer.estimator.kind is not EstimatorKind.EMA:
                raise ValueError("sema strategy requires ema estimators")
        _, cache = nn.forward(net, x, stats_mode="batch")
        for i, layer in net.norm_layers():
            _, saved = cache[i]
            layer.commit_ema(saved.stats)
        report.committed = True
        return report

    # tent
    params = tent_params(net)
    if optimizer is None:
        optimizer = make_optimizer(strategy.optimizer, strategy.lr)
    for _ in range(strategy.steps_per_batch):
        logits, cache = nn.forward(net, x, stats_mode="batch")
        report.entropy_before = nn.entropy_loss(logits)
        grads, _ = nn.backward(net, cache, nn.entropy_grad(logits))
        arrays = [p.get(net) for p in params]
        garrays = [grads[(p.layer_index, p.name)] for p in params]
        optimizer.step(arrays, garrays)
    return report


def predict(net, x, stats_source="batch"):
    """Argmax class predictions; ties resolve to the lowest class index."""
    logits, _ = nn.forward(net, x, stats_mode=stats_source)
    return np.argmax(logits.data, axis=-1)


class AdaptSession:
    """A network plus its strategy and persistent optimizer state."""

    def __init__(self, net, strategy, base_estimator=None):
        if base_estimator is not None:
            bind_estimators(net, base_estimator, strategy)
        self.net = net
        self.strategy = strategy
        self.optimizer = (
            make_optimizer(strategy.optimizer, strategy.lr)
            if strategy.kind == "tent" else None
        )

    def adapt(self, x, mal_indices=None):
        return adapt_once(self.net, x, self.strategy, self.optimizer, mal_indices)

    def clone(self):
        out = AdaptSession.__new__(AdaptSession)
        out.net = self.net.clone()
        out.strategy = self.strategy
        out.optimizer = self.optimizer.copy() if self.optimizer else None
        return out
