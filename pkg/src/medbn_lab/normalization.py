"""Batch-normalization layer with pluggable statistics estimators.

Estimators: frozen source stats, test-batch mean/variance (tebn), batch
median with mean squared deviation (medbn), median with MAD scale
(medbn-mad), exponential moving average over a current-batch estimator
(ema), and source/test interpolation (interp).

Gradients treat statistics as functions of the input per the estimator;
the median routes its gradient to the single selected order-statistic
element (lowest flat index on ties).
"""

import copy
from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import kernels as K
from .tensor import Tensor, channel_slices, from_channel_slices


class EstimatorKind(str, Enum):
    SOURCE = "source"
    TEBN = "tebn"
    MEDBN = "medbn"
    MEDBN_MAD = "medbn-mad"
    EMA = "ema"
    INTERP = "interp"


_CURRENT_KINDS = (EstimatorKind.TEBN, EstimatorKind.MEDBN, EstimatorKind.MEDBN_MAD)


@dataclass
class ChannelStats:
    """Per-channel location and squared-scale pair."""

    loc: np.ndarray
    scale_sq: np.ndarray

    def __post_init__(self):
        self.loc = np.asarray(self.loc, dtype=np.float64)
        self.scale_sq = np.asarray(self.scale_sq, dtype=np.float64)
        if self.loc.ndim != 1 or self.loc.shape != self.scale_sq.shape:
            raise ValueError("loc and scale_sq must be equal-length vectors")
        if np.any(self.scale_sq < 0):
            raise ValueError("scale_sq must be non-negative")

    @property
    def num_channels(self):
        return self.loc.shape[0]

    def copy(self):
        return ChannelStats(self.loc.copy(), self.scale_sq.copy())


@dataclass
class Estimator:
    kind: EstimatorKind
    ema_alpha: float = 0.8
    ema_state: ChannelStats | None = None
    interp_lambda: float = 0.5
    inner: EstimatorKind = EstimatorKind.TEBN

    def __post_init__(self):
        self.kind = EstimatorKind(self.kind)
        self.inner = EstimatorKind(self.inner)
        if not 0.0 <= self.ema_alpha <= 1.0:
            raise ValueError("ema_alpha must lie in [0, 1]")
        if not 0.0 <= self.interp_lambda <= 1.0:
            raise ValueError("interp_lambda must lie in [0, 1]")
        if self.inner not in _CURRENT_KINDS:
            raise ValueError("inner estimator must be tebn, medbn or medbn-mad")

    def copy(self):
        return Estimator(
            kind=self.kind,
            ema_alpha=self.ema_alpha,
            ema_state=self.ema_state.copy() if self.ema_state else None,
            interp_lambda=self.interp_lambda,
            inner=self.inner,
        )


def parse_estimator(text):
    """Parse "source" | "tebn" | "medbn" | "medbn-mad" | "ema:<a>" | "interp:<l>"."""
    head, _, arg = text.strip().partition(":")
    try:
        if head == "ema":
            return Estimator(EstimatorKind.EMA, ema_alpha=float(arg) if arg else 0.8)
        if head == "interp":
            return Estimator(
                EstimatorKind.INTERP, interp_lambda=float(arg) if arg else 0.5
            )
        if arg:
            raise ValueError
        return Estimator(EstimatorKind(head))
    except ValueError:
        valid = "source, tebn, medbn, medbn-mad, ema:<alpha>, interp:<lambda>"
        raise ValueError(f"invalid estimator {text!r}; expected one of: {valid}")


@dataclass
class NormLayer:
    gamma: np.ndarray
    beta: np.ndarray
    src_stats: ChannelStats
    estimator: Estimator
    eps_bn: float = 1e-5

    def __post_init__(self):
        self.gamma = np.asarray(self.gamma, dtype=np.float64)
        self.beta = np.asarray(self.beta, dtype=np.float64)
        if self.eps_bn <= 0:
            raise ValueError("eps_bn must be positive")
        c = self.src_stats.num_channels
        if self.gamma.shape != (c,) or self.beta.shape != (c,):
            raise ValueError("gamma/beta length must match channel count")

    @property
    def num_channels(self):
        return self.src_stats.num_channels

    def committed_stats(self):
        """Stats that do not depend on the current batch (EMA state or source)."""
        if self.estimator.kind is EstimatorKind.EMA:
            return (self.estimator.ema_state or self.src_stats).copy()
        return self.src_stats.copy()

    def commit_ema(self, stats):
        """Advance EMA state after a batch is finalized."""
        if self.estimator.kind is not EstimatorKind.EMA:
            raise ValueError("commit_ema requires an ema estimator")
        self.estimator.ema_state = stats.copy()

    def copy(self):
        return NormLayer(
            gamma=self.gamma.copy(),
            beta=self.beta.copy(),
            src_stats=self.src_stats.copy(),
            estimator=self.estimator.copy(),
            eps_bn=self.eps_bn,
        )


@dataclass
class NormCache:
    """Intermediates saved by the cached forward for the exact backward."""

    cs: np.ndarray
    shape: tuple
    stats: ChannelStats
    cur_weight: float = 1.0
    cur_kind: EstimatorKind | None = None
    cur_loc: np.ndarray | None = None
    eta: np.ndarray | None = None
    sel: np.ndarray | None = None
    mad: np.ndarray | None = None
    sel_dev: np.ndarray | None = None
    selection: tuple = ()


def _current_stats(kind, cs):
    """Current-batch stats for one of the direct estimator kinds."""
    cache = {}
    if kind is EstimatorKind.TEBN:
        loc, var = K.tebn_stats(cs)
        cache["cur_loc"] = loc
        stats = ChannelStats(loc, var)
    elif kind is EstimatorKind.MEDBN:
        eta, rho2, sel = K.medbn_stats(cs)
        cache.update(eta=eta, sel=sel, selection=(tuple(sel),))
        stats = ChannelStats(eta, rho2)
    elif kind is EstimatorKind.MEDBN_MAD:
        eta, mad, sel_eta, sel_dev = K.mad_stats(cs)
        cache.update(
            eta=eta,
            sel=sel_eta,
            mad=mad,
            sel_dev=sel_dev,
            selection=(tuple(sel_eta), tuple(sel_dev)),
        )
        stats = ChannelStats(eta, mad * mad)
    else:
        raise ValueError(f"not a current-batch estimator kind: {kind}")
    return stats, cache


def _estimate_cached(layer, cs):
    est = layer.estimator
    kind = est.kind
    shape_info = dict(cur_kind=None, cur_weight=1.0)
    if kind is EstimatorKind.SOURCE:
        return layer.src_stats.copy(), shape_info
    if kind in _CURRENT_KINDS:
        stats, cache = _current_stats(kind, cs)
        shape_info.update(cur_kind=kind, **cache)
        return stats, shape_info
    if kind is EstimatorKind.EMA:
        prev = est.ema_state or layer.src_stats
        cur, cache = _current_stats(est.inner, cs)
        a = est.ema_alpha
        stats = ChannelStats(
            a * prev.loc + (1.0 - a) * cur.loc,
            a * prev.scale_sq + (1.0 - a) * cur.scale_sq,
        )
        shape_info.update(cur_kind=est.inner, cur_weight=1.0 - a, **cache)
        return stats, shape_info
    if kind is EstimatorKind.INTERP:
        cur, cache = _current_stats(est.inner, cs)
        lam = est.interp_lambda
        stats = ChannelStats(
            lam * layer.src_stats.loc + (1.0 - lam) * cur.loc,
            lam * layer.src_stats.scale_sq + (1.0 - lam) * cur.scale_sq,
        )
        shape_info.update(cur_kind=est.inner, cur_weight=1.0 - lam, **cache)
        return stats, shape_info
    raise ValueError(f"unknown estimator kind: {kind}")


def estimate_stats(layer, z):
    """Estimate the layer's normalization statistics from a batch.

    Pure: EMA state is advanced only by an explicit commit_ema call.
    """
    cs = channel_slices(z.data if isinstance(z, Tensor) else np.asarray(z))
    stats, _ = _estimate_cached(layer, cs)
    return stats


def forward_cached(layer, arr, stats_mode="batch"):
    """Forward returning the cache needed by backward_cached."""
    cs = channel_slices(arr)
    if stats_mode == "batch":
        stats, info = _estimate_cached(layer, cs)
    elif stats_mode == "committed":
        stats, info = layer.committed_stats(), dict(cur_kind=None, cur_weight=1.0)
    else:
        raise ValueError(f"unknown stats_mode {stats_mode!r}")
    out = K.bn_forward(cs, stats.loc, stats.scale_sq, layer.gamma, layer.beta,
                       layer.eps_bn)
    cache = NormCache(cs=cs, shape=arr.shape, stats=stats, **info)
    return from_channel_slices(out, arr.shape), cache


def backward_cached(layer, cache, g_arr):
    """Exact reverse-mode gradients from the cached forward."""
    g_cs = channel_slices(g_arr)
    st = cache.stats
    dz, dgamma, dbeta, dloc, dscale_sq = K.bn_backward_core(
        cache.cs, g_cs, st.loc, st.scale_sq, layer.gamma, layer.eps_bn
    )
    kind = cache.cur_kind
    if kind is not None:
        w = cache.cur_weight
        dloc_cur = dloc * w
        dscale_cur = dscale_sq * w
        if kind is EstimatorKind.TEBN:
            K.tebn_stats_backward(cache.cs, cache.cur_loc, dloc_cur, dscale_cur, dz)
        elif kind is EstimatorKind.MEDBN:
            K.medbn_stats_backward(
                cache.cs, cache.eta, cache.sel, dloc_cur, dscale_cur, dz
            )
        else:
            K.mad_stats_backward(
                cache.cs, cache.eta, cache.mad, cache.sel, cache.sel_dev,
                dloc_cur, dscale_cur, dz,
            )
    return from_channel_slices(dz, cache.shape), dgamma, dbeta


def normalize_forward(layer, z, stats):
    """Standardize z with the given stats and the layer's affine parameters."""
    arr = z.data if isinstance(z, Tensor) else np.asarray(z, dtype=np.float64)
    cs = channel_slices(arr)
    out = K.bn_forward(cs, stats.loc, stats.scale_sq, layer.gamma, layer.beta,
                       layer.eps_bn)
    return Tensor(from_channel_slices(out, arr.shape))


def normalize_backward(layer, z, stats, upstream_grad):
    """Gradients of normalize_forward w.r.t. input, gamma and beta.

    ``stats`` must be the result of estimate_stats(layer, z); the
    estimator's internal selections are recomputed from z.
    """
    arr = z.data if isinstance(z, Tensor) else np.asarray(z, dtype=np.float64)
    g = upstream_grad.data if isinstance(upstream_grad, Tensor) else upstream_grad
    cs = channel_slices(arr)
    _, info = _estimate_cached(layer, cs)
    cache = NormCache(cs=cs, shape=arr.shape, stats=stats, **info)
    dz, dgamma, dbeta = backward_cached(layer, cache, np.asarray(g))
    return Tensor(dz), dgamma, dbeta


def make_norm_layer(num_channels, estimator, eps_bn=1e-5):
    """Fresh layer with identity affine and unit source stats."""
    return NormLayer(
        gamma=np.ones(num_channels),
        beta=np.zeros(num_channels),
        src_stats=ChannelStats(np.zeros(num_channels), np.ones(num_channels)),
        estimator=copy.deepcopy(estimator),
        eps_bn=eps_bn,
    )
