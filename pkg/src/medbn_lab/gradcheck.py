"""Central finite-difference verification of the analytic gradients.

A fixed random linear functional of the network output is differentiated
both analytically and by central differences over every input and
parameter coordinate. Coordinates whose perturbation flips a median
selection are reported as excluded ties instead of failures, since the
subgradient convention makes finite differences invalid there.
"""

from dataclasses import dataclass

import numpy as np

from . import network as nn
from . import normalization as norm
from .tensor import Tensor

H_DEFAULT = 1e-5

LAYER_NAMES = ("affine1", "norm1", "relu1", "affine2", "norm2", "relu2",
               "affine3")


@dataclass
class GradCheckRow:
    layer: str
    param: str
    max_rel_err: float
    excluded: int

    def to_json(self):
        return {"layer": self.layer, "param": self.param,
                "max_rel_err": self.max_rel_err, "excluded": self.excluded}


def rel_err(a, b, floor=1e-3):
    """|a - b| over max(|a|, |b|, floor)."""
    return abs(a - b) / max(abs(a), abs(b), floor)


def _selection_signature(cache):
    return tuple(saved.selection for kind, saved in cache if kind == "norm")


def check_network(net, x_arr, seed=0, h=H_DEFAULT, layer_names=None):
    """Gradcheck every parameter tensor and the input; returns rows."""
    rng = np.random.default_rng(np.random.SeedSequence([11, seed]))
    names = layer_names or [f"layer{i}" for i in range(len(net.layers))]
    x_arr = np.array(x_arr, dtype=np.float64)

    def loss_and_selection():
        logits, cache = nn.forward(net, Tensor(x_arr))
        return float((logits.data * weights).sum()), _selection_signature(cache)

    logits, cache = nn.forward(net, Tensor(x_arr))
    weights = rng.standard_normal(logits.shape)
    base_sel = _selection_signature(cache)
    grads, input_grad = nn.backward(net, cache, weights)

    rows = []

    def fd_scan(target, analytic, label_layer, label_param):
        flat = target.ravel()
        ana = analytic.ravel()
        worst = 0.0
        excluded = 0
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up, sel_up = loss_and_selection()
            flat[i] = orig - h
            down, sel_down = loss_and_selection()
            flat[i] = orig
            if sel_up != base_sel or sel_down != base_sel:
                excluded += 1
                continue
            fd = (up - down) / (2.0 * h)
            worst = max(worst, rel_err(ana[i], fd))
        rows.append(GradCheckRow(label_layer, label_param, worst, excluded))

    for p in net.parameters():
        fd_scan(p.get(net), grads[(p.layer_index, p.name)],
                names[p.layer_index], p.name)
    fd_scan(x_arr, input_grad.data, "input", "x")
    return rows


def default_gradcheck_net(estimator, seed=0, in_dim=5, hidden=7, num_classes=3):
    """Small seeded MLP with randomized affine norm parameters."""
    net = nn.build_mlp(in_dim=in_dim, hidden=hidden, num_classes=num_classes,
                       estimator=estimator, seed=seed)
    rng = np.random.default_rng(np.random.SeedSequence([12, seed]))
    for _, layer in net.norm_layers():
        layer.gamma = rng.uniform(0.5, 1.5, size=hidden)
        layer.beta = rng.uniform(-0.5, 0.5, size=hidden)
        layer.src_stats = norm.ChannelStats(
            rng.uniform(-0.3, 0.3, size=hidden), rng.uniform(0.5, 1.5, size=hidden)
        )
        if layer.estimator.kind is norm.EstimatorKind.EMA:
            layer.estimator.ema_state = norm.ChannelStats(
                rng.uniform(-0.3, 0.3, size=hidden),
                rng.uniform(0.5, 1.5, size=hidden),
            )
    return net


def run_gradcheck(estimators, seed=0, batch=6, layers=None, near_ties=False):
    """Gradcheck table over estimator configs; returns {estimator: rows}.

    ``layers`` restricts reporting to the named layers. ``near_ties``
    plants a duplicated row in the input batch so that median selection
    exclusions are exercised.
    """
    results = {}
    for est_text in estimators:
        est = norm.parse_estimator(est_text)
        net = default_gradcheck_net(est, seed=seed)
        rng = np.random.default_rng(np.random.SeedSequence([13, seed]))
        x = rng.standard_normal((batch, net.layers[0].W.shape[1]))
        if near_ties:
            x[1] = x[0]  # duplicated row forces median ties downstream
        rows = check_network(net, x, seed=seed, layer_names=LAYER_NAMES)
        if layers is not None:
            unknown = set(layers) - set(LAYER_NAMES) - {"input"}
            if unknown:
                raise ValueError(f"unknown layer name(s): {sorted(unknown)}")
            rows = [r for r in rows if r.layer in layers]
        results[est_text] = rows
    return results
