"""Small feed-forward network with exact reverse-mode differentiation.

Layers are affine maps, normalization layers and ReLU activations.
Gradients are produced for every parameter and for the input tensor,
including through the normalization statistics per the layer estimator.
Parameters are partitioned into "affine_bn" (gamma, beta) and "backbone"
(W, b) so adaptation strategies can restrict their updates.
"""

import json
import math
from dataclasses import dataclass

import numpy as np

from . import normalization as norm
from .normalization import ChannelStats, Estimator, EstimatorKind, NormLayer
from .tensor import Tensor

AFFINE_BN = "affine_bn"
BACKBONE = "backbone"


class Affine:
    """y = x @ W.T + b with W of shape (out, in)."""

    def __init__(self, W, b):
        self.W = np.asarray(W, dtype=np.float64)
        self.b = np.asarray(b, dtype=np.float64)
        if self.W.ndim != 2 or self.b.shape != (self.W.shape[0],):
            raise ValueError("W must be (out, in) and b (out,)")

    def copy(self):
        return Affine(self.W.copy(), self.b.copy())


class ReLU:
    def copy(self):
        return ReLU()


@dataclass
class Param:
    layer_index: int
    name: str
    partition: str

    def get(self, net):
        return getattr(net.layers[self.layer_index], self.name)

    def set(self, net, value):
        setattr(net.layers[self.layer_index], self.name, value)


class Network:
    def __init__(self, layers, num_classes):
        self.layers = list(layers)
        self.num_classes = num_classes

    def parameters(self):
        out = []
        for i, layer in enumerate(self.layers):
            if isinstance(layer, Affine):
                out.append(Param(i, "W", BACKBONE))
                out.append(Param(i, "b", BACKBONE))
            elif isinstance(layer, NormLayer):
                out.append(Param(i, "gamma", AFFINE_BN))
                out.append(Param(i, "beta", AFFINE_BN))
        return out

    def norm_layers(self):
        return [(i, l) for i, l in enumerate(self.layers) if isinstance(l, NormLayer)]

    def set_estimators(self, estimator):
        for _, layer in self.norm_layers():
            layer.estimator = estimator.copy()

    def clone(self):
        return Network([l.copy() for l in self.layers], self.num_classes)


def build_mlp(in_dim=16, hidden=64, num_classes=4, estimator=None, seed=0,
              eps_bn=1e-5):
    """in -> hidden -> hidden -> K MLP with a norm layer after each hidden affine.

    Kaiming-uniform fan-in init for W, zero b, identity affine norm
    parameters, all fixed by the seed.
    """
    if estimator is None:
        estimator = Estimator(EstimatorKind.SOURCE)
    rng = np.random.default_rng(seed)

    def kaiming(out_dim, fan_in):
        bound = math.sqrt(6.0 / fan_in)
        return rng.uniform(-bound, bound, size=(out_dim, fan_in))

    layers = [
        Affine(kaiming(hidden, in_dim), np.zeros(hidden)),
        norm.make_norm_layer(hidden, estimator, eps_bn),
        ReLU(),
        Affine(kaiming(hidden, hidden), np.zeros(hidden)),
        norm.make_norm_layer(hidden, estimator, eps_bn),
        ReLU(),
        Affine(kaiming(num_classes, hidden), np.zeros(num_classes)),
    ]
    return Network(layers, num_classes)


def forward(net, x, stats_mode="batch"):
    """Run the network; returns (logits, cache) for the exact backward.

    stats_mode "batch" estimates normalization statistics from the batch
    per each layer's estimator; "committed" uses EMA/source statistics.
    """
    arr = x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)
    if arr.shape[0] < 1:
        raise ValueError("batch must be non-empty")
    cache = []
    for layer in net.layers:
        if isinstance(layer, Affine):
            if arr.shape[-1] != layer.W.shape[1]:
                raise ValueError(
                    f"dimension mismatch: input {arr.shape[-1]} vs W {layer.W.shape}"
                )
            cache.append(("affine", arr))
            arr = arr @ layer.W.T + layer.b
        elif isinstance(layer, NormLayer):
            arr, nc = norm.forward_cached(layer, arr, stats_mode)
            cache.append(("norm", nc))
        else:
            mask = arr > 0.0
            cache.append(("relu", mask))
            arr = arr * mask
    return Tensor(arr), cache


def backward(net, cache, loss_grad, inject=None):
    """Reverse-mode gradients for all parameters and the input.

    ``inject`` optionally maps layer index -> array added to the gradient
    flowing into that layer's input (used by attack regularizers that
    read intermediate activations).

    Returns (param_grads, input_grad) with param_grads a dict keyed by
    (layer_index, name).
    """
    g = loss_grad.data if isinstance(loss_grad, Tensor) else np.asarray(loss_grad)
    g = g.astype(np.float64, copy=True)
    grads = {}
    for idx in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[idx]
        kind, saved = cache[idx]
        if kind == "affine":
            grads[(idx, "W")] = g.T @ saved
            grads[(idx, "b")] = g.sum(axis=0)
            g = g @ layer.W
        elif kind == "norm":
            g, dgamma, dbeta = norm.backward_cached(layer, saved, g)
            grads[(idx, "gamma")] = dgamma
            grads[(idx, "beta")] = dbeta
        else:
            g = g * saved
        if inject and idx in inject:
            g = g + inject[idx]
    return grads, Tensor(g)


def softmax(logits):
    arr = logits.data if isinstance(logits, Tensor) else np.asarray(logits)
    shifted = arr - arr.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(arr):
    shifted = arr - arr.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def cross_entropy(logits, labels):
    """Mean over the batch of -log softmax(logits)[label]."""
    arr = logits.data if isinstance(logits, Tensor) else np.asarray(logits)
    labels = np.asarray(labels, dtype=np.int64)
    if labels.min() < 0 or labels.max() >= arr.shape[-1]:
        raise ValueError("labels out of range")
    ls = log_softmax(arr)
    return float(-ls[np.arange(arr.shape[0]), labels].mean())


def cross_entropy_grad(logits, labels):
    """(softmax - onehot) / B."""
    arr = logits.data if isinstance(logits, Tensor) else np.asarray(logits)
    labels = np.asarray(labels, dtype=np.int64)
    p = softmax(arr)
    p[np.arange(arr.shape[0]), labels] -= 1.0
    return p / arr.shape[0]


def entropy_loss(logits):
    """Mean over the batch of the softmax prediction entropy."""
    arr = logits.data if isinstance(logits, Tensor) else np.asarray(logits)
    ls = log_softmax(arr)
    p = np.exp(ls)
    return float(-(p * ls).sum(axis=-1).mean())


def entropy_grad(logits):
    """d mean-entropy / d logits = -p * (log p + H) / B per sample."""
    arr = logits.data if isinstance(logits, Tensor) else np.asarray(logits)
    ls = log_softmax(arr)
    p = np.exp(ls)
    h = -(p * ls).sum(axis=-1, keepdims=True)
    return -p * (ls + h) / arr.shape[0]


def _stats_to_json(stats):
    return {"loc": stats.loc.tolist(), "scale_sq": stats.scale_sq.tolist()}


def _stats_from_json(obj):
    return ChannelStats(np.array(obj["loc"]), np.array(obj["scale_sq"]))


def checkpoint_to_json(net, arch, seed, meta=None):
    """Serialize to JSON text; floats round-trip bit-exactly."""
    params = []
    for layer in net.layers:
        if isinstance(layer, Affine):
            params.append({"type": "affine", "W": layer.W.tolist(),
                           "b": layer.b.tolist()})
        elif isinstance(layer, NormLayer):
            params.append({
                "type": "norm",
                "gamma": layer.gamma.tolist(),
                "beta": layer.beta.tolist(),
                "eps_bn": layer.eps_bn,
                "src_stats": _stats_to_json(layer.src_stats),
            })
        else:
            params.append({"type": "relu"})
    doc = {"arch": arch, "seed": seed, "params": params}
    if meta:
        doc["meta"] = meta
    return json.dumps(doc, indent=1, sort_keys=True)


def checkpoint_from_json(text, estimator=None):
    """Rebuild a network (and its arch/meta) from checkpoint JSON text."""
    doc = json.loads(text)
    if estimator is None:
        estimator = Estimator(EstimatorKind.SOURCE)
    layers = []
    for entry in doc["params"]:
        if entry["type"] == "affine":
            layers.append(Affine(np.array(entry["W"]), np.array(entry["b"])))
        elif entry["type"] == "norm":
            layers.append(NormLayer(
                gamma=np.array(entry["gamma"]),
                beta=np.array(entry["beta"]),
                src_stats=_stats_from_json(entry["src_stats"]),
                estimator=estimator.copy(),
                eps_bn=entry["eps_bn"],
            ))
        else:
            layers.append(ReLU())
    net = Network(layers, doc["arch"]["K"])
    return net, doc
