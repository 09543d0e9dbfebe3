"""Distribution-invading PGD attack on shared batch statistics.

The adversary perturbs the malicious subset of a test batch so that the
batch statistics estimated by the victim's normalization layers steer
predictions on benign samples. Each PGD step recomputes those statistics
through the victim's actual estimator and differentiates through it.

Losses are oriented so that lower means a more successful attack:
targeted minimizes the cross entropy of the target sample toward the
target label, indiscriminate minimizes the negated benign cross entropy.
The adaptive variant adds a per-channel L1 penalty aligning the median of
malicious activations with the benign median at every norm layer input.
"""

from dataclasses import dataclass, replace

import numpy as np

from . import network as nn
from . import kernels as K
from .tensor import Tensor, from_channel_slices

TARGETED = "targeted"
INDISCRIMINATE = "indiscriminate"
ADAPTIVE_TARGETED = "adaptive"

WHITE_BOX = "white-box"
SEMI_WHITE_BOX = "semi-white-box"


@dataclass(frozen=True)
class AttackObjective:
    kind: str
    target_index: int | None = None
    target_label: int | None = None
    nu: float = 1.0

    def __post_init__(self):
        if self.kind not in (TARGETED, INDISCRIMINATE, ADAPTIVE_TARGETED):
            raise ValueError(f"unknown attack objective {self.kind!r}")

    def resolved(self, labels, mal_indices, num_classes):
        """Fill in the default target: first benign sample, next label."""
        if self.kind == INDISCRIMINATE:
            return self
        idx, label = self.target_index, self.target_label
        if idx is None:
            mal = set(int(i) for i in mal_indices)
            idx = next(i for i in range(len(labels)) if i not in mal)
        if label is None:
            label = (int(labels[idx]) + 1) % num_classes
        return replace(self, target_index=idx, target_label=label)


def parse_attack(text):
    """Parse "none" | "targeted[:<idx>:<label>]" | "indiscriminate"
    | "adaptive[:<idx>:<label>][:<nu>]"."""
    text = text.strip()
    if text == "none":
        return None
    parts = text.split(":")
    head, args = parts[0], parts[1:]
    try:
        if head == "indiscriminate":
            if args:
                raise ValueError
            return AttackObjective(INDISCRIMINATE)
        if head == "targeted":
            if not args:
                return AttackObjective(TARGETED)
            if len(args) != 2:
                raise ValueError
            return AttackObjective(TARGETED, int(args[0]), int(args[1]))
        if head == "adaptive":
            if not args:
                return AttackObjective(ADAPTIVE_TARGETED)
            if len(args) == 1:
                return AttackObjective(ADAPTIVE_TARGETED, nu=float(args[0]))
            if len(args) == 2:
                return AttackObjective(ADAPTIVE_TARGETED, int(args[0]), int(args[1]))
            if len(args) == 3:
                return AttackObjective(
                    ADAPTIVE_TARGETED, int(args[0]), int(args[1]), float(args[2])
                )
            raise ValueError
    except ValueError:
        pass
    raise ValueError(
        f"invalid attack {text!r}; expected none, targeted[:<idx>:<label>], "
        "indiscriminate, or adaptive[:<idx>:<label>][:<nu>]"
    )


@dataclass
class AttackSpec:
    objective: AttackObjective
    steps: int = 100
    step_size: float = 1.0 / 255.0
    eps: float = 1.0
    delta0: float = 0.5
    knowledge: str = WHITE_BOX
    clip_box: tuple | None = None
    inner_update: bool = False
    inner_lr: float = 1e-3

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("steps must be at least 1")
        if self.step_size < 0:
            raise ValueError("step_size must be non-negative")
        if self.eps <= 0:
            raise ValueError("eps must be positive")
        if self.knowledge not in (WHITE_BOX, SEMI_WHITE_BOX):
            raise ValueError(f"unknown knowledge mode {self.knowledge!r}")


@dataclass
class PoisonedBatch:
    x: Tensor
    mal_indices: np.ndarray
    delta: Tensor
    labels: np.ndarray

    def __post_init__(self):
        self.mal_indices = np.asarray(self.mal_indices, dtype=np.int64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.delta.shape[0] != self.mal_indices.shape[0]:
            raise ValueError("delta must cover exactly the malicious rows")
        if self.delta.shape[1:] != self.x.shape[1:]:
            raise ValueError("delta feature shape must match the batch")

    def perturbed(self):
        """Full batch with delta applied to the malicious rows."""
        arr = self.x.data.copy()
        arr[self.mal_indices] += self.delta.data
        return Tensor(arr)


def project_delta(delta, spec, x_mal):
    """Inf-norm clamp to the budget, then the valid-input box if set."""
    out = np.clip(delta, -spec.eps, spec.eps)
    if spec.clip_box is not None:
        lo, hi = spec.clip_box
        out = np.clip(out, lo - x_mal, hi - x_mal)
    return out


def _median_gap_penalty(net, cache, mal_rows, ben_rows, nu):
    """nu * sum over norm layers and channels of
    |median(mal activations) - median(ben activations)|.

    Returns (penalty, inject) where inject maps layer index -> gradient
    array to add at that layer's input during backward.
    """
    penalty = 0.0
    inject = {}
    for idx, _ in net.norm_layers():
        z = cache[idx][1].cs  # (C, B*H*W) of the layer input
        shape = cache[idx][1].shape
        n = shape[0]
        spatial = z.shape[1] // n
        # channel slices keep row-major order: position = b * spatial + s
        cols_mal = (mal_rows[:, None] * spatial + np.arange(spatial)).ravel()
        cols_ben = (ben_rows[:, None] * spatial + np.arange(spatial)).ravel()
        med_mal, sel_mal = K.channel_median(np.ascontiguousarray(z[:, cols_mal]))
        med_ben, sel_ben = K.channel_median(np.ascontiguousarray(z[:, cols_ben]))
        gap = med_mal - med_ben
        penalty += nu * float(np.abs(gap).sum())
        sgn = nu * np.sign(gap)
        g_cs = np.zeros_like(z)
        rows = np.arange(z.shape[0])
        np.add.at(g_cs, (rows, cols_mal[sel_mal]), sgn)
        np.add.at(g_cs, (rows, cols_ben[sel_ben]), -sgn)
        inject[idx] = from_channel_slices(g_cs, shape)
    return penalty, inject


def _loss_and_grad(net, batch, objective, want_grad=True):
    """Attack loss and its gradient w.r.t. the malicious rows' perturbation."""
    x = batch.perturbed()
    logits, cache = nn.forward(net, x, stats_mode="batch")
    mal = batch.mal_indices
    ben = np.setdiff1d(np.arange(x.shape[0]), mal)

    if objective.kind == INDISCRIMINATE:
        per_ben = nn.cross_entropy(logits.data[ben], batch.labels[ben])
        loss = -per_ben * ben.size  # negated sum of benign cross entropies
        dlogits = np.zeros_like(logits.data)
        dlogits[ben] = -nn.cross_entropy_grad(
            logits.data[ben], batch.labels[ben]
        ) * ben.size
        inject = None
    else:
        t = objective.target_index
        if t in set(int(i) for i in mal):
            raise ValueError("target sample must be benign")
        loss = nn.cross_entropy(logits.data[t:t + 1], [objective.target_label])
        dlogits = np.zeros_like(logits.data)
        dlogits[t:t + 1] = nn.cross_entropy_grad(
            logits.data[t:t + 1], [objective.target_label]
        )
        inject = None
        if objective.kind == ADAPTIVE_TARGETED and objective.nu != 0.0:
            penalty, inject = _median_gap_penalty(net, cache, mal, ben,
                                                  objective.nu)
            loss += penalty
    if not want_grad:
        return loss, None
    _, input_grad = nn.backward(net, cache, dlogits, inject=inject)
    return loss, input_grad.data[mal]


def attack_loss(net, batch, objective):
    """Scalar attack objective; lower means a more successful attack."""
    objective = objective.resolved(batch.labels, batch.mal_indices,
                                   net.num_classes)
    loss, _ = _loss_and_grad(net, batch, objective, want_grad=False)
    return loss


def make_poisoned_batch(x, labels, mal_indices, spec):
    """Initial poisoned batch with the uniform delta0, projected to budget."""
    mal_indices = np.asarray(mal_indices, dtype=np.int64)
    feat_shape = x.shape[1:]
    delta = np.full((mal_indices.size,) + feat_shape, float(spec.delta0))
    delta = project_delta(delta, spec, x.data[mal_indices])
    return PoisonedBatch(x, mal_indices, Tensor(delta), np.asarray(labels))


def dia_attack(net, batch, spec, surrogate=None):
    """Sign-PGD over the malicious rows' perturbation; keeps the best iterate.

    White-box gradients flow through the live victim, including its
    statistics estimator. Semi-white-box computes every gradient (and the
    best-iterate selection) against a frozen surrogate, normally the
    pretrained initial parameters, while the caller evaluates the result
    against the live victim. With inner_update, each step first applies a
    single entropy-minimization step on the affine norm parameters of a
    scratch copy (first-order: no curvature of that update is tracked).
    """
    if batch.mal_indices.size < 1:
        raise ValueError("attack requires at least one malicious sample")
    objective = spec.objective.resolved(batch.labels, batch.mal_indices,
                                        net.num_classes)
    if spec.knowledge == SEMI_WHITE_BOX:
        if surrogate is None:
            raise ValueError("semi-white-box attack requires a surrogate network")
        attacker_net = surrogate
    else:
        attacker_net = net

    x_mal = batch.x.data[batch.mal_indices]
    delta = project_delta(batch.delta.data.copy(), spec, x_mal)
    best_loss = np.inf
    best_delta = delta.copy()

    for _ in range(spec.steps):
        step_net = attacker_net
        if spec.inner_update:
            step_net = attacker_net.clone()
            _inner_tta_step(step_net, batch, delta, spec.inner_lr)
        cur = PoisonedBatch(batch.x, batch.mal_indices, Tensor(delta),
                            batch.labels)
        loss, grad = _loss_and_grad(step_net, cur, objective)
        if loss < best_loss:
            best_loss = loss
            best_delta = delta.copy()
        delta = project_delta(delta - spec.step_size * np.sign(grad), spec, x_mal)

    final = PoisonedBatch(batch.x, batch.mal_indices, Tensor(delta), batch.labels)
    loss, _ = _loss_and_grad(attacker_net, final, objective, want_grad=False)
    if loss < best_loss:
        best_delta = delta
    assert np.abs(best_delta).max() <= spec.eps
    if spec.clip_box is not None:
        lo, hi = spec.clip_box
        assert np.all(x_mal + best_delta >= lo)
        assert np.all(x_mal + best_delta <= hi)
    return PoisonedBatch(batch.x, batch.mal_indices, Tensor(best_delta),
                         batch.labels)


def _inner_tta_step(net, batch, delta, lr):
    """One entropy step on gamma/beta, mirroring a single-step victim update."""
    from .optim import SGD
    from .tta import tent_params

    arr = batch.x.data.copy()
    arr[batch.mal_indices] += delta
    logits, cache = nn.forward(net, Tensor(arr), stats_mode="batch")
    grads, _ = nn.backward(net, cache, nn.entropy_grad(logits))
    params = tent_params(net)
    SGD(lr).step(
        [p.get(net) for p in params],
        [grads[(p.layer_index, p.name)] for p in params],
    )
