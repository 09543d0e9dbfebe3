"""Synthetic data generation, pretraining, metrics and result records.

The source task is a well-separated Gaussian class mixture; the test
distribution adds a fixed shift direction plus extra noise, scaled by a
severity level in units of the class-separation scale (a stand-in for
image corruption benchmarks). Malicious rows start as legitimate
corrupted samples; only the attack perturbs them.
"""

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np

from . import kernels as K
from . import network as nn
from . import normalization as norm
from .optim import Adam
from .tensor import Tensor, channel_slices

SEVERITY_TABLE = {
    0: (0.0, 0.0),  # null corruption: test distribution equals source
    1: (0.5, 0.1),
    2: (1.0, 0.2),
    3: (1.5, 0.3),
    4: (2.0, 0.4),
    5: (2.5, 0.5),
}


@dataclass
class SyntheticTask:
    num_classes: int = 4
    dim: int = 16
    class_sep: float = 0.5
    source_noise: float = 0.125
    severity: int = 3
    seed: int = 0
    class_means: np.ndarray = field(init=False)
    shift_dir: np.ndarray = field(init=False)

    def __post_init__(self):
        if self.severity not in SEVERITY_TABLE:
            raise ValueError("severity must be in 0..5 (0 = null corruption)")
        if self.num_classes > self.dim:
            raise ValueError("dim must be at least the class count")
        rng = np.random.default_rng(np.random.SeedSequence([77, self.seed]))
        # orthogonal unit directions scaled by the separation parameter
        basis = np.linalg.qr(rng.standard_normal((self.dim, self.dim)))[0]
        self.class_means = self.class_sep * basis[: self.num_classes]
        d = rng.standard_normal(self.dim)
        self.shift_dir = d / np.linalg.norm(d)

    def corruption(self):
        """(shift vector, corruption noise scale) for the severity level."""
        shift_mag, noise = SEVERITY_TABLE[self.severity]
        return shift_mag * self.class_sep * self.shift_dir, noise * self.class_sep

    def sample_source(self, count, rng):
        labels = rng.integers(0, self.num_classes, size=count)
        x = self.class_means[labels] + self.source_noise * rng.standard_normal(
            (count, self.dim)
        )
        return x, labels

    def sample_test(self, count, rng):
        x, labels = self.sample_source(count, rng)
        shift, noise = self.corruption()
        x = x + shift + noise * rng.standard_normal((count, self.dim))
        return x, labels


@dataclass
class Batch:
    x: Tensor
    labels: np.ndarray
    mal_indices: np.ndarray


def generate_stream(task, T, n, m, seed):
    """T labeled test batches of size n with m rows marked malicious each."""
    if not 0 <= m <= n:
        raise ValueError("m must lie in [0, n]")
    rng = np.random.default_rng(np.random.SeedSequence([101, task.seed, seed]))
    stream = []
    for _ in range(T):
        x, labels = task.sample_test(n, rng)
        mal = np.sort(rng.choice(n, size=m, replace=False))
        stream.append(Batch(Tensor(x), labels, mal.astype(np.int64)))
    return stream


def _collect_source_stats(net, x):
    """Full-pass per-layer input statistics, layer by layer."""
    arr = x
    for layer in net.layers:
        if isinstance(layer, nn.Affine):
            arr = arr @ layer.W.T + layer.b
        elif isinstance(layer, norm.NormLayer):
            loc, var = K.tebn_stats(channel_slices(arr))
            layer.src_stats = norm.ChannelStats(loc, var)
            arr = norm.normalize_forward(layer, arr, layer.src_stats).data
        else:
            arr = np.maximum(arr, 0.0)


def evaluate_accuracy(net, x, labels, stats_mode="committed"):
    """Accuracy through the same prediction path the scenarios use."""
    from . import tta

    pred = tta.predict(net, Tensor(x), stats_source=stats_mode)
    return float((pred == labels).mean())


def pretrain(task, arch=None, epochs=1, seed=0, batch_size=128,
             train_size=8192, stats_size=10000, holdout_size=2000,
             min_accuracy=0.95):
    """Train an MLP on source draws; freeze full-pass source statistics.

    Training normalizes with test-batch statistics (tebn); afterwards the
    per-layer source stats are the mean/variance of a 10k-sample source
    pass and the held-out source accuracy must reach min_accuracy.
    """
    if epochs < 1:
        raise ValueError("epochs must be at least 1")
    arch = dict(arch or {})
    hidden = int(arch.get("hidden", 64))
    rng = np.random.default_rng(np.random.SeedSequence([202, task.seed, seed]))
    net = nn.build_mlp(
        in_dim=task.dim, hidden=hidden, num_classes=task.num_classes,
        estimator=norm.Estimator(norm.EstimatorKind.TEBN), seed=seed,
    )
    params = net.parameters()
    opt = Adam(1e-3)
    x_train, y_train = task.sample_source(train_size, rng)
    for _ in range(epochs):
        order = rng.permutation(train_size)
        for start in range(0, train_size, batch_size):
            idx = order[start:start + batch_size]
            logits, cache = nn.forward(net, Tensor(x_train[idx]))
            grads, _ = nn.backward(net, cache,
                                   nn.cross_entropy_grad(logits, y_train[idx]))
            opt.step([p.get(net) for p in params],
                     [grads[(p.layer_index, p.name)] for p in params])

    x_stats, _ = task.sample_source(stats_size, rng)
    _collect_source_stats(net, x_stats)
    net.set_estimators(norm.Estimator(norm.EstimatorKind.SOURCE))

    x_hold, y_hold = task.sample_source(holdout_size, rng)
    acc = evaluate_accuracy(net, x_hold, y_hold, stats_mode="committed")
    if acc < min_accuracy:
        raise RuntimeError(
            f"pretraining failed: held-out source accuracy {acc:.4f} < "
            f"{min_accuracy}"
        )
    return net, acc


def attack_success_rate(hits):
    """Fraction of probes predicting the target label on the target sample."""
    hits = list(hits)
    if not hits:
        raise ValueError("attack_success_rate needs at least one probe")
    return float(np.mean([1.0 if h else 0.0 for h in hits]))


def error_rate(per_batch_errors):
    """Mean over batches of the per-batch benign misclassification rate."""
    rates = list(per_batch_errors)
    if not rates:
        raise ValueError("error_rate needs at least one batch")
    return float(np.mean(rates))


def stat_l1_distance(net, attacked_x, benign_x):
    """Per-layer L1 distances of mean and median statistics.

    Both batches run forward through the state that processes the
    attacked batch: every norm layer normalizes with the statistics the
    net's estimator produces on the attacked batch, so the comparison at
    each depth isolates how far the malicious rows drag each statistic.
    At every norm layer input the mean/std and median/sqrt-rho pairs of
    the two batches are compared, whatever the victim uses. Records run
    from the shallowest to the deepest norm layer.
    """
    records = []
    arr_a = attacked_x.data if isinstance(attacked_x, Tensor) else attacked_x
    arr_b = benign_x.data if isinstance(benign_x, Tensor) else benign_x
    for idx, layer in enumerate(net.layers):
        if isinstance(layer, nn.Affine):
            arr_a = arr_a @ layer.W.T + layer.b
            arr_b = arr_b @ layer.W.T + layer.b
        elif isinstance(layer, norm.NormLayer):
            cs_a = channel_slices(arr_a)
            cs_b = channel_slices(arr_b)
            mu_a, var_a = K.tebn_stats(cs_a)
            mu_b, var_b = K.tebn_stats(cs_b)
            eta_a, rho2_a, _ = K.medbn_stats(cs_a)
            eta_b, rho2_b, _ = K.medbn_stats(cs_b)
            records.append({
                "layer": idx,
                "mu_l1": float(np.abs(mu_a - mu_b).sum()),
                "eta_l1": float(np.abs(eta_a - eta_b).sum()),
                "sigma_l1": float(np.abs(np.sqrt(var_a) - np.sqrt(var_b)).sum()),
                "rho_l1": float(np.abs(np.sqrt(rho2_a) - np.sqrt(rho2_b)).sum()),
            })
            stats = norm.estimate_stats(layer, Tensor(arr_a))
            arr_a = norm.normalize_forward(layer, arr_a, stats).data
            arr_b = norm.normalize_forward(layer, arr_b, stats).data
        else:
            arr_a = np.maximum(arr_a, 0.0)
            arr_b = np.maximum(arr_b, 0.0)
    return records


CSV_COLUMNS = ["scenario", "estimator", "strategy", "attack", "T", "n", "m",
               "asr", "er_attacked", "er_clean", "seed"]


def results_to_csv(rows):
    """Render result rows to CSV text with a fixed column order."""
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: _fmt(row.get(k)) for k in CSV_COLUMNS})
    return buf.getvalue()


def _fmt(value):
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return value


def sidecar_json(results):
    """Sidecar document with the per-run L1 diagnostics and filter leakage."""
    doc = {
        "note": "metrics averaged over seeds, not corruption types",
        "runs": [
            {
                "config": r.config,
                "seed": r.seed,
                "leakage": r.leakage,
                "stat_l1": r.stat_l1,
            }
            for r in results
        ],
    }
    return json.dumps(doc, indent=1, sort_keys=True)
