"""Shared fixtures for the attack and acceptance tests."""

import numpy as np

from medbn_lab import network as nn
from medbn_lab import normalization as norm
from medbn_lab.tensor import Tensor


def toy_victim(seed, estimator="tebn", head_scale=3.0):
    """One-feature victim: a single norm layer feeding a 2-class linear head."""
    rng = np.random.default_rng(np.random.SeedSequence([31, seed]))
    head = rng.uniform(0.5, 1.0) * head_scale
    layers = [
        norm.NormLayer(
            gamma=np.ones(1), beta=np.zeros(1),
            src_stats=norm.ChannelStats(np.zeros(1), np.ones(1)),
            estimator=norm.parse_estimator(estimator),
        ),
        nn.Affine(np.array([[head], [-head]]), rng.standard_normal(2) * 0.1),
    ]
    net = nn.Network(layers, 2)
    x = rng.standard_normal((4, 1))
    # start the malicious row away from the benign mean: the variance
    # vertex then falls outside the perturbation budget, keeping the
    # 1-D attack landscape unimodal (sign-PGD is a local method)
    x[0, 0] = x[1:, 0].mean() + rng.choice([-1.0, 1.0]) * rng.uniform(0.8, 1.2)
    labels = (x[:, 0] > x[:, 0].mean()).astype(int)
    return net, Tensor(x), labels
