#!/usr/bin/env python3
"""Benchmark the compiled kernels against the pure-numpy fallback.

Times the per-channel statistics kernels at a few shapes and the
end-to-end PGD attack probe that dominates scenario runtime. Run from
the repository root:

    python3 benchmarks/bench_kernels.py
"""

import time

import numpy as np

from medbn_lab import attack as atk
from medbn_lab import harness
from medbn_lab import kernels
from medbn_lab import normalization as norm
from medbn_lab import tta


def time_call(fn, *args, repeat=200):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def bench_kernels(backend):
    kernels.set_backend(backend)
    rng = np.random.default_rng(0)
    rows = []
    for c, n in ((64, 64), (64, 1024), (256, 4096)):
        cs = np.ascontiguousarray(rng.standard_normal((c, n)))
        g = np.ascontiguousarray(rng.standard_normal((c, n)))
        loc, var = kernels.tebn_stats(cs)
        gamma = np.ones(c)
        beta = np.zeros(c)
        rows.append((f"tebn_stats      {c}x{n}",
                     time_call(kernels.tebn_stats, cs)))
        rows.append((f"medbn_stats     {c}x{n}",
                     time_call(kernels.medbn_stats, cs)))
        rows.append((f"bn_forward      {c}x{n}",
                     time_call(kernels.bn_forward, cs, loc, var, gamma, beta,
                               1e-5)))
        rows.append((f"bn_backward     {c}x{n}",
                     time_call(kernels.bn_backward_core, cs, g, loc, var,
                               gamma, 1e-5)))
    return rows


def bench_attack_probe(backend):
    kernels.set_backend(backend)
    task = harness.SyntheticTask()
    net, _ = harness.pretrain(task, seed=0)
    tta.bind_estimators(net, norm.parse_estimator("medbn"),
                        tta.parse_strategy("tebn"))
    batch = harness.generate_stream(task, 1, 64, 12, seed=0)[0]
    spec = atk.AttackSpec(objective=atk.parse_attack("targeted"))
    pb = atk.make_poisoned_batch(batch.x, batch.labels, batch.mal_indices,
                                 spec)
    t0 = time.perf_counter()
    atk.dia_attack(net, pb, spec)
    return time.perf_counter() - t0


def main():
    backends = kernels.available_backends()
    print(f"available backends: {backends}")
    if len(backends) < 2:
        print("compiled extension not built; benchmarking the fallback only")

    results = {b: dict(bench_kernels(b)) for b in backends}
    names = list(next(iter(results.values())))
    print(f"\n{'kernel':24s}" + "".join(f"{b:>14s}" for b in backends)
          + ("      speedup" if len(backends) == 2 else ""))
    for name in names:
        line = f"{name:24s}"
        for b in backends:
            line += f"{results[b][name] * 1e6:12.1f}us"
        if len(backends) == 2:
            line += f"{results['python'][name] / results['compiled'][name]:11.1f}x"
        print(line)

    print("\nend-to-end 100-step attack probe (n=64, medbn victim):")
    probe = {b: bench_attack_probe(b) for b in backends}
    for b in backends:
        print(f"  {b:10s} {probe[b] * 1e3:8.1f} ms")
    if len(backends) == 2:
        print(f"  speedup    {probe['python'] / probe['compiled']:8.1f}x")


if __name__ == "__main__":
    main()
