"""Attack scenario orchestration.

Instant: at each time t the state adapted on the clean batches 1..t-1 is
cloned, the attacker poisons batch t against that clone, the clone adapts
on the poisoned batch and metrics are recorded; the main line then
continues adapting on the clean batch, so each probe is independent.

Cumulative: every batch is poisoned and the adapted state carries
forward; a parallel clean line supplies the no-attack error rate.
"""

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import attack as atk
from . import harness
from . import network as nn
from . import normalization as norm
from . import tta
from .tensor import Tensor


@dataclass
class ScenarioResult:
    asr: float | None
    er_attacked: float
    er_clean: float
    leakage: list
    stat_l1: list
    config: dict = field(default_factory=dict)
    seed: int = 0


def _benign_rows(batch):
    return np.setdiff1d(np.arange(batch.x.shape[0]), batch.mal_indices)


def _benign_error(net, x, labels, rows):
    pred = tta.predict(net, x, stats_source="batch")
    return float((pred[rows] != labels[rows]).mean())


def _probe_metrics(session, batch, attack_spec, surrogate):
    """Poison one batch against the session state, adapt, and measure."""
    net = session.net
    stat_l1 = None
    leakage = None
    asr_hit = None

    if attack_spec is not None and batch.mal_indices.size > 0:
        pb = atk.make_poisoned_batch(batch.x, batch.labels, batch.mal_indices,
                                     attack_spec)
        pb = atk.dia_attack(net, pb, attack_spec, surrogate=surrogate)
        attacked_x = pb.perturbed()
    else:
        attacked_x = batch.x

    ben_rows = _benign_rows(batch)
    if batch.mal_indices.size > 0 and ben_rows.size > 0:
        stat_l1 = harness.stat_l1_distance(
            net, attacked_x, Tensor(batch.x.data[ben_rows])
        )

    report = session.adapt(attacked_x, mal_indices=batch.mal_indices)
    if report.filter_report is not None:
        leakage = report.filter_report.leakage

    objective = None
    if attack_spec is not None:
        # resolved even when m = 0, so unattacked probes score the base
        # rate of accidental target-label predictions
        objective = attack_spec.objective.resolved(
            batch.labels, batch.mal_indices, net.num_classes
        )
    if objective is not None and objective.kind != atk.INDISCRIMINATE:
        if objective.target_label == batch.labels[objective.target_index]:
            raise ValueError("target label must differ from the true label")
        pred = tta.predict(net, attacked_x, stats_source="batch")
        asr_hit = bool(pred[objective.target_index] == objective.target_label)

    er = _benign_error(net, attacked_x, batch.labels, ben_rows)
    return asr_hit, er, leakage, stat_l1


def _mean_stat_l1(per_batch):
    entries = [s for s in per_batch if s]
    if not entries:
        return []
    layers = [rec["layer"] for rec in entries[0]]
    out = []
    for i, layer in enumerate(layers):
        rec = {"layer": layer}
        for key in ("mu_l1", "eta_l1", "sigma_l1", "rho_l1"):
            rec[key] = float(np.mean([e[i][key] for e in entries]))
        out.append(rec)
    return out


def run_instant_scenario(net, stream, attack_spec, strategy, seed=0,
                         config=None):
    """Independent single-batch probes along a benign adaptation trajectory."""
    if not stream:
        raise ValueError("stream must contain at least one batch")
    session = tta.AdaptSession(net.clone(), strategy)
    surrogate = net.clone()  # pretrained initial parameters
    hits, ers, clean_ers, leakages, stat_l1s = [], [], [], [], []
    for batch in stream:
        probe = session.clone()
        hit, er, leakage, stat_l1 = _probe_metrics(probe, batch, attack_spec,
                                                   surrogate)
        hits.append(hit)
        ers.append(er)
        leakages.append(leakage)
        stat_l1s.append(stat_l1)
        # the main line continues on the clean batch
        session.adapt(batch.x, mal_indices=None)
        pred = tta.predict(session.net, batch.x, stats_source="batch")
        clean_ers.append(float((pred != batch.labels).mean()))
    hits = [h for h in hits if h is not None]
    return ScenarioResult(
        asr=harness.attack_success_rate(hits) if hits else None,
        er_attacked=harness.error_rate(ers),
        er_clean=harness.error_rate(clean_ers),
        leakage=leakages,
        stat_l1=_mean_stat_l1(stat_l1s),
        config=dict(config or {}),
        seed=seed,
    )


def run_cumulative_scenario(net, stream, attack_spec, strategy, seed=0,
                            config=None):
    """Poison every batch; adapted state carries forward across batches."""
    if not stream:
        raise ValueError("stream must contain at least one batch")
    session = tta.AdaptSession(net.clone(), strategy)
    clean_session = tta.AdaptSession(net.clone(), strategy)
    surrogate = net.clone()
    hits, ers, clean_ers, leakages, stat_l1s = [], [], [], [], []
    for batch in stream:
        hit, er, leakage, stat_l1 = _probe_metrics(session, batch, attack_spec,
                                                   surrogate)
        hits.append(hit)
        ers.append(er)
        leakages.append(leakage)
        stat_l1s.append(stat_l1)
        clean_session.adapt(batch.x, mal_indices=None)
        pred = tta.predict(clean_session.net, batch.x, stats_source="batch")
        clean_ers.append(float((pred != batch.labels).mean()))
    hits = [h for h in hits if h is not None]
    return ScenarioResult(
        asr=harness.attack_success_rate(hits) if hits else None,
        er_attacked=harness.error_rate(ers),
        er_clean=harness.error_rate(clean_ers),
        leakage=leakages,
        stat_l1=_mean_stat_l1(stat_l1s),
        config=dict(config or {}),
        seed=seed,
    )


def run_scenario(kind, net, stream, attack_spec, strategy, seed=0, config=None):
    if kind == "instant":
        return run_instant_scenario(net, stream, attack_spec, strategy, seed,
                                    config)
    if kind == "cumulative":
        return run_cumulative_scenario(net, stream, attack_spec, strategy, seed,
                                       config)
    raise ValueError(f"unknown scenario kind {kind!r}")


@dataclass
class WorkItem:
    """One (config, seed) scenario run; picklable for the worker pool."""

    checkpoint_text: str
    task: harness.SyntheticTask
    estimator: str
    strategy: str
    filter: str
    attack_spec: atk.AttackSpec | None
    scenario: str
    T: int
    n: int
    m: int
    seed: int
    attack_label: str | None = None


def run_work_item(item):
    net, _ = nn.checkpoint_from_json(item.checkpoint_text)
    est = norm.parse_estimator(item.estimator)
    filter_spec = tta.parse_filter(item.filter, item.task.num_classes)
    strategy = tta.parse_strategy(item.strategy, filter_spec)
    tta.bind_estimators(net, est, strategy)
    stream = harness.generate_stream(item.task, item.T, item.n, item.m,
                                     item.seed)
    attack_text = item.attack_label or "none"
    if item.attack_spec is not None and item.attack_label is None:
        attack_text = item.attack_spec.objective.kind
    config = {
        "scenario": item.scenario, "estimator": item.estimator,
        "strategy": item.strategy, "attack": attack_text,
        "T": item.T, "n": item.n, "m": item.m,
    }
    return run_scenario(item.scenario, net, stream, item.attack_spec, strategy,
                        seed=item.seed, config=config)


def run_many(work, jobs=1):
    """Run work items, in parallel when jobs > 1; results keep input order."""
    if jobs <= 1 or len(work) <= 1:
        return [run_work_item(item) for item in work]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(run_work_item, work))
