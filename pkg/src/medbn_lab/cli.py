"""Command-line entry point.

Subcommands: pretrain, run, verify (alias verify-theorems), gradcheck,
stats-dist. Machine-parseable output goes to stdout (or --out files);
progress logs go to stderr. Exit codes: 0 success, 1 property violation,
2 usage error. MEDBN_SEED overrides the seed flags for CI runs.
"""

import argparse
import json
import os
import sys

import numpy as np

from . import attack as atk
from . import checks
from . import gradcheck as gc
from . import harness
from . import kernels
from . import network as nn
from . import normalization as norm
from . import scenarios
from . import tta
from .tensor import Tensor


def _log(msg):
    print(msg, file=sys.stderr)


def _int_list(text):
    return [int(v) for v in str(text).split(",") if v != ""]


def _load_config_file(path, parser_keys):
    with open(path) as fh:
        doc = json.load(fh)
    unknown = set(doc) - parser_keys
    if unknown:
        raise ValueError(f"unknown config key(s): {sorted(unknown)}")
    return doc


def _merge_config(args, parser, argv):
    """Config-file values fill in flags not given explicitly on the CLI."""
    if not getattr(args, "config", None):
        return args
    keys = {a.dest for a in parser._actions if a.dest != "help"}
    doc = _load_config_file(args.config, keys)
    explicit = set()
    for action in parser._actions:
        for opt in action.option_strings:
            if any(tok == opt or tok.startswith(opt + "=") for tok in argv):
                explicit.add(action.dest)
    for key, value in doc.items():
        if key not in explicit:
            setattr(args, key, value)
    return args


def _task_from_args(args):
    return harness.SyntheticTask(
        num_classes=args.classes, dim=args.dim, class_sep=args.class_sep,
        source_noise=args.source_noise, severity=args.severity,
        seed=args.task_seed,
    )


def _add_task_flags(p):
    p.add_argument("--classes", type=int, default=4)
    p.add_argument("--dim", type=int, default=16)
    p.add_argument("--class-sep", type=float, default=1.0)
    p.add_argument("--source-noise", type=float, default=0.25)
    p.add_argument("--severity", type=int, default=3)
    p.add_argument("--task-seed", type=int, default=0)
    p.add_argument("--hidden", type=int, default=64)
    p.add_argument("--epochs", type=int, default=1)


def _add_attack_flags(p):
    p.add_argument("--attack", default="targeted",
                   help="none | targeted[:<idx>:<label>] | indiscriminate | "
                        "adaptive[:<idx>:<label>][:<nu>]")
    p.add_argument("--steps", type=int, default=100)
    p.add_argument("--alpha", type=float, default=1.0 / 255.0,
                   help="attack step size")
    p.add_argument("--eps", type=float, default=1.0,
                   help="inf-norm perturbation budget")
    p.add_argument("--delta0", type=float, default=0.5)
    p.add_argument("--knowledge", choices=[atk.WHITE_BOX, atk.SEMI_WHITE_BOX],
                   default=atk.WHITE_BOX)
    p.add_argument("--clip-lo", type=float, default=None)
    p.add_argument("--clip-hi", type=float, default=None)
    p.add_argument("--inner-update", action="store_true",
                   help="apply the optional single-step victim update "
                        "inside each attack iteration")


def _attack_spec_from_args(args):
    objective = atk.parse_attack(args.attack)
    if objective is None:
        return None
    clip_box = None
    if args.clip_lo is not None or args.clip_hi is not None:
        if args.clip_lo is None or args.clip_hi is None:
            raise ValueError("--clip-lo and --clip-hi must be given together")
        clip_box = (args.clip_lo, args.clip_hi)
    return atk.AttackSpec(
        objective=objective, steps=args.steps, step_size=args.alpha,
        eps=args.eps, delta0=args.delta0, knowledge=args.knowledge,
        clip_box=clip_box, inner_update=args.inner_update,
    )


def _seed_override(seeds):
    env = os.environ.get("MEDBN_SEED")
    if env:
        return [int(env)]
    return seeds


def cmd_pretrain(args):
    task = _task_from_args(args)
    net, acc = harness.pretrain(task, arch={"hidden": args.hidden},
                                epochs=args.epochs, seed=args.seed)
    _log(f"pretrained: held-out source accuracy {acc:.4f}")
    meta = {
        "source_accuracy": acc,
        "task": {
            "num_classes": task.num_classes, "dim": task.dim,
            "class_sep": task.class_sep, "source_noise": task.source_noise,
            "severity": task.severity, "seed": task.seed,
        },
    }
    arch = {"in": task.dim, "h": args.hidden, "K": task.num_classes}
    text = nn.checkpoint_to_json(net, arch, args.seed, meta)
    with open(args.out, "w") as fh:
        fh.write(text)
    print(json.dumps({"checkpoint": args.out, "source_accuracy": acc,
                      "seed": args.seed}, sort_keys=True))
    return 0


def cmd_run(args):
    task = _task_from_args(args)
    seeds = _seed_override(_int_list(args.seeds))
    n_values = _int_list(args.n)
    if args.m is not None and args.mal_ratio is not None:
        raise ValueError("give either --m or --mal-ratio, not both")
    attack_spec = _attack_spec_from_args(args)

    checkpoint_cache = {}

    def checkpoint_for(seed):
        if args.checkpoint:
            with open(args.checkpoint) as fh:
                return fh.read()
        if seed not in checkpoint_cache:
            _log(f"pretraining victim for seed {seed}")
            net, acc = harness.pretrain(task, arch={"hidden": args.hidden},
                                        epochs=args.epochs, seed=seed)
            arch = {"in": task.dim, "h": args.hidden, "K": task.num_classes}
            checkpoint_cache[seed] = nn.checkpoint_to_json(
                net, arch, seed, {"source_accuracy": acc}
            )
        return checkpoint_cache[seed]

    work = []
    for n in n_values:
        if args.mal_ratio is not None:
            m_values = [int(round(args.mal_ratio * n))]
        elif args.m is not None:
            m_values = _int_list(args.m)
        else:
            m_values = [12]
        for m in m_values:
            for seed in seeds:
                work.append(scenarios.WorkItem(
                    checkpoint_text=checkpoint_for(seed),
                    task=task, estimator=args.estimator,
                    strategy=args.strategy, filter=args.filter,
                    attack_spec=attack_spec, scenario=args.scenario,
                    T=args.T, n=n, m=m, seed=seed, attack_label=args.attack,
                ))
    results = scenarios.run_many(work, jobs=args.jobs)
    csv_text = harness.results_to_csv([r.config | {
        "asr": r.asr, "er_attacked": r.er_attacked, "er_clean": r.er_clean,
        "seed": r.seed,
    } for r in results])
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(csv_text)
        _log(f"wrote {args.out}")
    else:
        sys.stdout.write(csv_text)
    if args.sidecar:
        with open(args.sidecar, "w") as fh:
            fh.write(harness.sidecar_json(results))
        _log(f"wrote {args.sidecar}")
    return 0


def cmd_verify(args):
    seeds = _seed_override([args.seed])
    median_fn = checks.faulty_median if args.faulty_median else None
    reports = checks.run_all(trials=args.trials,
                             geomed_trials=args.geomed_trials,
                             seed=seeds[0], median_fn=median_fn)
    violations = sum(r.violations for r in reports)
    doc = {
        "properties": [r.to_json() for r in reports],
        "violations": violations,
        "kernel_backend": kernels.backend_name,
    }
    print(json.dumps(doc, indent=1, sort_keys=True))
    return 0 if violations == 0 else 1


def cmd_gradcheck(args):
    estimators = [e.strip() for e in args.estimators.split(",") if e.strip()]
    layers = None
    if args.layers:
        layers = [l.strip() for l in args.layers.split(",") if l.strip()]
    seeds = _seed_override([args.seed])
    tables = gc.run_gradcheck(estimators, seed=seeds[0], layers=layers,
                              near_ties=args.near_ties)
    doc = {est: [row.to_json() for row in rows] for est, rows in tables.items()}
    worst = max(
        (row.max_rel_err for rows in tables.values() for row in rows),
        default=0.0,
    )
    doc["worst"] = worst
    print(json.dumps(doc, indent=1, sort_keys=True))
    return 0 if worst <= args.tolerance else 1


def cmd_stats_dist(args):
    task = _task_from_args(args)
    seeds = _seed_override([args.seed])
    seed = seeds[0]
    net, _ = harness.pretrain(task, arch={"hidden": args.hidden},
                              epochs=args.epochs, seed=seed)
    est = norm.parse_estimator(args.estimator)
    strategy = tta.parse_strategy(args.strategy)
    tta.bind_estimators(net, est, strategy)
    stream = harness.generate_stream(task, 1, args.n, args.m, seed)
    batch = stream[0]
    attack_spec = _attack_spec_from_args(args)
    if attack_spec is None:
        raise ValueError("stats-dist requires an attack (use --attack)")
    pb = atk.make_poisoned_batch(batch.x, batch.labels, batch.mal_indices,
                                 attack_spec)
    pb = atk.dia_attack(net, pb, attack_spec, surrogate=net.clone())
    ben_rows = np.setdiff1d(np.arange(args.n), batch.mal_indices)
    records = harness.stat_l1_distance(net, pb.perturbed(),
                                       Tensor(batch.x.data[ben_rows]))
    print(json.dumps({"seed": seed, "estimator": args.estimator,
                      "attack": args.attack, "layers": records},
                     indent=1, sort_keys=True))
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="medbn-lab",
        description="Data-poisoning attacks on test-time adaptation, with "
                    "robust batch-norm statistics estimators.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    parsers = {}

    p = sub.add_parser("pretrain", help="train a victim and write a checkpoint")
    _add_task_flags(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="checkpoint JSON path")
    p.add_argument("--config", help="JSON config file (flags take precedence)")
    p.set_defaults(func=cmd_pretrain)
    parsers["pretrain"] = p

    p = sub.add_parser("run", help="run attack scenarios and emit CSV results")
    _add_task_flags(p)
    _add_attack_flags(p)
    p.add_argument("--checkpoint", help="existing checkpoint (skips pretraining)")
    p.add_argument("--estimator", default="tebn",
                   help="source | tebn | medbn | medbn-mad | ema:<a> | interp:<l>")
    p.add_argument("--strategy", default="tebn",
                   help="tebn | tent:<lr> | sema:<alpha>")
    p.add_argument("--filter", default="none",
                   help="none | entropy[:<thr>] | confidence[:<thr>]")
    p.add_argument("--scenario", choices=["instant", "cumulative"],
                   default="instant")
    p.add_argument("--T", type=int, default=20)
    p.add_argument("--n", default="64", help="batch size(s), comma separated")
    p.add_argument("--m", default=None, help="malicious count(s), comma separated")
    p.add_argument("--mal-ratio", type=float, default=None,
                   help="malicious fraction of n (alternative to --m)")
    p.add_argument("--seeds", default="0", help="comma-separated seed list")
    p.add_argument("--jobs", type=int, default=os.cpu_count() or 1)
    p.add_argument("--out", help="CSV output path (default: stdout)")
    p.add_argument("--sidecar", help="sidecar JSON path for stat_l1/leakage")
    p.add_argument("--config", help="JSON config file (flags take precedence)")
    p.set_defaults(func=cmd_run)
    parsers["run"] = p

    p = sub.add_parser("verify", aliases=["verify-theorems"],
                       help="run the robustness property suites")
    p.add_argument("--trials", type=int, default=100000,
                   help="fuzz count for the scalar median suites")
    p.add_argument("--geomed-trials", type=int, default=10000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--faulty-median", action="store_true",
                   help=argparse.SUPPRESS)  # negative-control test hook
    p.add_argument("--config", help="JSON config file (flags take precedence)")
    p.set_defaults(func=cmd_verify)
    parsers["verify"] = p
    parsers["verify-theorems"] = p

    p = sub.add_parser("gradcheck", help="finite-difference gradient check")
    p.add_argument("--estimators",
                   default="tebn,medbn,medbn-mad,ema:0.8,interp:0.5",
                   help="comma-separated estimator configs")
    p.add_argument("--layers", default=None,
                   help="restrict to named layers (affine1,norm1,...,input)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--near-ties", action="store_true",
                   help="plant duplicate rows to exercise tie exclusion")
    p.add_argument("--tolerance", type=float, default=1e-5)
    p.add_argument("--config", help="JSON config file (flags take precedence)")
    p.set_defaults(func=cmd_gradcheck)
    parsers["gradcheck"] = p

    p = sub.add_parser("stats-dist",
                       help="L1 statistic-distance diagnostics for one "
                            "attacked batch")
    _add_task_flags(p)
    _add_attack_flags(p)
    p.add_argument("--estimator", default="tebn")
    p.add_argument("--strategy", default="tebn")
    p.add_argument("--n", type=int, default=64)
    p.add_argument("--m", type=int, default=12)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config", help="JSON config file (flags take precedence)")
    p.set_defaults(func=cmd_stats_dist)
    parsers["stats-dist"] = p

    return parser, parsers


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    parser, parsers = build_parser()
    args = parser.parse_args(argv)
    subparser = parsers.get(args.command, parser)
    try:
        args = _merge_config(args, subparser, argv)
        return args.func(args)
    except (ValueError, FileNotFoundError) as exc:
        _log(f"error: {exc}")
        return 2
    except RuntimeError as exc:
        _log(f"error: {exc}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
