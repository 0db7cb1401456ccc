"""Command-line entry point.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import ConfigError, RunConfig, parse_attack_overrides, resolve, _parse_value
from .datasets import DatasetFormatError, save_csv
from .evalkit import confusion_matrix, overlap_histogram, toy_case_gap, transfer_matrix
from .harness import ablate, budget_sweep, eval_checkpoints, eval_specs, run_training, write_table
from .nn import CheckpointError, load_checkpoint

log = logging.getLogger("ducatlab")

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _config(args) -> RunConfig:
    return resolve(args.config, seed=getattr(args, "seed", None))


def _out(args, default: str) -> Path:
    out = Path(args.out or default)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _models(paths):
    if not paths:
        raise UsageError("at least one --checkpoint is required")
    models = []
    for p in paths:
        if not Path(p).is_file():
            raise UsageError(f"checkpoint not found: {p}")
        models.append(load_checkpoint(p))
    return models


def _floats(text: str):
    return [float(_parse_value(t)) for t in text.split(",") if t.strip()]


def cmd_train(args) -> int:
    cfg = _config(args)
    out = _out(args, f"runs/{cfg['run_id']}")
    _, record, report = run_training(cfg, out)
    print(f"best epoch {record.best_epoch}; clean {report.clean_acc:.2f}")
    for row in report.rows():
        print(f"  {row['adversary']}: robust {row['robust']:.2f}  mean {row['mean']:.3f}  nrr {row['nrr']:.3f}")
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = _config(args)
    out = _out(args, "eval")
    _models(args.checkpoint)
    _, test = cfg.datasets()
    specs = eval_specs(cfg)
    if args.attack:
        base = cfg.train_attack()
        specs = {a: parse_attack_overrides(a, base) for a in args.attack}
    seeds = args.seeds or [0, 1, 2]
    rows = eval_checkpoints(args.checkpoint, test, specs, seeds)
    write_table(out / "eval.csv", rows)
    for r in rows:
        print(f"{r['checkpoint']} {r['adversary']}: clean {r['clean']:.2f} robust {r['robust']:.2f} nrr {r['nrr']:.3f}")
    return EXIT_OK


def cmd_analyze(args) -> int:
    cfg = _config(args)
    out = _out(args, f"analysis/{args.analysis}")
    models = _models(args.checkpoint)
    _, test = cfg.datasets()
    spec = cfg.train_attack()
    if args.attack:
        spec = parse_attack_overrides(args.attack, spec)

    if args.analysis == "overlap":
        hist = overlap_histogram(models, test, spec)
        rows = [{"defended_by": k, "count": int(c)} for k, c in enumerate(hist.buckets)]
        write_table(out / "overlap.csv", rows)
        write_table(out / "overlap_samples.csv",
                    [{"sample": i, "defended_by": int(c)} for i, c in enumerate(hist.defended_counts)])
    elif args.analysis == "transfer":
        if len(models) < 2:
            raise UsageError("transfer needs at least two checkpoints")
        tm = transfer_matrix(models, test, spec)
        rows = []
        for s in range(len(models)):
            for t in range(len(models)):
                rows.append({"surrogate": s, "target": t, "success_subset_rate": tm.success_rate[s, t],
                             "fail_subset_rate": tm.fail_rate[s, t], "success_subset_size": int(tm.success_size[s]),
                             "fail_subset_size": int(tm.fail_size[s])})
        write_table(out / "transfer.csv", rows)
    elif args.analysis == "confusion":
        for i, m in enumerate(models):
            mat = confusion_matrix(m, test, spec if args.attacked else None)
            rows = [{"true": r, **{f"pred_{c}": int(mat[r, c]) for c in range(mat.shape[1])}}
                    for r in range(mat.shape[0])]
            write_table(out / f"confusion_{i}.csv", rows)
    elif args.analysis == "toycase":
        if len(models) != 2:
            raise UsageError("toycase needs exactly two checkpoints: hard-label first, two-hot second")
        strong = parse_attack_overrides(args.strong, spec)
        gap = toy_case_gap(models[0], models[1], test, spec, strong)
        write_table(out / "toycase.csv", gap.rows())
    print(f"wrote {out}")
    return EXIT_OK


def cmd_ablate(args) -> int:
    cfg = _config(args)
    out = _out(args, f"ablate/{args.dimension}")
    grid = _floats(args.grid)
    if not grid:
        raise UsageError("--grid must list at least one value")
    rows = ablate(cfg, args.dimension, grid, args.seeds or [0, 1, 2], out)
    write_table(out / "ablate.csv", rows)
    print(f"wrote {len(rows)} rows to {out / 'ablate.csv'}")
    return EXIT_OK


def cmd_budget_sweep(args) -> int:
    cfg = _config(args)
    out = _out(args, "budget_sweep")
    models = _models(args.checkpoint)
    _, test = cfg.datasets()
    eps = _floats(args.epsilons)
    rows = budget_sweep({p: m for p, m in zip(args.checkpoint, models)}, test, cfg.train_attack(), eps)
    write_table(out / "budget_sweep.csv", rows)
    print(f"wrote {out / 'budget_sweep.csv'}")
    return EXIT_OK


def cmd_gen_data(args) -> int:
    cfg = _config(args)
    out = _out(args, "data")
    train, test = cfg.datasets()
    save_csv(train, out / "train.csv")
    save_csv(test, out / "test.csv")
    (out / "config.txt").write_text(cfg.dumps())
    print(f"wrote {len(train)} train / {len(test)} test rows to {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ducatlab", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, checkpoints=False):
        sp.add_argument("--config", help="flat key = value run config")
        sp.add_argument("--seed", type=int, help="override the config seed")
        sp.add_argument("--out", help="output directory")
        if checkpoints:
            sp.add_argument("--checkpoint", action="append", default=[], help="checkpoint path (repeatable)")

    sp = sub.add_parser("train", help="train one model (Algorithm: PGD-AT or DUCAT)")
    common(sp)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="evaluate checkpoints, averaged over attack seeds")
    common(sp, checkpoints=True)
    sp.add_argument("--attack", action="append", help="adversary overrides, e.g. 'steps=100,restarts=10'")
    sp.add_argument("--seeds", type=int, nargs="+", help="attack seeds (default 0 1 2)")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("analyze", help="always-failed / toy-case analyses")
    sp.add_argument("analysis", choices=["overlap", "transfer", "confusion", "toycase"])
    common(sp, checkpoints=True)
    sp.add_argument("--attack", help="overrides of the training adversary used for the analysis")
    sp.add_argument("--strong", default="steps=100,restarts=10", help="toycase: held-out adversary overrides")
    sp.add_argument("--attacked", action="store_true", help="confusion: tabulate predictions under attack")
    sp.set_defaults(func=cmd_analyze)

    sp = sub.add_parser("ablate", help="sweep one DUCAT hyper-parameter")
    common(sp)
    sp.add_argument("--dimension", required=True, choices=["t", "alpha", "beta1", "beta2"])
    sp.add_argument("--grid", required=True, help="comma-separated values, run in this order")
    sp.add_argument("--seeds", type=int, nargs="+", help="training seeds (default 0 1 2)")
    sp.set_defaults(func=cmd_ablate)

    sp = sub.add_parser("budget-sweep", help="robust accuracy across perturbation budgets")
    common(sp, checkpoints=True)
    sp.add_argument("--epsilons", default="0,2/255,4/255,8/255,16/255,32/255")
    sp.set_defaults(func=cmd_budget_sweep)

    sp = sub.add_parser("gen-data", help="write the configured train/test splits as CSV")
    common(sp)
    sp.set_defaults(func=cmd_gen_data)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, UsageError, CheckpointError, DatasetFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # runtime abort: report and signal failure
        log.debug("runtime failure", exc_info=True)
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
