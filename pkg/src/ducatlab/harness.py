"""Run orchestration and on-disk artifacts: run directories, metrics logs and CSV tables.

A run directory holds everything needed to re-derive its numbers::

    config.txt      resolved RunConfig
    metrics.jsonl   one {"run", "epoch", "metric", "value"} object per line
    epochs.csv      per-epoch table
    best.ckpt       best checkpoint (training-adversary robust accuracy)
    final.ckpt      last-epoch checkpoint
    eval.csv        EvalReport of the best checkpoint
"""

from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np

from .attacks import AttackSpec
from .config import RunConfig
from .datasets import Dataset
from .evalkit import evaluate, mean_score, nrr
from .nn import MlpModel, load_checkpoint, save_checkpoint
from .train import EpochRecord, resume, train

ABLATION_KEYS = {"t": "start_epoch", "alpha": "alpha", "beta1": "beta1", "beta2": "beta2"}


class MetricsLog:
    """Append-only JSON-lines metric sink with per-run monotone epochs."""

    def __init__(self, path):
        self.path = Path(path)
        self._last_epoch: Dict[str, int] = {}

    def write(self, run_id: str, epoch: int, metrics: Dict[str, float]) -> None:
        if epoch < self._last_epoch.get(run_id, -1):
            raise ValueError(f"metrics for run {run_id!r} must be appended in epoch order")
        self._last_epoch[run_id] = epoch
        with open(self.path, "a") as fh:
            for name in sorted(metrics):
                fh.write(json.dumps({"run": run_id, "epoch": int(epoch), "metric": name,
                                     "value": float(metrics[name])}) + "\n")


def read_metrics(path) -> List[dict]:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return str(v)


def write_table(path, rows: Sequence[dict], columns: Optional[Sequence[str]] = None) -> None:
    """CSV with a header row; floats written with repr (round-trips exactly)."""
    if columns is None:
        columns = list(rows[0].keys()) if rows else []
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(r.get(c, "")) for c in columns])


def _unfmt(text: str):
    if text == "":
        return None
    if text in ("true", "false"):
        return text == "true"
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        return text


def read_table(path) -> List[dict]:
    with open(path, newline="") as fh:
        return [{k: _unfmt(v) for k, v in row.items()} for row in csv.DictReader(fh)]


def _epoch_row(rec: EpochRecord) -> dict:
    return {"epoch": rec.epoch, "phase": rec.phase, **rec.metrics()}


EPOCH_COLUMNS = ["epoch", "phase", "lr", "loss", "clean_acc", "robust_acc", "dummy_hit_benign", "dummy_hit_adv"]
EVAL_COLUMNS = ["adversary", "head_mode", "n", "clean", "robust", "mean", "nrr", "dummy_hit_clean", "dummy_hit_adv"]


def eval_specs(cfg: RunConfig) -> Dict[str, AttackSpec]:
    """The training adversary (as ``train``) followed by the configured held-out adversaries."""
    return {"train": cfg.train_attack(), **cfg.eval_attacks()}


def run_training(cfg: RunConfig, out_dir, datasets=None) -> tuple:
    """Train per ``cfg`` into ``out_dir``; returns ``(best_model, RunRecord, EvalReport)``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(cfg.dumps())
    metrics_path = out / "metrics.jsonl"
    if metrics_path.exists():
        metrics_path.unlink()
    log = MetricsLog(metrics_path)
    train_set, test_set = datasets if datasets is not None else cfg.datasets()
    tc = cfg.train_config()
    run_id = cfg["run_id"]

    def on_epoch(rec: EpochRecord) -> None:
        log.write(run_id, rec.epoch, rec.metrics())

    if cfg["resume_checkpoint"]:
        model, record = resume(load_checkpoint(cfg["resume_checkpoint"]), tc, train_set, test_set, on_epoch)
    else:
        model, record = train(tc, train_set, test_set, on_epoch=on_epoch)
    save_checkpoint(model, out / "best.ckpt")
    save_checkpoint(record.final_model, out / "final.ckpt")
    write_table(out / "epochs.csv", [_epoch_row(e) for e in record.epochs], EPOCH_COLUMNS)

    report = evaluate(model, test_set, eval_specs(cfg))
    write_table(out / "eval.csv", report.rows(), EVAL_COLUMNS)
    final = {"best_epoch": -1 if record.best_epoch is None else record.best_epoch, "eval/clean": report.clean_acc}
    for name in report.robust_acc:
        final[f"eval/{name}/robust"] = report.robust_acc[name]
        final[f"eval/{name}/nrr"] = report.nrr(name)
    log.write(run_id, tc.epochs, final)
    return model, record, report


def eval_checkpoints(paths: Sequence[str], dataset: Dataset, specs: Dict[str, AttackSpec],
                     seeds: Sequence[int] = (0,)) -> List[dict]:
    """One row per (checkpoint, adversary); clean/robust averaged over attack seeds, Mean/NRR from those."""
    rows = []
    for path in paths:
        model = load_checkpoint(path)
        per_seed = [evaluate(model, dataset, {n: s.with_(seed=seed) for n, s in specs.items()}) for seed in seeds]
        for name in specs:
            clean = float(np.mean([r.clean_acc for r in per_seed]))
            robust = float(np.mean([r.robust_acc[name] for r in per_seed]))
            rows.append({"checkpoint": str(path), "adversary": name, "seeds": len(seeds), "clean": clean,
                         "robust": robust, "mean": mean_score(clean, robust), "nrr": nrr(clean, robust)})
    return rows


def budget_sweep(models: Dict[str, MlpModel], dataset: Dataset, base: AttackSpec,
                 epsilons: Iterable[float], step_ratio: float = 0.25) -> List[dict]:
    """Robust accuracy per budget; step size scales with epsilon, epsilon 0 is the identity adversary."""
    rows = []
    for name, model in models.items():
        for eps in sorted(float(e) for e in epsilons):
            if eps == 0:
                spec = base.with_(epsilon=0.0, steps=0, random_start=False, restarts=1)
            else:
                spec = base.with_(epsilon=eps, step_size=eps * step_ratio)
            rep = evaluate(model, dataset, {"sweep": spec})
            rob = rep.robust_acc["sweep"]
            rows.append({"model": name, "epsilon": eps, "epsilon_255": eps * 255, "clean": rep.clean_acc,
                         "robust": rob, "mean": mean_score(rep.clean_acc, rob), "nrr": nrr(rep.clean_acc, rob)})
    return rows


def ablate(base: RunConfig, dimension: str, grid: Sequence[float], seeds: Sequence[int], out_dir,
           datasets=None) -> List[dict]:
    """Train one run per (grid value, seed); rows follow the grid order, then the seed order."""
    if dimension not in ABLATION_KEYS:
        raise ValueError(f"unknown ablation dimension {dimension!r}; choose from {sorted(ABLATION_KEYS)}")
    key = ABLATION_KEYS[dimension]
    out = Path(out_dir)
    rows = []
    for value in grid:
        for seed in seeds:
            cfg = base.with_(**{key: value, "seed": seed, "run_id": f"{base['run_id']}-{dimension}{value}-s{seed}"})
            _, record, report = run_training(cfg, out / f"{dimension}={value}" / f"seed{seed}", datasets)
            row = {"dimension": dimension, "value": cfg[key], "seed": seed, "best_epoch": record.best_epoch,
                   "clean": report.clean_acc, "robust": report.robust_acc["train"],
                   "mean": report.mean("train"), "nrr": report.nrr("train")}
            held = [n for n in report.robust_acc if n != "train"]
            if held:
                row["heldout_robust"] = report.robust_acc[held[-1]]
            rows.append(row)
    return rows
