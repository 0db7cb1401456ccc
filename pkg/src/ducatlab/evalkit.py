"""Accuracy / robustness metrics and the always-failed and toy-case analyses.

Every accuracy here is a percentage, judged on the final class decision
(dummy predictions projected back), never on the raw 2C index.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Union

import numpy as np

from .attacks import AttackSpec, attack
from .core import predict_from_logits
from .datasets import Dataset
from .nn import MlpModel, logits_np


def mean_score(clean: float, robust: float) -> float:
    return (clean + robust) / 2.0


def nrr(clean: float, robust: float) -> float:
    """Natural-robustness ratio: harmonic mean of clean and robust accuracy; 0 when both are 0."""
    if clean + robust == 0:
        return 0.0
    return 2.0 * clean * robust / (clean + robust)


@dataclass
class EvalReport:
    head_mode: str
    n: int
    clean_acc: float
    robust_acc: Dict[str, float]
    dummy_hit_clean: float
    dummy_hit_adv: Dict[str, float]
    clean_pred: np.ndarray = field(repr=False)
    adv_pred: Dict[str, np.ndarray] = field(repr=False)
    defended: Dict[str, np.ndarray] = field(repr=False)

    def mean(self, name: str) -> float:
        return mean_score(self.clean_acc, self.robust_acc[name])

    def nrr(self, name: str) -> float:
        return nrr(self.clean_acc, self.robust_acc[name])

    def rows(self) -> List[dict]:
        """One summary row per adversary, plot/CSV ready."""
        out = []
        for name, rob in self.robust_acc.items():
            out.append({
                "adversary": name, "head_mode": self.head_mode, "n": self.n,
                "clean": self.clean_acc, "robust": rob, "mean": self.mean(name), "nrr": self.nrr(name),
                "dummy_hit_clean": self.dummy_hit_clean, "dummy_hit_adv": self.dummy_hit_adv[name],
            })
        return out


def _named(specs: Union[Mapping[str, AttackSpec], Sequence[AttackSpec]]) -> Dict[str, AttackSpec]:
    if isinstance(specs, Mapping):
        return dict(specs)
    out = {}
    for s in specs:
        name = s.name()
        while name in out:
            name += "'"
        out[name] = s
    return out


def evaluate(model: MlpModel, dataset: Dataset, specs) -> EvalReport:
    """Clean accuracy plus robust accuracy under every adversary in ``specs``."""
    if len(dataset) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    x, y = dataset.features, dataset.labels
    clean = predict_from_logits(logits_np(model, x), model.num_classes, model.perm)
    robust, hits, preds, defended = {}, {}, {}, {}
    for name, spec in _named(specs).items():
        adv = attack(model, x, y, spec)
        p = predict_from_logits(logits_np(model, adv.x_adv), model.num_classes, model.perm)
        defended[name] = ~adv.success_mask
        preds[name] = p.projected
        robust[name] = 100.0 * float(np.mean(defended[name]))
        hits[name] = 100.0 * float(np.mean(p.is_dummy))
    return EvalReport(model.head_mode, len(dataset), 100.0 * float(np.mean(clean.projected == y)), robust,
                      100.0 * float(np.mean(clean.is_dummy)), hits, clean.projected, preds, defended)


def _check_models(models: Sequence[MlpModel], dataset: Dataset, minimum: int) -> None:
    if len(models) < minimum:
        raise ValueError(f"need at least {minimum} models, got {len(models)}")
    for m in models:
        if m.num_classes != dataset.num_classes or m.input_dim != dataset.dim:
            raise ValueError("every model must share the dataset's classes and input dimension")


@dataclass
class OverlapHistogram:
    defended_counts: np.ndarray
    buckets: np.ndarray

    @property
    def num_models(self) -> int:
        return self.buckets.size - 1


def overlap_histogram(models: Sequence[MlpModel], dataset: Dataset, spec: AttackSpec) -> OverlapHistogram:
    """Per sample, how many models survive their own white-box attack; bucketed 0..M.

    Bucket 0 holds the always-failed samples.
    """
    _check_models(models, dataset, 1)
    x, y = dataset.features, dataset.labels
    counts = np.zeros(len(dataset), dtype=np.int64)
    for m in models:
        counts += ~attack(m, x, y, spec).success_mask
    return OverlapHistogram(counts, np.bincount(counts, minlength=len(models) + 1))


@dataclass
class TransferMatrix:
    """``success_rate[s, t]``: % of surrogate-s adversarial samples that fool target t, among
    those that fooled s; ``fail_rate`` the same among those that did not. NaN for an empty subset."""

    success_rate: np.ndarray
    fail_rate: np.ndarray
    success_size: np.ndarray
    fail_size: np.ndarray


def transfer_matrix(models: Sequence[MlpModel], dataset: Dataset, spec: AttackSpec) -> TransferMatrix:
    _check_models(models, dataset, 2)
    x, y = dataset.features, dataset.labels
    m = len(models)
    succ = np.full((m, m), np.nan)
    fail = np.full((m, m), np.nan)
    n_succ = np.zeros(m, dtype=np.int64)
    n_fail = np.zeros(m, dtype=np.int64)
    for s, surrogate in enumerate(models):
        adv = attack(surrogate, x, y, spec)
        mask = adv.success_mask
        n_succ[s], n_fail[s] = mask.sum(), (~mask).sum()
        for t, target in enumerate(models):
            if t == s:
                fooled = mask
            else:
                p = predict_from_logits(logits_np(target, adv.x_adv), target.num_classes, target.perm)
                fooled = p.projected != y
            if n_succ[s]:
                succ[s, t] = 100.0 * float(np.mean(fooled[mask]))
            if n_fail[s]:
                fail[s, t] = 100.0 * float(np.mean(fooled[~mask]))
    return TransferMatrix(succ, fail, n_succ, n_fail)


def confusion_matrix(model: MlpModel, dataset: Dataset, spec: Optional[AttackSpec] = None) -> np.ndarray:
    """C x C counts, rows = true class, columns = final predicted class (under attack if ``spec``)."""
    x, y = dataset.features, dataset.labels
    if spec is not None:
        x = attack(model, x, y, spec).x_adv
    pred = predict_from_logits(logits_np(model, x), model.num_classes, model.perm).projected
    c = dataset.num_classes
    out = np.zeros((c, c), dtype=np.int64)
    np.add.at(out, (y, pred), 1)
    return out


@dataclass
class GapReport:
    hard_train: float
    hard_strong: float
    twohot_train: float
    twohot_strong: float

    @property
    def hard_gap(self) -> float:
        return self.hard_train - self.hard_strong

    @property
    def twohot_gap(self) -> float:
        return self.twohot_train - self.twohot_strong

    def rows(self) -> List[dict]:
        return [
            {"model": "hard", "train_adv": self.hard_train, "strong_adv": self.hard_strong, "gap": self.hard_gap},
            {"model": "two_hot", "train_adv": self.twohot_train, "strong_adv": self.twohot_strong,
             "gap": self.twohot_gap},
        ]


def toy_case_gap(model_hard: MlpModel, model_twohot: MlpModel, dataset: Dataset,
                 train_spec: AttackSpec, strong_spec: AttackSpec) -> GapReport:
    """Robust accuracy of both models under the training and a stronger held-out adversary."""
    if strong_spec.steps < train_spec.steps or strong_spec.restarts < train_spec.restarts:
        raise ValueError("strong adversary must dominate the training adversary in steps and restarts")
    if strong_spec.epsilon != train_spec.epsilon or strong_spec.norm != train_spec.norm:
        raise ValueError("both adversaries must share the threat model (norm and epsilon)")
    x, y = dataset.features, dataset.labels

    def acc(m, spec):
        return 100.0 * float(np.mean(~attack(m, x, y, spec).success_mask))

    return GapReport(acc(model_hard, train_spec), acc(model_hard, strong_spec),
                     acc(model_twohot, train_spec), acc(model_twohot, strong_spec))
