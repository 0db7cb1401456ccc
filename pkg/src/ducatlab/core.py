"""Dummy-class paradigm: two-hot labels, the DUCAT loss, projection and 0-1 risk.

Class ``k`` is paired with dummy slot ``C + perm[k]`` of a doubled head.
The loss weighs each sample's original/dummy targets with two-hot labels::

    l(y, beta) = beta * onehot(y)  ||  (1 - beta) * onehot(perm[y])

benign samples are supervised with ``l(y, beta1)`` and adversarial ones with
``l(y, 1 - beta2)``; ``alpha`` balances the two terms. At inference a dummy
prediction is mapped back to its original class, outside the model graph.

Only this two-hot instantiation is implemented. More general per-slot weights
for the benign/adversarial original and dummy targets would fit the same
decomposition but are not exposed.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import tensor as T
from .nn import MlpModel, forward, logits_np


@dataclass(frozen=True)
class DucatHyper:
    alpha: float = 0.5
    beta1: float = 0.75
    beta2: float = 1.0
    start_epoch: int = 0

    def __post_init__(self):
        for name in ("alpha", "beta1", "beta2"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        if self.start_epoch < 0:
            raise ValueError("start_epoch must be >= 0")


def _identity_perm(num_classes: int) -> np.ndarray:
    return np.arange(num_classes, dtype=np.int64)


def make_two_hot(y: int, num_classes: int, beta: float, perm=None) -> np.ndarray:
    """Length-2C label with mass ``beta`` on ``y`` and ``1 - beta`` on its dummy slot."""
    if not 0 <= y < num_classes:
        raise ValueError(f"label {y} outside [0, {num_classes})")
    if not 0.0 <= beta <= 1.0:
        raise ValueError(f"beta must lie in [0, 1], got {beta}")
    perm = _identity_perm(num_classes) if perm is None else np.asarray(perm)
    out = np.zeros(2 * num_classes, dtype=T.get_default_dtype())
    out[y] = beta
    out[num_classes + perm[y]] = 1.0 - beta
    return out


def two_hot_batch(y, num_classes: int, beta: float, perm=None) -> np.ndarray:
    y = np.asarray(y, dtype=np.int64)
    if y.size and (y.min() < 0 or y.max() >= num_classes):
        raise ValueError(f"labels outside [0, {num_classes})")
    if not 0.0 <= beta <= 1.0:
        raise ValueError(f"beta must lie in [0, 1], got {beta}")
    perm = _identity_perm(num_classes) if perm is None else np.asarray(perm)
    out = np.zeros((y.shape[0], 2 * num_classes), dtype=T.get_default_dtype())
    rows = np.arange(y.shape[0])
    out[rows, y] = beta
    out[rows, num_classes + perm[y]] = 1.0 - beta
    return out


def ducat_loss_from_logits(logits_benign, logits_adv, y, num_classes, hyper: DucatHyper, perm=None):
    benign_target = two_hot_batch(y, num_classes, hyper.beta1, perm)
    adv_target = two_hot_batch(y, num_classes, 1.0 - hyper.beta2, perm)
    return T.add(
        T.scale(T.cross_entropy(logits_benign, benign_target), hyper.alpha),
        T.scale(T.cross_entropy(logits_adv, adv_target), 1.0 - hyper.alpha),
    )


def ducat_loss(model: MlpModel, x, x_adv, y, hyper: DucatHyper) -> T.Tensor:
    """alpha * CE(x, l(y, beta1)) + (1 - alpha) * CE(x_adv, l(y, 1 - beta2)), batch-averaged."""
    if not model.is_ducat:
        raise ValueError("ducat_loss needs a model with a doubled (2C) head")
    # Tensors pass through untouched so callers can take input gradients
    x = x if isinstance(x, T.Tensor) else np.asarray(x)
    x_adv = x_adv if isinstance(x_adv, T.Tensor) else np.asarray(x_adv)
    if x.shape != x_adv.shape or x.shape[0] != len(y):
        raise T.ShapeError("benign batch, adversarial batch and labels must align")
    return ducat_loss_from_logits(forward(model, x), forward(model, x_adv), y,
                                  model.num_classes, hyper, model.perm)


def project_prediction(k, num_classes: int, perm=None):
    """Map a raw 2C index to its class: identity below C, inverse permutation above.

    Accepts a scalar or an integer array.
    """
    perm = _identity_perm(num_classes) if perm is None else np.asarray(perm)
    k_arr = np.asarray(k, dtype=np.int64)
    if np.any((k_arr < 0) | (k_arr >= 2 * num_classes)):
        raise ValueError(f"raw index outside [0, {2 * num_classes})")
    inv = np.argsort(perm)
    out = np.where(k_arr < num_classes, k_arr, inv[np.clip(k_arr - num_classes, 0, num_classes - 1)])
    return int(out) if out.ndim == 0 else out


class Prediction(NamedTuple):
    raw: np.ndarray
    projected: np.ndarray
    is_dummy: np.ndarray


def predict_from_logits(logits: np.ndarray, num_classes: int, perm=None) -> Prediction:
    # np.argmax returns the lowest index on ties
    raw = np.argmax(logits, axis=1)
    if logits.shape[1] == num_classes:
        return Prediction(raw, raw.copy(), np.zeros(raw.shape, dtype=bool))
    return Prediction(raw, project_prediction(raw, num_classes, perm), raw >= num_classes)


def predict(model: MlpModel, x) -> Prediction:
    """Raw 2C argmax, projected class and dummy-hit flag for a doubled-head model."""
    if not model.is_ducat:
        raise ValueError("predict needs a doubled-head model; use predict_classes for standard heads")
    return predict_from_logits(logits_np(model, x), model.num_classes, model.perm)


def predict_classes(model: MlpModel, x) -> np.ndarray:
    """Final class decision for either head mode (projection applied when doubled)."""
    return predict_from_logits(logits_np(model, x), model.num_classes, model.perm).projected


def zero_one_risk_from_raw(raw_benign, raw_adv, y, num_classes: int, hyper: DucatHyper, perm=None) -> float:
    perm = _identity_perm(num_classes) if perm is None else np.asarray(perm)
    y = np.asarray(y, dtype=np.int64)
    dummy = num_classes + perm[y]
    g, g_adv = np.asarray(raw_benign), np.asarray(raw_adv)
    benign = hyper.beta1 * (g != y) + (1 - hyper.beta1) * (g != dummy)
    adv = hyper.beta2 * (g_adv != dummy) + (1 - hyper.beta2) * (g_adv != y)
    return float(np.mean(hyper.alpha * benign + (1 - hyper.alpha) * adv))


def zero_one_risk(model: MlpModel, batch, hyper: DucatHyper) -> float:
    """Empirical 0-1 DUCAT risk of a paired ``(x, x_adv, y)`` batch, judged on raw predictions."""
    x, x_adv, y = batch
    raw_b = predict(model, x).raw
    raw_a = predict(model, x_adv).raw
    return zero_one_risk_from_raw(raw_b, raw_a, y, model.num_classes, hyper, model.perm)
