"""Gradient-based L-inf / L2 attacks (FGSM, PGD, targeted PGD).

The adversary optimises raw logits; it never sees the dummy-to-original
projection. Success is judged afterwards on the projected class.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, replace
from typing import NamedTuple, Optional, Tuple

import numpy as np

from . import tensor as T
from .core import predict_classes
from .nn import MlpModel, forward

LINF = "linf"
L2 = "l2"

UNTARGETED = "untargeted"
TARGETED_ORIGINAL = "targeted_original"
TARGETED_DUMMY = "targeted_dummy"

FULL_HEAD = "full"
ORIGINAL_HEAD = "original"


@dataclass(frozen=True)
class AttackSpec:
    """Adversary definition.

    ``loss_head="full"`` runs cross-entropy over every logit the model has
    (2C for a doubled head) against the one-hot true class; ``"original"``
    restricts the loss to the first C logits. ``clip`` is the valid input
    range, ``None`` to disable range clipping.
    """

    norm: str = LINF
    epsilon: float = 8 / 255
    step_size: float = 2 / 255
    steps: int = 10
    restarts: int = 1
    random_start: bool = True
    target_mode: str = UNTARGETED
    loss_head: str = FULL_HEAD
    clip: Optional[Tuple[float, float]] = (0.0, 1.0)
    seed: int = 0

    def __post_init__(self):
        if self.norm not in (LINF, L2):
            raise ValueError(f"unknown norm {self.norm!r}")
        if self.epsilon < 0:
            raise ValueError("epsilon must be >= 0")
        if self.steps < 0:
            raise ValueError("steps must be >= 0")
        if self.steps > 0 and self.step_size <= 0:
            raise ValueError("step_size must be > 0 when steps > 0")
        if self.restarts < 1:
            raise ValueError("restarts must be >= 1")
        if self.target_mode not in (UNTARGETED, TARGETED_ORIGINAL, TARGETED_DUMMY):
            raise ValueError(f"unknown target_mode {self.target_mode!r}")
        if self.loss_head not in (FULL_HEAD, ORIGINAL_HEAD):
            raise ValueError(f"unknown loss_head {self.loss_head!r}")
        if self.clip is not None:
            object.__setattr__(self, "clip", (float(self.clip[0]), float(self.clip[1])))

    @property
    def is_identity(self) -> bool:
        return self.steps == 0 and not self.random_start

    def name(self) -> str:
        if self.steps == 0:
            return "clean" if not self.random_start else "random"
        tag = f"PGD-{self.steps}"
        if self.restarts > 1:
            tag += f"x{self.restarts}"
        if self.norm == L2:
            tag += "-L2"
        if self.target_mode != UNTARGETED:
            tag += "-" + self.target_mode
        return tag

    def with_(self, **kw) -> "AttackSpec":
        return replace(self, **kw)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["clip"] = list(self.clip) if self.clip is not None else None
        return d


class AdversarialBatch(NamedTuple):
    x_adv: np.ndarray
    success_mask: np.ndarray
    perturbation_norms: np.ndarray


def perturbation_norms(delta: np.ndarray, norm: str) -> np.ndarray:
    if norm == LINF:
        return np.abs(delta).max(axis=1) if delta.size else np.zeros(delta.shape[0])
    return np.sqrt((delta * delta).sum(axis=1))


def project(x_adv: np.ndarray, x: np.ndarray, spec: AttackSpec) -> np.ndarray:
    """Back into the eps-ball around ``x`` (clamp for L-inf, radial rescale for L2), then the valid range."""
    delta = x_adv - x
    if spec.norm == LINF:
        delta = np.clip(delta, -spec.epsilon, spec.epsilon)
    else:
        n = np.sqrt((delta * delta).sum(axis=1, keepdims=True))
        factor = np.where(n > spec.epsilon, spec.epsilon / np.maximum(n, 1e-300), 1.0)
        delta = delta * factor
    out = x + delta
    if spec.clip is not None:
        out = np.clip(out, spec.clip[0], spec.clip[1])
    return out


def _random_start(x: np.ndarray, spec: AttackSpec, rng: np.random.Generator) -> np.ndarray:
    if spec.norm == LINF:
        delta = rng.uniform(-spec.epsilon, spec.epsilon, size=x.shape)
    else:
        d = x.shape[1]
        direction = rng.standard_normal(x.shape)
        direction /= np.maximum(np.sqrt((direction ** 2).sum(axis=1, keepdims=True)), 1e-300)
        radius = spec.epsilon * rng.uniform(size=(x.shape[0], 1)) ** (1.0 / d)
        delta = direction * radius
    return project(x + delta, x, spec)


def _loss_targets(model: MlpModel, labels: np.ndarray, spec: AttackSpec):
    width = model.num_classes if spec.loss_head == ORIGINAL_HEAD else model.output_dim
    if labels.size and labels.max() >= width:
        raise ValueError(f"attack label outside the {spec.loss_head} loss head (width {width})")
    return width, T.one_hot(labels, width, dtype=model.weights[0].data.dtype)


def _per_sample_loss_and_grad(frozen: MlpModel, x: np.ndarray, width: int, target: np.ndarray):
    xt = T.Tensor(x, requires_grad=True, dtype=x.dtype)
    logits = forward(frozen, xt)
    if width != frozen.output_dim:
        logits = T.take_cols(logits, 0, width)
    per_sample = T.cross_entropy(logits, target, reduction="none")
    T.backward(T.sum(per_sample))
    return per_sample.data, xt.grad


def _direction(grad: np.ndarray, norm: str) -> np.ndarray:
    if norm == LINF:
        return np.sign(grad)
    n = np.sqrt((grad * grad).sum(axis=1, keepdims=True))
    return np.where(n > 0, grad / np.where(n > 0, n, 1.0), 0.0)


def _check_input(model: MlpModel, x: np.ndarray, y: np.ndarray) -> None:
    if x.ndim != 2 or x.shape[1] != model.input_dim:
        raise T.ShapeError(f"expected input of shape (B, {model.input_dim}), got {x.shape}")
    if y.shape != (x.shape[0],):
        raise T.ShapeError("labels must be a vector matching the batch")


def _finish(model: MlpModel, x, x_adv, y, spec) -> AdversarialBatch:
    success = predict_classes(model, x_adv) != y
    return AdversarialBatch(x_adv, success, perturbation_norms(x_adv - x, spec.norm))


def _run(model, x, y, attack_labels, sign: float, spec: AttackSpec, rng) -> AdversarialBatch:
    """Core loop shared by every attack. ``sign=+1`` ascends CE on ``attack_labels``, ``-1`` descends."""
    frozen = model.frozen()
    width, target = _loss_targets(model, attack_labels, spec)
    rng = rng if rng is not None else np.random.default_rng(spec.seed)
    best_x = None
    best_obj = None
    for _ in range(spec.restarts):
        cur = _random_start(x, spec, rng) if spec.random_start else x.copy()
        for _ in range(spec.steps):
            _, grad = _per_sample_loss_and_grad(frozen, cur, width, target)
            cur = project(cur + spec.step_size * _direction(sign * grad, spec.norm), x, spec)
        if spec.restarts == 1:
            best_x = cur
            break
        loss, _ = _per_sample_loss_and_grad(frozen, cur, width, target)
        obj = sign * loss
        if best_x is None:
            best_x, best_obj = cur, obj
        else:
            # strict improvement only: earlier restart wins ties
            better = obj > best_obj
            best_x = np.where(better[:, None], cur, best_x)
            best_obj = np.where(better, obj, best_obj)
    return _finish(model, x, best_x, y, spec)


def _prepare(model, x, y):
    dt = model.weights[0].data.dtype
    x = np.asarray(x, dtype=dt)
    y = np.asarray(y, dtype=np.int64)
    _check_input(model, x, y)
    return x, y


def fgsm(model: MlpModel, x, y, spec: AttackSpec) -> AdversarialBatch:
    """One full-budget signed (L-inf) or normalised (L2) gradient step, no random start."""
    if spec.steps != 1:
        raise ValueError("fgsm requires spec.steps == 1")
    x, y = _prepare(model, x, y)
    width, target = _loss_targets(model, y, spec)
    _, grad = _per_sample_loss_and_grad(model.frozen(), x, width, target)
    x_adv = project(x + spec.epsilon * _direction(grad, spec.norm), x, spec)
    return _finish(model, x, x_adv, y, spec)


def pgd(model: MlpModel, x, y, spec: AttackSpec, rng: Optional[np.random.Generator] = None) -> AdversarialBatch:
    """Untargeted PGD with optional random start and restarts.

    Among restarts the candidate with the largest final loss is kept per
    sample (first restart wins ties). ``rng`` overrides the ``spec.seed``
    stream; the trainer passes one per batch.
    """
    if spec.steps < 1:
        raise ValueError("pgd requires spec.steps >= 1")
    x, y = _prepare(model, x, y)
    return _run(model, x, y, y, 1.0, spec, rng)


def targeted_pgd(model: MlpModel, x, y, y_target, spec: AttackSpec,
                 rng: Optional[np.random.Generator] = None) -> AdversarialBatch:
    """Descend CE towards ``y_target`` (raw output indices). Success still means projected != y."""
    if spec.target_mode == UNTARGETED:
        raise ValueError("targeted_pgd needs a targeted spec")
    if spec.steps < 1:
        raise ValueError("targeted_pgd requires spec.steps >= 1")
    x, y = _prepare(model, x, y)
    y_target = np.asarray(y_target, dtype=np.int64)
    c = model.num_classes
    if spec.target_mode == TARGETED_ORIGINAL:
        if np.any(y_target == y) or np.any((y_target < 0) | (y_target >= c)):
            raise ValueError("original-class targets must differ from the true label and lie in [0, C)")
    else:
        if not model.is_ducat:
            raise ValueError("dummy targets need a doubled-head model")
        if spec.loss_head == ORIGINAL_HEAD:
            raise ValueError("dummy targets need loss_head='full'")
        if np.any((y_target < c) | (y_target >= 2 * c)) or np.any(y_target == c + model.perm[y]):
            raise ValueError("dummy targets must be dummy slots other than the true class's own")
    return _run(model, x, y, y_target, -1.0, spec, rng)


def sample_targets(y, num_classes: int, mode: str, seed: int = 0, perm=None) -> np.ndarray:
    """Uniform random attack targets.

    ``targeted_original``: any original class except ``y``.
    ``targeted_dummy``: any dummy slot ``C + k`` except the true class's own ``C + perm[y]``.
    """
    if num_classes < 2:
        raise ValueError("need at least two classes to pick a target")
    y = np.asarray(y, dtype=np.int64)
    rng = np.random.default_rng(seed)
    offset = 1 + rng.integers(0, num_classes - 1, size=y.shape)
    if mode == TARGETED_ORIGINAL:
        return (y + offset) % num_classes
    if mode == TARGETED_DUMMY:
        perm = np.arange(num_classes) if perm is None else np.asarray(perm)
        return num_classes + (perm[y] + offset) % num_classes
    raise ValueError(f"unknown target mode {mode!r}")


def attack(model: MlpModel, x, y, spec: AttackSpec, rng: Optional[np.random.Generator] = None,
           targets=None) -> AdversarialBatch:
    """Dispatch on the spec: identity, PGD, or targeted PGD (targets sampled if not given)."""
    x_arr, y_arr = _prepare(model, x, y)
    if spec.steps == 0:
        if spec.random_start:
            x_adv = _random_start(x_arr, spec, rng if rng is not None else np.random.default_rng(spec.seed))
        else:
            x_adv = x_arr.copy()
        return _finish(model, x_arr, x_adv, y_arr, spec)
    if spec.target_mode == UNTARGETED:
        return pgd(model, x_arr, y_arr, spec, rng)
    if targets is None:
        targets = sample_targets(y_arr, model.num_classes, spec.target_mode, spec.seed, model.perm)
    return targeted_pgd(model, x_arr, y_arr, targets, spec, rng)
