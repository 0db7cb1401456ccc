"""Adversarial training: the PGD-AT baseline and DUCAT with its start epoch and resume mode.

Per epoch every training batch is attacked against the current model. Before
the DUCAT start epoch the update is plain adversarial cross-entropy on the
original C classes (identical to PGD-AT); from the start epoch on the head is
doubled and the two-hot DUCAT loss takes over.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import tensor as T
from .attacks import ORIGINAL_HEAD, AttackSpec, attack
from .core import DucatHyper, ducat_loss, predict_from_logits
from .datasets import Dataset
from .nn import InitSpec, MlpModel, build_mlp, double_last_layer, forward, logits_np

log = logging.getLogger(__name__)

PGD_AT = "pgd_at"
DUCAT = "ducat"
DUCAT_HARD_TOY = "ducat_hard_toy"
METHODS = (PGD_AT, DUCAT, DUCAT_HARD_TOY)


class NonFiniteLossError(RuntimeError):
    pass


@dataclass(frozen=True)
class LrSchedule:
    initial: float = 0.1
    decay_epochs: Tuple[int, ...] = ()
    factor: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, "decay_epochs", tuple(int(e) for e in self.decay_epochs))
        if list(self.decay_epochs) != sorted(self.decay_epochs):
            raise ValueError("decay epochs must be non-decreasing")


def lr_at(schedule: LrSchedule, epoch: int) -> float:
    """Initial rate times ``factor`` for every decay epoch <= ``epoch``."""
    lr = schedule.initial
    for e in schedule.decay_epochs:
        if epoch >= e:
            lr *= schedule.factor
    return lr


def sgd_update(params: Sequence[T.Tensor], grads: Sequence[np.ndarray], velocity: List[np.ndarray],
               lr: float, momentum: float = 0.9, weight_decay: float = 0.0) -> None:
    """In place: ``v <- mu*v + g + wd*theta``; ``theta <- theta - lr*v``."""
    if not (len(params) == len(grads) == len(velocity)):
        raise ValueError("params, grads and velocity buffers must align")
    for p, g, v in zip(params, grads, velocity):
        if g.shape != p.shape or v.shape != p.shape:
            raise T.ShapeError(f"buffer shape mismatch for parameter of shape {p.shape}")
        v *= momentum
        v += g
        if weight_decay:
            v += weight_decay * p.data
        p.data -= lr * v


class Sgd:
    """Momentum SGD holding one velocity buffer per parameter."""

    def __init__(self, params: Sequence[T.Tensor], momentum: float = 0.9, weight_decay: float = 0.0):
        self.params = list(params)
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity = [np.zeros_like(p.data) for p in self.params]

    def rebind(self, params: Sequence[T.Tensor]) -> None:
        """Point at new parameter tensors (after head doubling); grown rows start with zero velocity."""
        new_v = []
        for p, v in zip(params, self.velocity):
            if p.shape == v.shape:
                new_v.append(v)
            else:
                grown = np.zeros_like(p.data)
                grown[: v.shape[0]] = v
                new_v.append(grown)
        self.params = list(params)
        self.velocity = new_v

    def step(self, lr: float) -> None:
        grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in self.params]
        sgd_update(self.params, grads, self.velocity, lr, self.momentum, self.weight_decay)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


@dataclass(frozen=True)
class TrainConfig:
    method: str = DUCAT
    epochs: int = 60
    resume_epoch: int = 0
    hyper: DucatHyper = field(default_factory=lambda: DucatHyper(start_epoch=50))
    train_attack: AttackSpec = field(default_factory=AttackSpec)
    lr: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 5e-4
    lr_decay_epochs: Tuple[int, ...] = (40, 50)
    lr_decay_factor: float = 0.1
    batch_size: int = 128
    seed: int = 0
    hidden: Tuple[int, ...] = (64, 64)
    dummy_row_init: str = "fresh"

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        if not 0 <= self.resume_epoch <= self.epochs:
            raise ValueError("need 0 <= resume_epoch <= epochs")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.method != PGD_AT and self.hyper.start_epoch > self.epochs:
            raise ValueError("DUCAT start epoch must not exceed the total number of epochs")

    @property
    def schedule(self) -> LrSchedule:
        return LrSchedule(self.lr, self.lr_decay_epochs, self.lr_decay_factor)

    @property
    def effective_hyper(self) -> DucatHyper:
        if self.method == DUCAT_HARD_TOY:
            return replace(self.hyper, beta1=1.0, beta2=1.0)
        return self.hyper

    @property
    def uses_dummy(self) -> bool:
        return self.method != PGD_AT

    def ducat_active(self, epoch: int) -> bool:
        return self.uses_dummy and epoch >= self.hyper.start_epoch

    def with_(self, **kw) -> "TrainConfig":
        return replace(self, **kw)


@dataclass
class EpochRecord:
    epoch: int
    phase: str
    lr: float
    loss: float
    batch_losses: List[float]
    clean_acc: Optional[float] = None
    robust_acc: Optional[float] = None
    dummy_hit_benign: Optional[float] = None
    dummy_hit_adv: Optional[float] = None

    def metrics(self) -> Dict[str, float]:
        out = {"lr": self.lr, "loss": self.loss}
        for name in ("clean_acc", "robust_acc", "dummy_hit_benign", "dummy_hit_adv"):
            v = getattr(self, name)
            if v is not None:
                out[name] = v
        return out


@dataclass
class RunRecord:
    config: TrainConfig
    epochs: List[EpochRecord] = field(default_factory=list)
    best_epoch: Optional[int] = None
    best_model: Optional[MlpModel] = None
    final_model: Optional[MlpModel] = None

    def losses(self) -> List[float]:
        return [e.loss for e in self.epochs]


def epoch_order(n: int, seed: int, epoch: int) -> np.ndarray:
    """Seeded shuffle of sample indices for one epoch."""
    return np.random.default_rng([seed, 2, epoch]).permutation(n)


def batch_attack_rng(seed: int, epoch: int, batch: int) -> np.random.Generator:
    return np.random.default_rng([seed, 3, epoch, batch])


def adversarial_ce(model: MlpModel, x_adv, y) -> T.Tensor:
    """Mean one-hot CE over the first C logits (the PGD-AT objective)."""
    logits = forward(model, x_adv)
    if model.is_ducat:
        logits = T.take_cols(logits, 0, model.num_classes)
    return T.cross_entropy(logits, T.one_hot(y, model.num_classes))


def _check_loss(loss: T.Tensor, epoch: int, batch: int) -> float:
    value = loss.item()
    if not np.isfinite(value):
        raise NonFiniteLossError(f"non-finite loss {value} at epoch {epoch}, batch {batch}; aborting")
    return value


def pgd_at_step(model: MlpModel, batch, spec: AttackSpec, opt: Sgd, lr: float,
                rng: Optional[np.random.Generator] = None) -> float:
    """Attack the batch, then one optimizer step on adversarial CE. Returns the pre-step loss."""
    x, y = batch
    x_adv = attack(model, x, y, spec, rng).x_adv
    opt.zero_grad()
    loss = adversarial_ce(model, x_adv, y)
    value = _check_loss(loss, -1, -1)
    T.backward(loss)
    opt.step(lr)
    return value


def _evaluate_epoch(model: MlpModel, test: Dataset, spec: AttackSpec, seed: int, epoch: int):
    x, y = test.features, test.labels
    clean = predict_from_logits(logits_np(model, x), model.num_classes, model.perm)
    adv = attack(model, x, y, spec, np.random.default_rng([seed, 4, epoch]))
    raw_adv = predict_from_logits(logits_np(model, adv.x_adv), model.num_classes, model.perm)
    return (
        100.0 * float(np.mean(clean.projected == y)),
        100.0 * float(np.mean(~adv.success_mask)),
        100.0 * float(np.mean(clean.is_dummy)),
        100.0 * float(np.mean(raw_adv.is_dummy)),
    )


def train(config: TrainConfig, dataset: Dataset, test: Optional[Dataset] = None,
          init_model: Optional[MlpModel] = None,
          on_epoch: Optional[Callable[[EpochRecord], None]] = None) -> Tuple[MlpModel, RunRecord]:
    """Run training and return ``(best_model, record)``.

    The best checkpoint is the epoch with the highest robust accuracy on
    ``test`` under the training adversary (earliest on ties), taken among the
    epochs whose head matches the final head; held-out evaluation adversaries
    are never consulted. Without ``test`` the final model is returned.
    ``init_model`` continues from an existing model at ``config.resume_epoch``.
    """
    c = dataset.num_classes
    if dataset.labels.size and (dataset.labels.min() < 0 or dataset.labels.max() >= c):
        raise ValueError("dataset labels outside [0, C)")
    hyper = config.effective_hyper
    init = InitSpec(seed=config.seed, dummy_row_init=config.dummy_row_init)
    if init_model is None:
        model = build_mlp(dataset.dim, config.hidden, c, init)
    else:
        model = init_model.copy()
        if model.num_classes != c or model.input_dim != dataset.dim:
            raise ValueError("initial model does not match the dataset")
    start = config.resume_epoch
    if model.is_ducat and config.uses_dummy and start < hyper.start_epoch:
        raise ValueError("cannot resume a doubled-head model before the DUCAT start epoch")
    if config.ducat_active(start) and not model.is_ducat:
        model = double_last_layer(model, init)

    opt = Sgd(model.parameters(), config.momentum, config.weight_decay)
    record = RunRecord(config)
    best_acc = -np.inf
    n = len(dataset)
    x_all, y_all = dataset.features.astype(model.weights[0].data.dtype), dataset.labels

    for epoch in range(start, config.epochs):
        active = config.ducat_active(epoch)
        if active and not model.is_ducat:
            model = double_last_layer(model, init)
            opt.rebind(model.parameters())
        spec = config.train_attack if active else config.train_attack.with_(loss_head=ORIGINAL_HEAD)
        lr = lr_at(config.schedule, epoch)
        order = epoch_order(n, config.seed, epoch)
        batch_losses = []
        for b, lo in enumerate(range(0, n, config.batch_size)):
            idx = order[lo:lo + config.batch_size]
            xb, yb = x_all[idx], y_all[idx]
            try:
                x_adv = attack(model, xb, yb, spec, batch_attack_rng(config.seed, epoch, b)).x_adv
                opt.zero_grad()
                if active:
                    loss = ducat_loss(model, xb, x_adv, yb, hyper)
                else:
                    loss = adversarial_ce(model, x_adv, yb)
            except T.NonFiniteError as exc:
                raise NonFiniteLossError(f"non-finite values at epoch {epoch}, batch {b} ({exc}); aborting") from exc
            batch_losses.append(_check_loss(loss, epoch, b))
            T.backward(loss)
            opt.step(lr)

        rec = EpochRecord(epoch, "ducat" if active else "adv_ce", lr, float(np.mean(batch_losses)), batch_losses)
        if test is not None:
            rec.clean_acc, rec.robust_acc, rec.dummy_hit_benign, rec.dummy_hit_adv = _evaluate_epoch(
                model, test, spec, config.seed, epoch)
            final_phase = active or not config.uses_dummy
            if final_phase and rec.robust_acc > best_acc:
                best_acc = rec.robust_acc
                record.best_epoch = epoch
                record.best_model = model.copy()
        record.epochs.append(rec)
        log.debug("epoch %d %s loss=%.4f clean=%s robust=%s", epoch, rec.phase, rec.loss, rec.clean_acc, rec.robust_acc)
        if on_epoch is not None:
            on_epoch(rec)

    record.final_model = model.copy()
    if record.best_model is None:
        record.best_model = record.final_model
        record.best_epoch = config.epochs - 1 if config.epochs > start else None
    return record.best_model, record


def resume(checkpoint: MlpModel, config: TrainConfig, dataset: Dataset, test: Optional[Dataset] = None,
           on_epoch=None) -> Tuple[MlpModel, RunRecord]:
    """Fine-tune an adversarially trained standard-head model with DUCAT from ``config.resume_epoch``."""
    if checkpoint.is_ducat and config.resume_epoch < config.hyper.start_epoch:
        raise ValueError("checkpoint head already doubled but resume epoch precedes the DUCAT start")
    return train(config, dataset, test, init_model=checkpoint, on_epoch=on_epoch)
