"""Flat ``key = value`` run configuration.

One key per line, ``#`` starts a comment. Values are JSON-like scalars or
lists (``0.1``, ``true``, ``"text"``, ``[40, 50]``); bare words are read as
strings and ``a/b`` as a fraction (``8/255``). Unknown keys are rejected.
Any key can be overridden from the environment as ``DUCAT_<KEY>`` (upper
case), e.g. ``DUCAT_EPOCHS=5``.
"""

from __future__ import annotations

import json
import os
import re
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Dict, List, Optional, Tuple

from .attacks import AttackSpec
from .core import DucatHyper
from .datasets import Dataset, gen_gaussians, gen_rings, load_csv
from .train import TrainConfig

ENV_PREFIX = "DUCAT_"


class ConfigError(ValueError):
    pass


# key -> (default, description); the order here is the serialization order
KEYS: Dict[str, Tuple[object, str]] = {
    "run_id": ("run", "name recorded in every metrics line"),
    "seed": (0, "training seed (init, shuffling, attack starts)"),
    "method": ("ducat", "pgd_at | ducat | ducat_hard_toy"),
    "epochs": (60, "total epochs T"),
    "resume_epoch": (0, "epoch T_r to resume from (needs resume_checkpoint when > 0)"),
    "resume_checkpoint": ("", "checkpoint to continue from; empty for a fresh model"),
    "start_epoch": (50, "DUCAT start epoch t"),
    "alpha": (0.5, "benign vs adversarial loss weight"),
    "beta1": (0.75, "benign two-hot weight on the original class"),
    "beta2": (1.0, "adversarial two-hot weight on the dummy class"),
    "lr": (0.1, "initial learning rate"),
    "momentum": (0.9, "SGD momentum"),
    "weight_decay": (5e-4, "L2 weight decay"),
    "lr_decay_epochs": ([40, 50], "epochs at which the rate is multiplied by lr_decay_factor"),
    "lr_decay_factor": (0.1, "step decay factor"),
    "batch_size": (128, "mini-batch size"),
    "hidden": ([64, 64], "hidden layer widths"),
    "dummy_row_init": ("fresh", "fresh | copy_noise initialisation of the dummy head rows"),
    "attack_norm": ("linf", "training adversary norm: linf | l2"),
    "attack_epsilon": (8 / 255, "training adversary budget"),
    "attack_step_size": (2 / 255, "training adversary step size"),
    "attack_steps": (10, "training adversary steps"),
    "attack_restarts": (1, "training adversary restarts"),
    "attack_random_start": (True, "random start inside the ball"),
    "attack_loss_head": ("full", "full (all logits) | original (first C logits)"),
    "attack_clip": (True, "clip adversarial inputs to [0, 1]"),
    "eval_attacks": (["steps=10", "steps=100,restarts=10"],
                     "held-out adversaries, each a comma list of overrides of the training adversary"),
    "data_kind": ("gaussians", "gaussians | rings | csv"),
    "data_seed": (0, "dataset seed"),
    "data_classes": (4, "gaussians: number of classes"),
    "data_dim": (2, "gaussians: feature dimension"),
    "data_train_n": (500, "training samples per class"),
    "data_test_n": (125, "test samples per class"),
    "data_separation": (1.0, "gaussians: minimum center distance"),
    "data_noise": (0.35, "gaussians: sigma; rings: radial noise"),
    "data_radii": ([1.0, 2.0], "rings: radii"),
    "data_rescale": (True, "affinely rescale features into [0, 1]"),
    "data_train_csv": ("", "csv: training file"),
    "data_test_csv": ("", "csv: test file"),
}

_ATTACK_FIELDS = {f.name for f in fields(AttackSpec)}


def _parse_value(raw: str):
    raw = raw.strip()
    if re.fullmatch(r"[-+]?\d+(\.\d*)?\s*/\s*\d+(\.\d*)?", raw):
        num, den = (float(p) for p in raw.split("/"))
        return num / den
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        pass
    if raw.startswith("[") and raw.endswith("]"):
        inner = raw[1:-1].strip()
        return [_parse_value(p) for p in _split_top(inner)] if inner else []
    return raw


def _split_top(text: str) -> List[str]:
    parts, depth, cur = [], 0, []
    for ch in text:
        if ch in "[(":
            depth += 1
        elif ch in "])":
            depth -= 1
        if ch == "," and depth == 0:
            parts.append("".join(cur))
            cur = []
        else:
            cur.append(ch)
    parts.append("".join(cur))
    return parts


def _coerce(key: str, value):
    default = KEYS[key][0]
    try:
        if isinstance(default, bool):
            if isinstance(value, str) and value.lower() in ("true", "false", "1", "0", "yes", "no"):
                return value.lower() in ("true", "1", "yes")
            if isinstance(value, bool):
                return value
            if value in (0, 1):
                return bool(value)
            raise TypeError
        if isinstance(default, int):
            if isinstance(value, float) and not value.is_integer():
                raise TypeError
            return int(value)
        if isinstance(default, float):
            return float(value)
        if isinstance(default, list):
            if not isinstance(value, list):
                value = [value]
            if key == "eval_attacks":
                return [str(v) for v in value]
            kind = type(default[0]) if default else float
            return [kind(v) for v in value]
        return str(value)
    except (TypeError, ValueError):
        raise ConfigError(f"bad value for {key}: {value!r}") from None


def parse_config_text(text: str, origin: str = "<config>") -> Dict[str, object]:
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip() if not line.lstrip().startswith('"') else line.strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{origin}:{lineno}: expected 'key = value'")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in KEYS:
            raise ConfigError(f"{origin}:{lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"{origin}:{lineno}: duplicate key {key!r}")
        values[key] = _coerce(key, _parse_value(raw))
    return values


@dataclass(frozen=True)
class RunConfig:
    values: Tuple[Tuple[str, object], ...]

    def __getitem__(self, key: str):
        return dict(self.values)[key]

    def as_dict(self) -> Dict[str, object]:
        return dict(self.values)

    def with_(self, **overrides) -> "RunConfig":
        d = self.as_dict()
        for k, v in overrides.items():
            if k not in KEYS:
                raise ConfigError(f"unknown key {k!r}")
            d[k] = _coerce(k, v)
        return RunConfig(tuple((k, d[k]) for k in KEYS))

    def dumps(self) -> str:
        lines = []
        for key, value in self.values:
            lines.append(f"# {KEYS[key][1]}")
            lines.append(f"{key} = {json.dumps(value)}")
        return "\n".join(lines) + "\n"

    # builders ---------------------------------------------------------------
    def train_attack(self) -> AttackSpec:
        return AttackSpec(
            norm=self["attack_norm"], epsilon=self["attack_epsilon"], step_size=self["attack_step_size"],
            steps=self["attack_steps"], restarts=self["attack_restarts"],
            random_start=self["attack_random_start"], loss_head=self["attack_loss_head"],
            clip=(0.0, 1.0) if self["attack_clip"] else None, seed=self["seed"],
        )

    def eval_attacks(self) -> Dict[str, AttackSpec]:
        base = self.train_attack()
        out = {}
        for text in self["eval_attacks"]:
            spec = parse_attack_overrides(text, base)
            out[text] = spec
        return out

    def train_config(self) -> TrainConfig:
        if self["resume_epoch"] > 0 and not self["resume_checkpoint"]:
            raise ConfigError("resume_epoch > 0 needs resume_checkpoint")
        try:
            return TrainConfig(
                method=self["method"], epochs=self["epochs"], resume_epoch=self["resume_epoch"],
                hyper=DucatHyper(self["alpha"], self["beta1"], self["beta2"], self["start_epoch"]),
                train_attack=self.train_attack(), lr=self["lr"], momentum=self["momentum"],
                weight_decay=self["weight_decay"], lr_decay_epochs=tuple(self["lr_decay_epochs"]),
                lr_decay_factor=self["lr_decay_factor"], batch_size=self["batch_size"], seed=self["seed"],
                hidden=tuple(self["hidden"]), dummy_row_init=self["dummy_row_init"],
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def datasets(self) -> Tuple[Dataset, Dataset]:
        kind = self["data_kind"]
        seed = self["data_seed"]
        if kind == "gaussians":
            common = dict(num_classes=self["data_classes"], d=self["data_dim"], separation=self["data_separation"],
                          noise_sigma=self["data_noise"], seed=seed, rescale=self["data_rescale"])
            return (gen_gaussians(per_class_n=self["data_train_n"], split="train", **common),
                    gen_gaussians(per_class_n=self["data_test_n"], split="test", **common))
        if kind == "rings":
            common = dict(radii=self["data_radii"], noise=self["data_noise"], seed=seed, rescale=self["data_rescale"])
            return (gen_rings(self["data_train_n"], split="train", **common),
                    gen_rings(self["data_test_n"], split="test", **common))
        if kind == "csv":
            if not self["data_train_csv"] or not self["data_test_csv"]:
                raise ConfigError("data_kind=csv needs data_train_csv and data_test_csv")
            train = load_csv(self["data_train_csv"], split="train")
            test = load_csv(self["data_test_csv"], num_classes=train.num_classes, split="test")
            return train, test
        raise ConfigError(f"unknown data_kind {kind!r}")


def parse_attack_overrides(text: str, base: AttackSpec) -> AttackSpec:
    """``"steps=100,restarts=10"`` applied on top of ``base``."""
    kw = {}
    for item in filter(None, (p.strip() for p in text.split(","))):
        if "=" not in item:
            raise ConfigError(f"attack override {item!r} is not key=value")
        k, v = (s.strip() for s in item.split("=", 1))
        k = {"eps": "epsilon", "step": "step_size"}.get(k, k)
        if k not in _ATTACK_FIELDS:
            raise ConfigError(f"unknown attack field {k!r}")
        val = _parse_value(v)
        if k == "clip":
            val = (0.0, 1.0) if val in (True, "true", 1) else None
        kw[k] = val
    try:
        return replace(base, **kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad attack override {text!r}: {exc}") from None


def resolve(path: Optional[str] = None, env: Optional[Dict[str, str]] = None, **overrides) -> RunConfig:
    """Defaults <- config file <- ``DUCAT_*`` environment <- explicit overrides."""
    values = {k: v[0] for k, v in KEYS.items()}
    if path:
        p = Path(path)
        try:
            text = p.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        values.update(parse_config_text(text, str(p)))
    env = os.environ if env is None else env
    for name, raw in env.items():
        if not name.startswith(ENV_PREFIX):
            continue
        key = name[len(ENV_PREFIX):].lower()
        if key not in KEYS:
            raise ConfigError(f"environment override {name}: unknown key {key!r}")
        values[key] = _coerce(key, _parse_value(raw))
    for k, v in overrides.items():
        if v is None:
            continue
        if k not in KEYS:
            raise ConfigError(f"unknown key {k!r}")
        values[k] = _coerce(k, v)
    return RunConfig(tuple((k, values[k]) for k in KEYS))
