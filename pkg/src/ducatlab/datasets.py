"""Seeded synthetic classification data and CSV persistence."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np


class DatasetFormatError(ValueError):
    pass


@dataclass
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    num_classes: int
    split: str = "train"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2 or self.features.shape[0] != self.labels.shape[0]:
            raise ValueError("features must be (N, d) with one label per row")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ValueError(f"labels must lie in [0, {self.num_classes})")

    def __len__(self) -> int:
        return self.labels.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.num_classes)

    def subset(self, idx) -> "Dataset":
        return Dataset(self.features[idx], self.labels[idx], self.num_classes, self.split, dict(self.meta))


_SPLIT_STREAM = {"train": 1, "test": 2}


def _split_rng(seed: int, split: str) -> np.random.Generator:
    if split not in _SPLIT_STREAM:
        raise ValueError(f"split must be 'train' or 'test', got {split!r}")
    return np.random.default_rng([seed, _SPLIT_STREAM[split]])


def _place_centers(rng, num_classes: int, d: int, separation: float, max_tries: int = 1000) -> np.ndarray:
    side = separation * max(2.0, 2.0 * num_classes ** (1.0 / d))
    centers = []
    for k in range(num_classes):
        for _ in range(max_tries):
            cand = rng.uniform(0.0, side, size=d)
            if all(np.linalg.norm(cand - c) >= separation for c in centers):
                centers.append(cand)
                break
        else:
            raise ValueError(
                f"could not place center {k} at separation {separation} in d={d} after {max_tries} tries"
            )
    return np.array(centers)


def gen_gaussians(num_classes: int, d: int, per_class_n: int, separation: float, noise_sigma: float,
                  seed: int = 0, split: str = "train", rescale: bool = True) -> Dataset:
    """Isotropic Gaussian blobs around seeded centers at least ``separation`` apart.

    Centers depend on ``seed`` only, so train and test splits share them; the
    samples of each split come from their own stream. With ``rescale`` the
    features go through one isotropic affine map into [0, 1]^d (the center
    box padded by 4 sigma); the rare tail points beyond it are clipped.
    """
    if num_classes < 2 or d < 2:
        raise ValueError("need num_classes >= 2 and d >= 2")
    if per_class_n < 1 or noise_sigma < 0 or separation <= 0:
        raise ValueError("per_class_n >= 1, noise_sigma >= 0 and separation > 0 required")
    centers = _place_centers(np.random.default_rng([seed, 0]), num_classes, d, separation)
    rng = _split_rng(seed, split)
    labels = np.repeat(np.arange(num_classes), per_class_n)
    feats = centers[labels] + noise_sigma * rng.standard_normal((labels.size, d))
    order = rng.permutation(labels.size)
    feats, labels = feats[order], labels[order]

    meta = {"kind": "gaussians", "seed": seed, "num_classes": num_classes, "d": d,
            "per_class_n": per_class_n, "separation": separation, "noise_sigma": noise_sigma,
            "rescale": rescale}
    if rescale:
        pad = 4.0 * noise_sigma + 0.5 * separation
        lo, hi = centers.min(axis=0) - pad, centers.max(axis=0) + pad
        s = 1.0 / np.max(hi - lo)
        offset = 0.5 - s * (lo + hi) / 2.0
        feats = np.clip(s * feats + offset, 0.0, 1.0)
        centers = s * centers + offset
        meta["scale"] = float(s)
    meta["centers"] = centers.tolist()
    return Dataset(feats, labels, num_classes, split, meta)


def gen_rings(n: int, radii: Sequence[float] = (1.0, 2.0), noise: float = 0.1, seed: int = 0,
              split: str = "train", rescale: bool = True) -> Dataset:
    """Concentric annuli in 2-D, one class per radius, ``n`` points per ring.

    Angles are uniform; radii get Gaussian noise. Adjacent rings closer than
    six noise standard deviations are rejected as overlapping.
    """
    radii = np.asarray(radii, dtype=np.float64)
    if radii.size < 2 or np.any(np.diff(radii) <= 0) or radii[0] <= 0:
        raise ValueError("radii must be positive and strictly increasing (at least two rings)")
    if noise < 0 or n < 1:
        raise ValueError("noise >= 0 and n >= 1 required")
    if np.any(np.diff(radii) <= 6.0 * noise):
        raise ValueError(f"rings overlap: gaps {np.diff(radii).tolist()} vs 6*noise={6 * noise}")
    c = radii.size
    rng = _split_rng(seed, split)
    labels = np.repeat(np.arange(c), n)
    angle = rng.uniform(0.0, 2.0 * np.pi, size=labels.size)
    r = radii[labels] + noise * rng.standard_normal(labels.size)
    feats = np.stack([r * np.cos(angle), r * np.sin(angle)], axis=1)
    order = rng.permutation(labels.size)
    feats, labels = feats[order], labels[order]

    meta = {"kind": "rings", "seed": seed, "n": n, "radii": radii.tolist(), "noise": noise, "rescale": rescale}
    center, scale = np.zeros(2), 1.0
    if rescale:
        scale = 0.5 / (radii[-1] + 4.0 * noise + 0.05 * radii[-1])
        center = np.full(2, 0.5)
        feats = np.clip(scale * feats + center, 0.0, 1.0)
    meta["center"] = center.tolist()
    meta["scaled_radii"] = (scale * radii).tolist()
    return Dataset(feats, labels, c, split, meta)


def save_csv(dataset: Dataset, path) -> None:
    """Header ``label,f0,f1,...``; floats written with 17 significant digits (lossless)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["label"] + [f"f{j}" for j in range(dataset.dim)])
        for lab, row in zip(dataset.labels, dataset.features):
            w.writerow([int(lab)] + ["%.17g" % v for v in row])


def load_csv(path, num_classes: Optional[int] = None, split: str = "train") -> Dataset:
    """Read a dataset written by :func:`save_csv`; ``num_classes`` defaults to max label + 1."""
    path = Path(path)
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DatasetFormatError(f"{path}: empty file")
    header = rows[0]
    if not header or header[0] != "label" or header[1:] != [f"f{j}" for j in range(len(header) - 1)]:
        raise DatasetFormatError(f"{path}:1: header must be label,f0,f1,...")
    d = len(header) - 1
    if len(rows) == 1:
        raise DatasetFormatError(f"{path}: no data rows (empty dataset)")
    labels = np.empty(len(rows) - 1, dtype=np.int64)
    feats = np.empty((len(rows) - 1, d))
    for i, row in enumerate(rows[1:]):
        lineno = i + 2
        if len(row) != d + 1:
            raise DatasetFormatError(f"{path}:{lineno}: expected {d + 1} fields, got {len(row)}")
        try:
            labels[i] = int(row[0])
            feats[i] = [float(v) for v in row[1:]]
        except ValueError as exc:
            raise DatasetFormatError(f"{path}:{lineno}: malformed row ({exc})") from None
        if labels[i] < 0 or (num_classes is not None and labels[i] >= num_classes):
            raise DatasetFormatError(f"{path}:{lineno}: label {labels[i]} outside [0, {num_classes})")
    c = num_classes if num_classes is not None else int(labels.max()) + 1
    return Dataset(feats, labels, c, split, {"kind": "csv", "path": str(path)})
