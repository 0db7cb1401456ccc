"""MLP classifiers, head doubling and the binary checkpoint format."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from . import tensor as T
from .tensor import Tensor

STANDARD = "standard"
DUCAT = "ducat"

MAGIC = b"DUCATCKP"
VERSION = 1


class CheckpointError(Exception):
    pass


class BadMagicError(CheckpointError):
    pass


class UnsupportedVersionError(CheckpointError):
    pass


class TruncatedCheckpointError(CheckpointError):
    pass


@dataclass(frozen=True)
class InitSpec:
    """How to initialise parameters.

    ``scheme`` is always scaled-uniform on fan-in: U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
    ``dummy_row_init`` controls the rows added by :func:`double_last_layer`:
    ``"fresh"`` draws them like any other layer, ``"copy_noise"`` copies the
    original rows and adds uniform noise of amplitude ``noise``.
    """

    seed: int = 0
    scheme: str = "scaled_uniform"
    dummy_row_init: str = "fresh"
    noise: float = 1e-2


def _uniform_block(rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


@dataclass
class MlpModel:
    """ReLU MLP. Weights are stored (out, in); logits are ``x @ W.T + b``.

    With ``head_mode == "ducat"`` the output has ``2 * num_classes`` logits:
    the first ``num_classes`` are the original classes, slot
    ``num_classes + perm[k]`` is the dummy partner of class ``k``.
    """

    widths: List[int]
    weights: List[Tensor]
    biases: List[Tensor]
    num_classes: int
    head_mode: str = STANDARD
    perm: np.ndarray = field(default=None)
    init: InitSpec = field(default_factory=InitSpec)

    def __post_init__(self):
        if self.head_mode not in (STANDARD, DUCAT):
            raise ValueError(f"unknown head_mode {self.head_mode!r}")
        if self.perm is None:
            self.perm = np.arange(self.num_classes, dtype=np.int64)
        self.perm = np.asarray(self.perm, dtype=np.int64)
        if sorted(self.perm.tolist()) != list(range(self.num_classes)):
            raise ValueError("perm must be a permutation of range(num_classes)")
        expected = self.num_classes * (2 if self.head_mode == DUCAT else 1)
        if self.widths[-1] != expected:
            raise ValueError(f"output width {self.widths[-1]} does not match {self.head_mode} head with C={self.num_classes}")

    @property
    def input_dim(self) -> int:
        return self.widths[0]

    @property
    def output_dim(self) -> int:
        return self.widths[-1]

    @property
    def is_ducat(self) -> bool:
        return self.head_mode == DUCAT

    def parameters(self) -> List[Tensor]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def num_parameters(self) -> int:
        return int(np.sum([p.size for p in self.parameters()]))

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def __call__(self, x) -> Tensor:
        return forward(self, x)

    def frozen(self) -> "MlpModel":
        """Copy whose parameters are excluded from gradient tracking (used by attacks)."""
        return MlpModel(
            widths=list(self.widths),
            weights=[Tensor(w.data, dtype=w.data.dtype) for w in self.weights],
            biases=[Tensor(b.data, dtype=b.data.dtype) for b in self.biases],
            num_classes=self.num_classes,
            head_mode=self.head_mode,
            perm=self.perm,
            init=self.init,
        )

    def copy(self) -> "MlpModel":
        return MlpModel(
            widths=list(self.widths),
            weights=[Tensor(w.data.copy(), requires_grad=True, dtype=w.data.dtype) for w in self.weights],
            biases=[Tensor(b.data.copy(), requires_grad=True, dtype=b.data.dtype) for b in self.biases],
            num_classes=self.num_classes,
            head_mode=self.head_mode,
            perm=self.perm.copy(),
            init=self.init,
        )


def build_mlp(input_dim: int, hidden: Sequence[int], num_classes: int, init: InitSpec = InitSpec(),
              head_mode: str = STANDARD, perm=None) -> MlpModel:
    out_dim = num_classes * (2 if head_mode == DUCAT else 1)
    widths = [int(input_dim), *map(int, hidden), out_dim]
    rng = np.random.default_rng([init.seed, 0])
    weights, biases = [], []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        weights.append(Tensor(_uniform_block(rng, fan_in, (fan_out, fan_in)), requires_grad=True))
        biases.append(Tensor(_uniform_block(rng, fan_in, (fan_out,)), requires_grad=True))
    return MlpModel(widths, weights, biases, num_classes, head_mode, perm, init)


def forward(model: MlpModel, x) -> Tensor:
    x = T.as_tensor(x)
    if x.ndim != 2 or x.shape[1] != model.input_dim:
        raise T.ShapeError(f"expected input of shape (B, {model.input_dim}), got {x.shape}")
    h = x
    last = len(model.weights) - 1
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        h = T.add_bias(T.matmul(h, T.transpose(w)), b)
        if i < last:
            h = T.relu(h)
    return h


def logits_np(model: MlpModel, x: np.ndarray) -> np.ndarray:
    """Forward pass on plain arrays, no graph."""
    h = np.asarray(x, dtype=model.weights[0].data.dtype)
    last = len(model.weights) - 1
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        h = h @ w.data.T + b.data
        if i < last:
            h = np.maximum(h, 0.0)
    return h


def double_last_layer(model: MlpModel, init: Optional[InitSpec] = None) -> MlpModel:
    """Widen the output layer from C to 2C logits, keeping the original rows bit-exact."""
    if model.head_mode != STANDARD:
        raise ValueError("model head is already doubled")
    init = init or model.init
    c = model.num_classes
    w, b = model.weights[-1].data, model.biases[-1].data
    fan_in = w.shape[1]
    # separate stream from build_mlp so the original parameters never depend on doubling
    rng = np.random.default_rng([init.seed, 1])
    if init.dummy_row_init == "fresh":
        new_w = _uniform_block(rng, fan_in, (c, fan_in))
        new_b = _uniform_block(rng, fan_in, (c,))
    elif init.dummy_row_init == "copy_noise":
        # dummy slot C + perm[k] starts as a noisy copy of class k
        order = np.argsort(model.perm)
        new_w = w[order] + rng.uniform(-init.noise, init.noise, size=(c, fan_in))
        new_b = b[order] + rng.uniform(-init.noise, init.noise, size=(c,))
    else:
        raise ValueError(f"unknown dummy_row_init {init.dummy_row_init!r}")
    dt = w.dtype
    out = model.copy()
    out.weights[-1] = Tensor(np.concatenate([w, new_w.astype(dt)]), requires_grad=True, dtype=dt)
    out.biases[-1] = Tensor(np.concatenate([b, new_b.astype(dt)]), requires_grad=True, dtype=dt)
    out.widths[-1] = 2 * c
    out.head_mode = DUCAT
    out.init = init
    return out


# checkpoint layout, all little-endian:
#   magic[8] version:u32 C:u32 head_mode:u8 n_widths:u32 widths:u32*n perm:u32*C
#   seed:i64 dummy_row_init:u8 noise:f64, then W_i, b_i as float64 row-major
_DUMMY_INIT_CODES = {"fresh": 0, "copy_noise": 1}


def save_checkpoint(model: MlpModel, path) -> None:
    buf = bytearray(MAGIC)
    buf += struct.pack("<IIB", VERSION, model.num_classes, 1 if model.is_ducat else 0)
    buf += struct.pack("<I", len(model.widths))
    buf += struct.pack(f"<{len(model.widths)}I", *model.widths)
    buf += struct.pack(f"<{model.num_classes}I", *model.perm.tolist())
    buf += struct.pack("<qBd", model.init.seed, _DUMMY_INIT_CODES[model.init.dummy_row_init], model.init.noise)
    for p in model.parameters():
        buf += np.ascontiguousarray(p.data, dtype="<f8").tobytes()
    Path(path).write_bytes(bytes(buf))


class _Reader:
    def __init__(self, raw: bytes):
        self.raw, self.pos = raw, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.raw):
            raise TruncatedCheckpointError(f"checkpoint truncated at byte {len(self.raw)} (needed {self.pos + n})")
        chunk = self.raw[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_checkpoint(path) -> MlpModel:
    r = _Reader(Path(path).read_bytes())
    if len(r.raw) < len(MAGIC) or r.raw[:len(MAGIC)] != MAGIC:
        raise BadMagicError(f"{path}: bad magic, not a DUCATCKP checkpoint")
    r.take(len(MAGIC))
    (version,) = r.unpack("<I")
    if version != VERSION:
        raise UnsupportedVersionError(f"{path}: unsupported version {version} (expected {VERSION})")
    c, head = r.unpack("<IB")
    (n_widths,) = r.unpack("<I")
    widths = list(r.unpack(f"<{n_widths}I"))
    perm = np.array(r.unpack(f"<{c}I"), dtype=np.int64)
    seed, dummy_code, noise = r.unpack("<qBd")
    dummy_init = {v: k for k, v in _DUMMY_INIT_CODES.items()}[dummy_code]
    weights, biases = [], []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        w = np.frombuffer(r.take(8 * fan_in * fan_out), dtype="<f8").reshape(fan_out, fan_in)
        b = np.frombuffer(r.take(8 * fan_out), dtype="<f8")
        weights.append(Tensor(w.astype(np.float64), requires_grad=True, dtype=np.float64))
        biases.append(Tensor(b.astype(np.float64), requires_grad=True, dtype=np.float64))
    if r.pos != len(r.raw):
        raise CheckpointError(f"{path}: {len(r.raw) - r.pos} trailing bytes")
    return MlpModel(widths, weights, biases, c, DUCAT if head else STANDARD, perm,
                    InitSpec(seed=seed, dummy_row_init=dummy_init, noise=noise))
