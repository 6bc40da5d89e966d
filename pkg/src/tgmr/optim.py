"""Parameters, plain SGD with weight decay, and flat binary checkpoints."""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .tensor import Tensor

CHECKPOINT_MAGIC = b"TGMR"
CHECKPOINT_VERSION = 1


class Parameter:
    """A named trainable tensor; names must be unique within a model."""

    def __init__(self, name: str, data):
        self.name = name
        self.tensor = Tensor(data, requires_grad=True)

    @property
    def data(self) -> np.ndarray:
        return self.tensor.data

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.tensor.shape})"


@dataclass
class SgdConfig:
    learning_rate: float
    lr_decay_per_epoch: float = 1.0
    weight_decay: float = 0.0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")
        if not (0 < self.lr_decay_per_epoch <= 1):
            raise ValueError(f"lr_decay_per_epoch must be in (0, 1], got {self.lr_decay_per_epoch}")
        if self.weight_decay < 0:
            raise ValueError(f"weight_decay must be >= 0, got {self.weight_decay}")

    def decayed(self, epoch: int) -> float:
        """Learning rate in effect after `epoch` completed epochs."""
        return self.learning_rate * self.lr_decay_per_epoch ** epoch


def sgd_step(params: list[Parameter], cfg: SgdConfig) -> None:
    """p <- p - lr * (grad + weight_decay * p); gradients are zeroed."""
    for p in params:
        if p.tensor.grad is None:
            raise ValueError(f"parameter {p.name!r} has no gradient")
    for p in params:
        g = p.tensor.grad
        p.tensor.data -= cfg.learning_rate * (g + cfg.weight_decay * p.tensor.data)
        p.tensor.grad = None


def _check_unique(params: list[Parameter]) -> None:
    names = [p.name for p in params]
    if len(set(names)) != len(names):
        dupes = sorted({n for n in names if names.count(n) > 1})
        raise ValueError(f"duplicate parameter names: {dupes}")


def save_checkpoint(path, params: list[Parameter], extra: dict[str, np.ndarray] | None = None) -> None:
    """Write a flat binary checkpoint: magic, version, then (name, dims, f64 payload) records."""
    _check_unique(params)
    entries: list[tuple[str, np.ndarray]] = [(p.name, p.tensor.data) for p in params]
    for name, arr in (extra or {}).items():
        entries.append((name, np.asarray(arr, dtype=np.float64)))
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        fh.write(struct.pack("<I", len(entries)))
        for name, arr in entries:
            raw = name.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<I", arr.ndim))
            for dim in arr.shape:
                fh.write(struct.pack("<I", dim))
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path) -> dict[str, np.ndarray]:
    """Read a checkpoint back into a name -> float64 array mapping."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != CHECKPOINT_MAGIC:
        raise ValueError(f"not a checkpoint file: bad magic {blob[:4]!r}")
    (version,) = struct.unpack_from("<I", blob, 4)
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    (count,) = struct.unpack_from("<I", blob, 8)
    offset = 12
    result: dict[str, np.ndarray] = {}
    try:
        for _ in range(count):
            (name_len,) = struct.unpack_from("<I", blob, offset)
            offset += 4
            name = blob[offset:offset + name_len].decode("utf-8")
            offset += name_len
            (rank,) = struct.unpack_from("<I", blob, offset)
            offset += 4
            dims = struct.unpack_from(f"<{rank}I", blob, offset)
            offset += 4 * rank
            n = int(np.prod(dims)) if rank else 1
            arr = np.frombuffer(blob, dtype="<f8", count=n, offset=offset).reshape(dims)
            offset += 8 * n
            if name in result:
                raise ValueError(f"duplicate checkpoint entry {name!r}")
            result[name] = arr.astype(np.float64)
    except struct.error:
        raise ValueError("truncated checkpoint file") from None
    if offset != len(blob):
        raise ValueError("trailing bytes after checkpoint payload")
    return result


def load_into(params: list[Parameter], path) -> dict[str, np.ndarray]:
    """Restore parameter values from a checkpoint; returns non-parameter extras."""
    stored = load_checkpoint(path)
    extras = dict(stored)
    for p in params:
        if p.name not in stored:
            raise ValueError(f"checkpoint is missing parameter {p.name!r}")
        arr = extras.pop(p.name)
        if arr.shape != p.tensor.shape:
            raise ValueError(f"shape mismatch for {p.name!r}: checkpoint {arr.shape} vs model {p.tensor.shape}")
        p.tensor.data = arr.copy()
        p.tensor.grad = None
    return extras
