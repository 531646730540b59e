"""Named parameter groups, optimizers, and the checkpoint container.

A parameter name is ``"<group>.<local path>"``; the group (the prefix before
the first dot) is the unit of freezing. Frozen groups are bit-identical
before and after any optimizer step, which the training phases rely on for
their asymmetry contracts.

Checkpoints are a single file: an 8-byte magic, a little-endian uint64
manifest length, a JSON manifest, then the raw float64 buffers in manifest
order. The manifest records name, shape, frozen flag, and format version.
"""

from __future__ import annotations

import hashlib
import json
import struct
from typing import Iterator

import numpy as np

from .engine import Tensor
from .errors import CheckpointError, StateError

CHECKPOINT_MAGIC = b"SACCCKPT"
CHECKPOINT_VERSION = 1


class ParameterStore:
    """Ordered map of named parameter tensors with per-group freeze flags."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}
        self._frozen: set[str] = set()

    def register(self, group: str, params: dict[str, Tensor]) -> None:
        if "." in group:
            raise ValueError("group names must not contain '.'")
        for local, tensor in params.items():
            name = f"{group}.{local}"
            if name in self._params:
                raise ValueError(f"duplicate parameter {name}")
            tensor.requires_grad = True
            self._params[name] = tensor

    def groups(self) -> list[str]:
        seen = []
        for name in self._params:
            g = name.split(".", 1)[0]
            if g not in seen:
                seen.append(g)
        return seen

    def named(self) -> Iterator[tuple[str, Tensor]]:
        return iter(self._params.items())

    def group_items(self, group: str) -> list[tuple[str, Tensor]]:
        prefix = group + "."
        items = [(n, t) for n, t in self._params.items() if n.startswith(prefix)]
        if not items:
            raise KeyError(f"unknown parameter group {group!r}")
        return items

    def freeze(self, group: str) -> None:
        for _, tensor in self.group_items(group):
            tensor.requires_grad = False
            tensor.grad = None
        self._frozen.add(group)

    def unfreeze(self, group: str) -> None:
        for _, tensor in self.group_items(group):
            tensor.requires_grad = True
        self._frozen.discard(group)

    def is_frozen(self, group: str) -> bool:
        return group in self._frozen

    def zero_grad(self) -> None:
        for tensor in self._params.values():
            tensor.grad = None

    def checksum(self, group: str | None = None) -> str:
        """SHA-256 over the raw bytes of a group (or all parameters)."""
        h = hashlib.sha256()
        items = self.group_items(group) if group else list(self._params.items())
        for name, tensor in items:
            h.update(name.encode())
            h.update(np.ascontiguousarray(tensor.data).tobytes())
        return h.hexdigest()

    def trainable(self) -> list[tuple[str, Tensor]]:
        return [(n, t) for n, t in self._params.items()
                if n.split(".", 1)[0] not in self._frozen]


class SGD:
    """Plain SGD with a classical momentum buffer: v <- mu*v + g, p <- p - lr*v."""

    def __init__(self, store: ParameterStore, lr: float, momentum: float = 0.9):
        self.store = store
        self.lr = float(lr)
        self.momentum = float(momentum)
        self._velocity: dict[str, np.ndarray] = {}

    def step(self) -> None:
        for name, p in self.store.trainable():
            if p.grad is None:
                raise StateError(f"missing gradient on unfrozen parameter {name}")
            if self.momentum:
                v = self._velocity.get(name)
                if v is None:
                    v = np.zeros_like(p.data)
                    self._velocity[name] = v
                v *= self.momentum
                v += p.grad
            else:
                v = p.grad
            p.data -= self.lr * v


class Adam:
    """Adam with the usual bias correction; kept behind config as an option."""

    def __init__(self, store: ParameterStore, lr: float,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        self.store = store
        self.lr = float(lr)
        self.b1, self.b2 = betas
        self.eps = eps
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}
        self._t = 0

    def step(self) -> None:
        self._t += 1
        for name, p in self.store.trainable():
            if p.grad is None:
                raise StateError(f"missing gradient on unfrozen parameter {name}")
            m = self._m.setdefault(name, np.zeros_like(p.data))
            v = self._v.setdefault(name, np.zeros_like(p.data))
            m *= self.b1
            m += (1 - self.b1) * p.grad
            v *= self.b2
            v += (1 - self.b2) * p.grad * p.grad
            mhat = m / (1 - self.b1 ** self._t)
            vhat = v / (1 - self.b2 ** self._t)
            p.data -= self.lr * mhat / (np.sqrt(vhat) + self.eps)


def make_optimizer(name: str, store: ParameterStore, lr: float,
                   momentum: float = 0.9):
    if name == "sgd":
        return SGD(store, lr, momentum)
    if name == "adam":
        return Adam(store, lr)
    raise ValueError(f"unknown optimizer {name!r}")


def save_checkpoint(store: ParameterStore, path) -> None:
    entries = []
    offset = 0
    buffers = []
    for name, tensor in store.named():
        arr = np.ascontiguousarray(tensor.data, dtype=np.float64)
        entries.append({
            "name": name,
            "shape": list(arr.shape),
            "frozen": store.is_frozen(name.split(".", 1)[0]),
            "offset": offset,
            "count": int(arr.size),
        })
        buffers.append(arr.tobytes())
        offset += arr.size * 8
    manifest = json.dumps(
        {"format_version": CHECKPOINT_VERSION, "params": entries},
        sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<Q", len(manifest)))
        fh.write(manifest)
        for buf in buffers:
            fh.write(buf)


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict[str, bool]]:
    """Return (name -> array, name -> frozen flag) from a checkpoint file."""
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != CHECKPOINT_MAGIC:
            raise CheckpointError(f"{path}: not a checkpoint file")
        (mlen,) = struct.unpack("<Q", fh.read(8))
        manifest = json.loads(fh.read(mlen).decode())
        if manifest.get("format_version") != CHECKPOINT_VERSION:
            raise CheckpointError(
                f"{path}: unsupported format version {manifest.get('format_version')}")
        data = fh.read()
    arrays: dict[str, np.ndarray] = {}
    frozen: dict[str, bool] = {}
    for entry in manifest["params"]:
        start = entry["offset"]
        end = start + entry["count"] * 8
        if end > len(data):
            raise CheckpointError(f"{path}: truncated data segment")
        arr = np.frombuffer(data[start:end], dtype="<f8").reshape(entry["shape"])
        arrays[entry["name"]] = arr.copy()
        frozen[entry["name"]] = bool(entry["frozen"])
    return arrays, frozen


def restore_into(store: ParameterStore, arrays: dict[str, np.ndarray],
                 groups: list[str] | None = None) -> None:
    """Copy checkpoint arrays into matching store parameters (in place)."""
    wanted = None if groups is None else set(groups)
    for name, tensor in store.named():
        group = name.split(".", 1)[0]
        if wanted is not None and group not in wanted:
            continue
        if name not in arrays:
            raise CheckpointError(f"checkpoint is missing parameter {name}")
        src = arrays[name]
        if tuple(src.shape) != tensor.data.shape:
            raise CheckpointError(
                f"shape mismatch for {name}: checkpoint {src.shape}, "
                f"model {tensor.data.shape}")
        tensor.data[...] = src
