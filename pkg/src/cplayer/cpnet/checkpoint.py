"""Versioned binary checkpoints.

Layout (all integers little-endian)::

    b"CPNT"  u32 version  u32 header_len  header (UTF-8 JSON, sorted keys)
    u32 tensor_count
    repeated: u16 name_len  name  u8 ndim  u32 dims[ndim]  float32 data (little-endian)

The JSON header carries the network and training configs, the epoch counter,
optimizer hyper-parameters and a free-form ``meta`` object. Tensors are the
model parameters, batch-norm running statistics and the Adam moments
(``adam.m.<name>``, ``adam.v.<name>``).
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..nn.optim import Adam, AdamState
from .config import NetworkConfig, TrainConfig, config_from_dict, config_to_dict
from .model import CPNet

MAGIC = b"CPNT"
VERSION = 1
_LE_F32 = np.dtype("<f4")
_MAX_RANK = 8
_OPTIMIZER_KEYS = ("lr", "betas", "eps", "decay_rate", "decay_steps", "t")


class CheckpointError(ValueError):
    pass


class FormatError(CheckpointError):
    pass


class TruncatedFile(CheckpointError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (offset {offset})")
        self.offset = offset


@dataclass
class Checkpoint:
    network: NetworkConfig
    train: Optional[TrainConfig] = None
    epoch: int = 0
    tensors: dict[str, np.ndarray] = field(default_factory=dict)
    optimizer: Optional[dict] = None  # hyper-parameters and step count
    meta: dict = field(default_factory=dict)  # free-form JSON, e.g. estimator label encodings

    @classmethod
    def from_model(cls, model: CPNet, train_cfg: Optional[TrainConfig] = None, epoch: int = 0,
                   optimizer: Optional[Adam] = None) -> "Checkpoint":
        tensors = dict(model.state_arrays())
        opt = None
        if optimizer is not None:
            opt = {"lr": optimizer.lr, "betas": list(optimizer.betas), "eps": optimizer.eps,
                   "decay_rate": optimizer.decay_rate, "decay_steps": optimizer.decay_steps,
                   "t": optimizer.state.t}
            for name, m in optimizer.state.m.items():
                tensors[f"adam.m.{name}"] = m
            for name, v in optimizer.state.v.items():
                tensors[f"adam.v.{name}"] = v
        return cls(model.cfg, train_cfg, epoch, tensors, opt)

    def model_arrays(self) -> dict[str, np.ndarray]:
        return {k: v for k, v in self.tensors.items() if not k.startswith("adam.")}

    def build_model(self) -> CPNet:
        model = CPNet(self.network)
        model.load_state_arrays(self.model_arrays())
        return model

    def build_optimizer(self, model: CPNet) -> Optional[Adam]:
        if self.optimizer is None:
            return None
        o = self.optimizer
        opt = Adam(model.parameters(), lr=o["lr"], betas=tuple(o["betas"]), eps=o["eps"],
                   decay_rate=o["decay_rate"], decay_steps=o["decay_steps"])
        opt.state = AdamState(
            m={k[len("adam.m."):]: v for k, v in self.tensors.items() if k.startswith("adam.m.")},
            v={k[len("adam.v."):]: v for k, v in self.tensors.items() if k.startswith("adam.v.")},
            t=int(o["t"]))
        return opt

    def header(self) -> dict:
        return {"network": config_to_dict(self.network),
                "train": None if self.train is None else config_to_dict(self.train),
                "epoch": self.epoch, "optimizer": self.optimizer, "meta": self.meta}


def encode(ckpt: Checkpoint) -> bytes:
    blob = json.dumps(ckpt.header(), sort_keys=True, separators=(",", ":")).encode()
    parts = [MAGIC, struct.pack("<II", VERSION, len(blob)), blob, struct.pack("<I", len(ckpt.tensors))]
    for name in sorted(ckpt.tensors):
        arr = np.asarray(ckpt.tensors[name])
        raw = name.encode()
        parts.append(struct.pack("<H", len(raw)) + raw)
        parts.append(struct.pack(f"<B{arr.ndim}I", arr.ndim, *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype=_LE_F32).tobytes())
    return b"".join(parts)


class _Reader:
    def __init__(self, data: bytes):
        self.data, self.pos = data, 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise TruncatedFile(f"unexpected end of file reading {what}", self.pos)
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def _checked_optimizer(o: dict) -> dict:
    o = {k: o[k] for k in _OPTIMIZER_KEYS}
    for key in ("lr", "eps", "decay_rate"):
        float(o[key])
    if len(o["betas"]) != 2 or int(o["t"]) < 0:
        raise ValueError("bad optimizer state")
    for b in o["betas"]:
        float(b)
    return o


def decode(data: bytes) -> Checkpoint:
    r = _Reader(bytes(data))
    if r.take(4, "magic") != MAGIC:
        raise FormatError("not a checkpoint: bad magic")
    version, blob_len = r.unpack("<II", "header")
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    blob = r.take(blob_len, "config header")
    try:
        head = json.loads(blob.decode())
        network = config_from_dict(NetworkConfig, head["network"])
        train = None if head["train"] is None else config_from_dict(TrainConfig, head["train"])
        epoch, optimizer = int(head["epoch"]), head["optimizer"]
        meta = head.get("meta") or {}
        if not isinstance(meta, dict):
            raise TypeError("meta must be an object")
        if optimizer is not None:
            optimizer = _checked_optimizer(optimizer)
    except (AttributeError, KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"bad config header: {exc}") from None
    (count,) = r.unpack("<I", "tensor count")
    tensors = {}
    for _ in range(count):
        (name_len,) = r.unpack("<H", "tensor name")
        try:
            name = r.take(name_len, "tensor name").decode()
        except UnicodeDecodeError:
            raise FormatError("tensor name is not UTF-8") from None
        (ndim,) = r.unpack("<B", "tensor rank")
        if ndim > _MAX_RANK:
            raise FormatError(f"tensor {name} has rank {ndim}")
        shape = r.unpack(f"<{ndim}I", "tensor shape")
        size = int(np.prod(shape, dtype=np.int64))
        raw = r.take(size * 4, f"tensor {name}")
        tensors[name] = np.frombuffer(raw, dtype=_LE_F32).astype(np.float32).reshape(shape)
    if r.pos != len(r.data):
        raise FormatError(f"{len(r.data) - r.pos} trailing bytes after last tensor")
    ckpt = Checkpoint(network, train, epoch, tensors, optimizer, meta)
    try:
        CPNet(network).load_state_arrays(ckpt.model_arrays())
    except ValueError as exc:
        raise FormatError(f"tensors do not match the config: {exc}") from None
    return ckpt


def checkpoint_save(ckpt: Checkpoint, path) -> None:
    with open(path, "wb") as fh:
        fh.write(encode(ckpt))


def checkpoint_load(path) -> Checkpoint:
    with open(path, "rb") as fh:
        return decode(fh.read())
