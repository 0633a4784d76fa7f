"""Binary checkpoints: parameters, optimizer state, and configuration.

Layout (all integers little-endian):

    magic "CMN1" | u32 format version | u64 header length | header JSON
    | u32 parameter count | parameter records
    | u32 velocity count | velocity records

Each tensor record is: u32 name length, name UTF-8, u32 rank, u64 extents,
then the float64 values in row-major order. Values round-trip bitwise. The
header JSON carries the model kind, vocabulary, model/data/train configs,
and the optimizer scalars. A file is parsed fully before any model state is
constructed, so a corrupted checkpoint never leaves partial state behind.
"""

from __future__ import annotations

import dataclasses
import json
import struct

import numpy as np

from .autodiff import Tensor
from .language import Vocabulary
from .model import BaselineLocModel, CmnModel, ModelConfig
from .optim import SgdMomentum
from .shapeworld import ShapeWorldConfig

__all__ = [
    "CheckpointFormatError",
    "Checkpoint",
    "save_checkpoint",
    "load_checkpoint",
    "restore_model",
    "restore_optimizer",
    "data_config_from_checkpoint",
]

MAGIC = b"CMN1"
FORMAT_VERSION = 1


class CheckpointFormatError(ValueError):
    """The checkpoint file is malformed or of an unsupported version."""


@dataclasses.dataclass
class Checkpoint:
    header: dict
    params: dict[str, np.ndarray]
    velocities: dict[str, np.ndarray]

    @property
    def model_kind(self) -> str:
        return self.header["model_kind"]

    @property
    def step_count(self) -> int:
        return int(self.header.get("step_count", 0))


def _write_tensor(fh, name: str, values: np.ndarray) -> None:
    encoded = name.encode("utf-8")
    # asarray with order="C", not ascontiguousarray: the latter promotes
    # rank-0 scalars to rank 1 and would corrupt their stored shape
    arr = np.asarray(values, dtype=np.float64, order="C")
    fh.write(struct.pack("<I", len(encoded)))
    fh.write(encoded)
    fh.write(struct.pack("<I", arr.ndim))
    fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
    fh.write(arr.astype("<f8", copy=False).tobytes())


def save_checkpoint(
    path,
    model,
    optimizer: SgdMomentum | None = None,
    train_config=None,
    data_config: ShapeWorldConfig | None = None,
) -> None:
    header = {
        "model_kind": model.kind,
        "model_config": model.config.to_dict(),
        "feature_dim": model.feature_dim,
        "vocab": list(model.vocab.tokens),
        "train_config": train_config.to_dict() if train_config is not None else None,
        "data_config": data_config.to_dict() if data_config is not None else None,
        "step_count": optimizer.step_count if optimizer is not None else 0,
        "optimizer": (
            {
                "learning_rate": optimizer.learning_rate,
                "momentum": optimizer.momentum,
                "decay_factor": optimizer.decay_factor,
                "decay_interval": optimizer.decay_interval,
            }
            if optimizer is not None
            else None
        ),
    }
    params = model.named_parameters()
    velocities = optimizer.velocity if optimizer is not None else {}
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", FORMAT_VERSION))
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        fh.write(struct.pack("<I", len(params)))
        for name, tensor in params.items():
            _write_tensor(fh, name, tensor.values)
        fh.write(struct.pack("<I", len(velocities)))
        for name, values in velocities.items():
            _write_tensor(fh, name, values)


class _Reader:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.offset = 0

    def take(self, n: int, what: str) -> bytes:
        if self.offset + n > len(self.blob):
            raise CheckpointFormatError(f"truncated checkpoint while reading {what}")
        piece = self.blob[self.offset : self.offset + n]
        self.offset += n
        return piece

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]

    def u64(self, what: str) -> int:
        return struct.unpack("<Q", self.take(8, what))[0]

    def tensor(self, what: str) -> tuple[str, np.ndarray]:
        name = self.take(self.u32(f"{what} name length"), f"{what} name").decode("utf-8")
        rank = self.u32(f"{name} rank")
        if rank > 8:
            raise CheckpointFormatError(f"implausible rank {rank} for tensor {name!r}")
        shape = tuple(self.u64(f"{name} extent") for _ in range(rank))
        count = 1
        for extent in shape:
            count *= extent
        data = np.frombuffer(self.take(8 * count, f"{name} values"), dtype="<f8")
        return name, data.reshape(shape).copy()


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != MAGIC:
        raise CheckpointFormatError(f"bad checkpoint magic {blob[:4]!r}, expected {MAGIC!r}")
    reader = _Reader(blob)
    reader.offset = 4
    version = reader.u32("format version")
    if version != FORMAT_VERSION:
        raise CheckpointFormatError(f"unsupported checkpoint version {version}")
    header_len = reader.u64("header length")
    try:
        header = json.loads(reader.take(header_len, "header").decode("utf-8"))
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise CheckpointFormatError(f"bad checkpoint header: {exc}") from exc
    if not isinstance(header, dict) or "model_kind" not in header:
        raise CheckpointFormatError("checkpoint header lacks model_kind")
    params = dict(reader.tensor("parameter") for _ in range(reader.u32("parameter count")))
    velocities = dict(reader.tensor("velocity") for _ in range(reader.u32("velocity count")))
    if reader.offset != len(blob):
        raise CheckpointFormatError(f"{len(blob) - reader.offset} trailing bytes in checkpoint")
    return Checkpoint(header=header, params=params, velocities=velocities)


def restore_model(ckpt: Checkpoint):
    """Rebuild the model and overwrite every parameter with stored values."""
    vocab = Vocabulary(ckpt.header["vocab"])
    config = ModelConfig.from_dict(ckpt.header["model_config"])
    feature_dim = int(ckpt.header["feature_dim"])
    if ckpt.model_kind == "cmn":
        model = CmnModel(vocab, feature_dim, config)
    elif ckpt.model_kind == "baseline_loc":
        model = BaselineLocModel(vocab, feature_dim, config)
    else:
        raise CheckpointFormatError(f"unknown model kind {ckpt.model_kind!r}")
    params = model.named_parameters()
    if set(params) != set(ckpt.params):
        missing = sorted(set(params) - set(ckpt.params))
        extra = sorted(set(ckpt.params) - set(params))
        raise CheckpointFormatError(f"parameter names mismatch; missing={missing} extra={extra}")
    for name, tensor in params.items():
        stored = ckpt.params[name]
        if stored.shape != tensor.values.shape:
            raise CheckpointFormatError(
                f"tensor {name!r} has shape {stored.shape}, expected {tensor.values.shape}"
            )
        tensor.values[...] = stored
        tensor.zero_grad()
    return model


def restore_optimizer(ckpt: Checkpoint, model) -> SgdMomentum:
    """Rebuild the optimizer with its stored velocities and step count."""
    spec = ckpt.header.get("optimizer")
    if spec is None:
        raise CheckpointFormatError("checkpoint stores no optimizer state")
    optimizer = SgdMomentum(
        model.named_parameters(),
        learning_rate=spec["learning_rate"],
        momentum=spec["momentum"],
        decay_factor=spec["decay_factor"],
        decay_interval=spec["decay_interval"],
    )
    optimizer.step_count = ckpt.step_count
    for name, values in ckpt.velocities.items():
        if name not in optimizer.velocity:
            raise CheckpointFormatError(f"velocity for unknown parameter {name!r}")
        if values.shape != optimizer.velocity[name].shape:
            raise CheckpointFormatError(f"velocity {name!r} has wrong shape {values.shape}")
        optimizer.velocity[name][...] = values
    return optimizer


def data_config_from_checkpoint(ckpt: Checkpoint) -> ShapeWorldConfig | None:
    raw = ckpt.header.get("data_config")
    return ShapeWorldConfig.from_dict(raw) if raw is not None else None
