"""Deterministic binary checkpoint container.

Layout: 8-byte magic, uint32 format version, uint64 header length, UTF-8
JSON header (sorted keys), then the raw little-endian tensor payload in
header order. Identical contents always serialize to identical bytes, so
save -> load -> save is a byte-level fixed point.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from ..errors import CheckpointMismatch
from .base import ModelConfig, SpottingModel

MAGIC = b"SPOTCKPT"
FORMAT_VERSION = 1

_PREFIX = struct.Struct("<8sIQ")


@dataclass
class Checkpoint:
    model_key: str
    model_config: dict
    tensors: dict[str, np.ndarray]
    extra: dict = field(default_factory=dict)


def save_checkpoint(path: Path | str, checkpoint: Checkpoint) -> None:
    names = sorted(checkpoint.tensors)
    records = []
    offset = 0
    blobs = []
    for name in names:
        array = np.ascontiguousarray(checkpoint.tensors[name])
        if array.dtype.byteorder == ">":
            array = array.astype(array.dtype.newbyteorder("<"))
        blob = array.tobytes()
        records.append({
            "name": name,
            "dtype": array.dtype.str,
            "shape": list(array.shape),
            "offset": offset,
            "nbytes": len(blob),
        })
        offset += len(blob)
        blobs.append(blob)
    header = json.dumps({
        "format_version": FORMAT_VERSION,
        "model_key": checkpoint.model_key,
        "model_config": checkpoint.model_config,
        "extra": checkpoint.extra,
        "tensors": records,
    }, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as handle:
        handle.write(_PREFIX.pack(MAGIC, FORMAT_VERSION, len(header)))
        handle.write(header)
        for blob in blobs:
            handle.write(blob)


def load_checkpoint(path: Path | str) -> Checkpoint:
    blob = Path(path).read_bytes()
    if len(blob) < _PREFIX.size:
        raise CheckpointMismatch(f"{path}: too short to be a checkpoint")
    magic, version, header_len = _PREFIX.unpack_from(blob)
    if magic != MAGIC:
        raise CheckpointMismatch(f"{path}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise CheckpointMismatch(f"{path}: unsupported checkpoint version {version}")
    header = json.loads(blob[_PREFIX.size:_PREFIX.size + header_len].decode("utf-8"))
    payload_start = _PREFIX.size + header_len
    tensors = {}
    for record in header["tensors"]:
        start = payload_start + record["offset"]
        array = np.frombuffer(blob, dtype=np.dtype(record["dtype"]),
                              count=int(np.prod(record["shape"], dtype=np.int64)) or 1,
                              offset=start)
        if not record["shape"]:
            array = array[:1].reshape(())
        else:
            array = array.reshape(record["shape"])
        tensors[record["name"]] = array.copy()
    return Checkpoint(
        model_key=header["model_key"],
        model_config=header["model_config"],
        tensors=tensors,
        extra=header["extra"],
    )


def model_tensors(model: SpottingModel) -> dict[str, np.ndarray]:
    return {f"model/{name}": value.detach().cpu().numpy().copy()
            for name, value in model.state_dict().items()}


def checkpoint_from_model(model: SpottingModel, extra: dict | None = None) -> Checkpoint:
    return Checkpoint(
        model_key=model.config.key,
        model_config=model.config.to_dict(),
        tensors=model_tensors(model),
        extra=extra or {},
    )


def load_into_model(model: SpottingModel, checkpoint: Checkpoint) -> None:
    """Copy checkpoint tensors into a model; key and config must match."""
    if checkpoint.model_key != model.config.key:
        raise CheckpointMismatch(
            f"checkpoint is for '{checkpoint.model_key}', model is '{model.config.key}'")
    if ModelConfig.from_dict(checkpoint.model_config) != model.config:
        raise CheckpointMismatch("checkpoint model_config differs from the model's config")
    state = {}
    for name, array in checkpoint.tensors.items():
        if name.startswith("model/"):
            state[name[len("model/"):]] = torch.as_tensor(array)
    missing = set(model.state_dict()) - set(state)
    if missing:
        raise CheckpointMismatch(f"checkpoint misses tensors: {sorted(missing)}")
    model.load_state_dict(state)
