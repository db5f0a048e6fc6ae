"""Flat binary tensor files used by the data pipeline.

Feature files (``.osfeat``): 8-byte header of two little-endian uint32
(T rows, D dims) followed by T*D little-endian float32 values.

Raw video files (``.osvid``): 16-byte header of four little-endian uint32
(T, H, W, C) followed by T*H*W*C uint8 values in THWC order.

Each file may carry a JSON sidecar named ``<filename>.meta.json`` with
rate metadata (``feature_rate_hz`` / ``frame_rate_hz``).
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import CorruptFeatureFile, NonFiniteValues

DEFAULT_FEATURE_RATE_HZ = 2.0

_FEAT_HEADER = struct.Struct("<II")
_VID_HEADER = struct.Struct("<IIII")


def sidecar_path(path: Path | str) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".meta.json")


def _read_sidecar(path: Path) -> dict:
    meta = sidecar_path(path)
    if meta.exists():
        return json.loads(meta.read_text(encoding="utf-8"))
    return {}


def _write_sidecar(path: Path, payload: dict) -> None:
    text = json.dumps(payload, sort_keys=True, indent=2) + "\n"
    sidecar_path(path).write_text(text, encoding="utf-8")


def write_features(path: Path | str, data: np.ndarray,
                   feature_rate_hz: Optional[float] = None) -> None:
    """Write a T x D float32 matrix; optionally record its rate in a sidecar."""
    path = Path(path)
    data = np.ascontiguousarray(data, dtype="<f4")
    if data.ndim != 2:
        raise ValueError(f"feature matrix must be 2-D, got shape {data.shape}")
    rows, dims = data.shape
    with open(path, "wb") as handle:
        handle.write(_FEAT_HEADER.pack(rows, dims))
        handle.write(data.tobytes())
    if feature_rate_hz is not None:
        _write_sidecar(path, {"feature_rate_hz": float(feature_rate_hz)})


def read_features(path: Path | str) -> tuple[np.ndarray, float]:
    """Read a feature file; returns (T x D float32 array, rate in Hz).

    The rate comes from the sidecar, defaulting to 2 Hz when absent.
    Raises CorruptFeatureFile when the header disagrees with the payload
    and NonFiniteValues when the payload contains NaN/inf.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(str(path))
    blob = path.read_bytes()
    if len(blob) < _FEAT_HEADER.size:
        raise CorruptFeatureFile(f"{path}: shorter than the 8-byte header")
    rows, dims = _FEAT_HEADER.unpack_from(blob)
    if rows < 1 or dims < 1:
        raise CorruptFeatureFile(f"{path}: header declares empty matrix {rows}x{dims}")
    expected = _FEAT_HEADER.size + 4 * rows * dims
    if len(blob) != expected:
        raise CorruptFeatureFile(
            f"{path}: header declares {rows}x{dims} ({expected} bytes) but file has {len(blob)}")
    data = np.frombuffer(blob, dtype="<f4", offset=_FEAT_HEADER.size).reshape(rows, dims)
    if not np.all(np.isfinite(data)):
        raise NonFiniteValues(f"{path}: feature file contains NaN or inf")
    rate = float(_read_sidecar(path).get("feature_rate_hz", DEFAULT_FEATURE_RATE_HZ))
    return data.copy(), rate


def write_video_tensor(path: Path | str, frames: np.ndarray, frame_rate_hz: float) -> None:
    """Write a T x H x W x C uint8 tensor plus its rate sidecar."""
    path = Path(path)
    frames = np.ascontiguousarray(frames, dtype=np.uint8)
    if frames.ndim != 4:
        raise ValueError(f"video tensor must be 4-D THWC, got shape {frames.shape}")
    with open(path, "wb") as handle:
        handle.write(_VID_HEADER.pack(*frames.shape))
        handle.write(frames.tobytes())
    _write_sidecar(path, {
        "frame_rate_hz": float(frame_rate_hz),
        "layout": "THWC",
        "shape": list(frames.shape),
    })


def read_video_tensor(path: Path | str) -> tuple[np.ndarray, float]:
    """Read a raw video tensor; returns (T x H x W x C uint8 array, fps)."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(str(path))
    blob = path.read_bytes()
    if len(blob) < _VID_HEADER.size:
        raise CorruptFeatureFile(f"{path}: shorter than the 16-byte header")
    t, h, w, c = _VID_HEADER.unpack_from(blob)
    expected = _VID_HEADER.size + t * h * w * c
    if len(blob) != expected:
        raise CorruptFeatureFile(
            f"{path}: header declares {t}x{h}x{w}x{c} ({expected} bytes) but file has {len(blob)}")
    frames = np.frombuffer(blob, dtype=np.uint8, offset=_VID_HEADER.size).reshape(t, h, w, c)
    meta = _read_sidecar(path)
    if "frame_rate_hz" not in meta:
        raise CorruptFeatureFile(f"{path}: sidecar with frame_rate_hz is required")
    return frames.copy(), float(meta["frame_rate_hz"])
