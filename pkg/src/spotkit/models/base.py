"""Model abstractions: configuration, the neck/head module contract, the
string-keyed registry, and dense-timeline prediction over sliding windows."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
import torch
from torch import nn

from ..errors import ConfigError, ShapeMismatch
from ..pipeline import CLIP_LABEL, DecodedFrames, FeatureSequence, window_clips


@dataclass
class ModelConfig:
    """Everything needed to rebuild a model; stored verbatim in checkpoints."""

    key: str
    num_classes: int
    feature_dim: int = 512
    seed: int = 0
    # cluster pooling
    clusters: int = 64
    # context-aware segmentation/spotting
    hidden_dim: int = 32
    seg_depth: int = 2
    num_candidates: int = 5
    zone_params: tuple[float, float, float, float] = (-40.0, -10.0, 10.0, 40.0)
    segmentation_weight: float = 1.0
    spotting_weight: float = 1.0
    clip_length: int = 8
    # end-to-end video path
    trunk_channels: tuple[int, ...] = (16, 32, 64)
    shift_fraction: float = 0.125
    recurrent_hidden: int = 64
    bidirectional: bool = True
    frame_radius: int = 1

    def to_dict(self) -> dict:
        doc = asdict(self)
        doc["zone_params"] = list(self.zone_params)
        doc["trunk_channels"] = list(self.trunk_channels)
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "ModelConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        doc = dict(doc)
        if "zone_params" in doc:
            doc["zone_params"] = tuple(float(v) for v in doc["zone_params"])
        if "trunk_channels" in doc:
            doc["trunk_channels"] = tuple(int(v) for v in doc["trunk_channels"])
        return cls(**doc)


def seeded_generator(seed: int) -> torch.Generator:
    generator = torch.Generator()
    generator.manual_seed(seed)
    return generator


class SpottingModel(nn.Module):
    """Common surface for every spotting model.

    prediction_mode is one of "clip" (window scores attributed to the
    window center), "frame" (per-frame scores, overlaps averaged), or
    "candidate" (sub-window location regression, max-combined per frame).
    """

    prediction_mode = "clip"
    source = "features"
    target_mode = CLIP_LABEL

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config

    @property
    def frame_radius(self) -> int:
        return self.config.frame_radius

    def training_loss(self, payload: torch.Tensor, pad_mask: torch.Tensor,
                      targets) -> torch.Tensor:
        raise NotImplementedError

    def clip_scores(self, payload: torch.Tensor, pad_mask: torch.Tensor) -> torch.Tensor:
        raise NotImplementedError

    def frame_scores(self, payload: torch.Tensor, pad_mask: torch.Tensor) -> torch.Tensor:
        raise NotImplementedError

    def window_candidates(self, payload: torch.Tensor, pad_mask: torch.Tensor):
        raise NotImplementedError

    def param_dtype(self) -> torch.dtype:
        for param in self.parameters():
            return param.dtype
        return torch.float32


_REGISTRY: dict[str, Callable[[ModelConfig], SpottingModel]] = {}


def register_model(key: str, factory: Callable[[ModelConfig], SpottingModel]) -> None:
    _REGISTRY[key] = factory


def registered_models() -> list[str]:
    return sorted(_REGISTRY)


def build_model(config: ModelConfig) -> SpottingModel:
    if config.key not in _REGISTRY:
        raise ConfigError(f"unknown model key '{config.key}' (known: {registered_models()})")
    return _REGISTRY[config.key](config)


# --- sliding-window prediction ------------------------------------------------


def _window_tensors(data: np.ndarray, starts: Sequence[tuple[int, int]], clip_length: int,
                    dtype: torch.dtype) -> tuple[torch.Tensor, torch.Tensor]:
    windows = []
    masks = []
    seq_length = data.shape[0]
    for start, _pad in starts:
        real = min(clip_length, seq_length - start)
        payload = np.zeros((clip_length,) + data.shape[1:], dtype=np.float32)
        payload[:real] = data[start:start + real]
        mask = np.zeros(clip_length, dtype=bool)
        mask[:real] = True
        windows.append(payload)
        masks.append(mask)
    return (torch.as_tensor(np.stack(windows), dtype=dtype),
            torch.from_numpy(np.stack(masks)))


def predict_video(
    model: SpottingModel,
    timeline: FeatureSequence | DecodedFrames,
    clip_length: int,
    eval_stride: int,
    batch_windows: int = 256,
) -> tuple[np.ndarray, np.ndarray]:
    """Score an untrimmed timeline with overlapping windows.

    Returns (times_ms int64 array, scores (N, C+1) float array). Clip-mode
    models contribute one row per window at the window center; frame-mode
    models produce one row per frame, averaging overlapping windows;
    candidate-mode models max-combine their regressed candidates onto the
    frame grid.
    """
    if isinstance(timeline, FeatureSequence):
        data, rate = timeline.data, timeline.feature_rate_hz
    else:
        data, rate = timeline.frames, timeline.frame_rate_hz
    seq_length = data.shape[0]
    if seq_length < 1:
        raise ShapeMismatch("timeline is empty")
    clip_length = min(clip_length, seq_length)
    eval_stride = min(eval_stride, clip_length)
    starts = window_clips(seq_length, clip_length, eval_stride)
    dtype = model.param_dtype()
    num_outputs = model.config.num_classes + 1

    model.eval()
    mode = model.prediction_mode
    if mode == "clip":
        times = np.array(
            [int(round((start + clip_length / 2.0) / rate * 1000)) for start, _ in starts],
            dtype=np.int64)
        rows = []
        with torch.no_grad():
            for lo in range(0, len(starts), batch_windows):
                x, mask = _window_tensors(data, starts[lo:lo + batch_windows], clip_length, dtype)
                rows.append(model.clip_scores(x, mask).numpy())
        return times, np.concatenate(rows, axis=0)

    if mode == "frame":
        score_sum = np.zeros((seq_length, num_outputs), dtype=np.float64)
        count = np.zeros(seq_length, dtype=np.int64)
        with torch.no_grad():
            for lo in range(0, len(starts), batch_windows):
                chunk = starts[lo:lo + batch_windows]
                x, mask = _window_tensors(data, chunk, clip_length, dtype)
                scores = model.frame_scores(x, mask).numpy()
                for row, (start, _pad) in enumerate(chunk):
                    real = min(clip_length, seq_length - start)
                    score_sum[start:start + real] += scores[row, :real]
                    count[start:start + real] += 1
        times = np.array([int(round(t / rate * 1000)) for t in range(seq_length)], dtype=np.int64)
        return times, score_sum / count[:, None]

    if mode == "candidate":
        best = np.zeros((seq_length, num_outputs), dtype=np.float64)
        with torch.no_grad():
            for lo in range(0, len(starts), batch_windows):
                chunk = starts[lo:lo + batch_windows]
                x, mask = _window_tensors(data, chunk, clip_length, dtype)
                locations, confidences, class_probs = model.window_candidates(x, mask)
                locations = locations.numpy()
                confidences = confidences.numpy()
                class_probs = class_probs.numpy()
                for row, (start, _pad) in enumerate(chunk):
                    for m in range(locations.shape[1]):
                        frame = start + locations[row, m] * clip_length
                        bin_index = int(np.floor(frame + 0.5))
                        if not 0 <= bin_index < seq_length:
                            continue
                        contribution = confidences[row, m] * class_probs[row, m]
                        np.maximum(best[bin_index], contribution, out=best[bin_index])
        times = np.array([int(round(t / rate * 1000)) for t in range(seq_length)], dtype=np.int64)
        return times, best

    raise ConfigError(f"unknown prediction mode '{mode}'")
