"""Feature/video loading, clip windowing, label assignment, and batching.

Untrimmed timelines are sliced into fixed-length clips by a sliding
window; the final windows are zero-padded with an explicit pad mask so
pooling layers can ignore padding. Batch delivery order is a pure
function of (manifest, config, seed) regardless of prefetch parallelism.
"""

from __future__ import annotations

import random
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from threading import Lock
from typing import Callable, Iterator, Optional, Sequence

import numpy as np

from .errors import (
    DataError,
    DecodeFailure,
    DecoderUnavailable,
    NonFiniteValues,
    UnsupportedCodec,
)
from .manifest import Annotation, DatasetManifest, VideoEntry
from .tensorio import read_features, read_video_tensor

CLIP_LABEL = "clip_label"
FRAME_LABEL = "frame_label"


@dataclass(frozen=True)
class FeatureSequence:
    """T x D per-frame embeddings at a known rate; row t sits at t/rate seconds."""

    video_id: str
    data: np.ndarray
    feature_rate_hz: float

    def __post_init__(self):
        if self.data.ndim != 2 or self.data.shape[0] < 1 or self.data.shape[1] < 1:
            raise ValueError(f"feature sequence must be T x D with T,D >= 1, got {self.data.shape}")
        if self.feature_rate_hz <= 0:
            raise ValueError("feature_rate_hz must be positive")
        if not np.all(np.isfinite(self.data)):
            raise NonFiniteValues(f"{self.video_id}: non-finite feature values")


@dataclass(frozen=True)
class DecodedFrames:
    """T x H x W x C float frames in [0, 1] at a known rate."""

    video_id: str
    frames: np.ndarray
    frame_rate_hz: float

    def __post_init__(self):
        if self.frames.ndim != 4 or self.frames.shape[0] < 1:
            raise ValueError(f"frames must be T x H x W x C, got {self.frames.shape}")
        if self.frame_rate_hz <= 0:
            raise ValueError("frame_rate_hz must be positive")


@dataclass
class ClipTargets:
    mode: str
    clip_classes: Optional[np.ndarray] = None   # (C,) multi-hot
    frame_classes: Optional[np.ndarray] = None  # (L, C+1) one-hot rows, background last


@dataclass
class Clip:
    video_id: str
    start_index: int
    length: int
    payload: np.ndarray
    pad_mask: np.ndarray
    targets: ClipTargets


@dataclass
class ClipBatch:
    payload: np.ndarray        # (B, L, ...) stacked clip payloads
    pad_mask: np.ndarray       # (B, L) bool
    targets: ClipTargets       # stacked along axis 0
    video_ids: list[str]
    start_indices: list[int]

    def __len__(self) -> int:
        return self.payload.shape[0]


def load_feature_sequence(entry: VideoEntry, root: Path | str) -> FeatureSequence:
    """Load the pre-extracted embedding file referenced by a video entry."""
    if entry.features_path is None:
        raise FileNotFoundError(f"{entry.video_id}: entry has no features_path")
    data, rate = read_features(Path(root) / entry.features_path)
    return FeatureSequence(video_id=entry.video_id, data=data, feature_rate_hz=rate)


# --- video decoding ---------------------------------------------------------


@dataclass(frozen=True)
class DecodeRequest:
    target_fps: float
    target_height: Optional[int] = None
    backend: str = "software"


_DECODER_REGISTRY: dict[str, Callable[[Path], tuple[np.ndarray, float]]] = {}


def register_decoder(key: str, reader: Callable[[Path], tuple[np.ndarray, float]]) -> None:
    """Register a decode backend returning (T x H x W x C uint8 frames, fps)."""
    _DECODER_REGISTRY[key] = reader


def _software_reader(path: Path) -> tuple[np.ndarray, float]:
    if path.suffix != ".osvid":
        raise UnsupportedCodec(f"software decoder only reads .osvid files, got '{path.name}'")
    return read_video_tensor(path)


register_decoder("software", _software_reader)

try:  # pragma: no cover - depends on the host's OpenCV build
    import cv2

    def _opencv_reader(path: Path) -> tuple[np.ndarray, float]:
        capture = cv2.VideoCapture(str(path))
        if not capture.isOpened():
            raise DecodeFailure(f"OpenCV could not open {path}")
        fps = capture.get(cv2.CAP_PROP_FPS) or 25.0
        frames = []
        while True:
            ok, frame = capture.read()
            if not ok:
                break
            frames.append(cv2.cvtColor(frame, cv2.COLOR_BGR2RGB))
        capture.release()
        if not frames:
            raise DecodeFailure(f"OpenCV decoded zero frames from {path}")
        return np.stack(frames).astype(np.uint8), float(fps)

    register_decoder("opencv", _opencv_reader)
except ImportError:  # pragma: no cover
    pass


def resample_index(k: int, src_fps: float, target_fps: float, num_source: int) -> int:
    """Source index for output frame k: round-half-up of k*src/target, clamped."""
    idx = int(np.floor(k * src_fps / target_fps + 0.5))
    return min(max(idx, 0), num_source - 1)


def _resize_height(frames: np.ndarray, target_height: int) -> np.ndarray:
    """Nearest-neighbour resize to target_height, preserving aspect ratio."""
    t, h, w, c = frames.shape
    if h == target_height:
        return frames
    new_w = max(1, int(round(w * target_height / h)))
    ys = np.minimum((np.arange(target_height) * h / target_height).astype(np.int64), h - 1)
    xs = np.minimum((np.arange(new_w) * w / new_w).astype(np.int64), w - 1)
    return frames[:, ys][:, :, xs]


def decode_video(entry: VideoEntry, req: DecodeRequest, root: Path | str) -> DecodedFrames:
    """Decode, temporally resample, and resize a video entry.

    Output frame k comes from source frame round(k * src_fps / target_fps);
    the output frame count is floor(T_src * target_fps / src_fps). Pixel
    values are normalized to [0, 1].
    """
    if entry.path is None:
        raise DecodeFailure(f"{entry.video_id}: entry has no video path")
    reader = _DECODER_REGISTRY.get(req.backend)
    if reader is None:
        raise DecoderUnavailable(
            f"no decode backend '{req.backend}' (registered: {sorted(_DECODER_REGISTRY)})")
    path = Path(root) / entry.path
    if not path.exists():
        raise FileNotFoundError(str(path))
    source, src_fps = reader(path)
    if req.target_fps <= 0:
        raise DecodeFailure("target_fps must be positive")

    num_source = source.shape[0]
    num_out = int(np.floor(num_source * req.target_fps / src_fps))
    num_out = max(num_out, 1)
    indices = [resample_index(k, src_fps, req.target_fps, num_source) for k in range(num_out)]
    frames = source[indices]
    if req.target_height is not None:
        frames = _resize_height(frames, req.target_height)
    return DecodedFrames(
        video_id=entry.video_id,
        frames=frames.astype(np.float32) / 255.0,
        frame_rate_hz=req.target_fps,
    )


# --- windowing and labels -----------------------------------------------------


def window_clips(seq_length: int, clip_length: int, stride: int) -> list[tuple[int, int]]:
    """Sliding-window starts and pad amounts covering [0, seq_length).

    Windows start at 0, stride, 2*stride, ...; windows running past the end
    are zero-padded. Requires stride <= clip_length so coverage holds.
    """
    if clip_length < 1 or stride < 1:
        raise ValueError("clip_length and stride must be >= 1")
    if stride > clip_length:
        raise ValueError("stride must not exceed clip_length (coverage would have gaps)")
    if seq_length < 1:
        raise ValueError("seq_length must be >= 1")
    windows = []
    for start in range(0, seq_length, stride):
        pad = max(0, start + clip_length - seq_length)
        windows.append((start, pad))
    return windows


def nearest_frame_index(position_ms: int, rate_hz: float) -> int:
    """Half-up rounding of an annotation time onto the frame grid."""
    return int(np.floor(position_ms / 1000.0 * rate_hz + 0.5))


def assign_targets(
    clip_window: tuple[int, int],
    annotations: Sequence[Annotation],
    rate_hz: float,
    mode: str,
    frame_radius: int,
    classes: Sequence[str],
) -> ClipTargets:
    """Build training targets for one clip window.

    clip_label: multi-hot over classes whose annotation time falls inside
    the half-open window span. frame_label: one-hot rows over C+1 with
    background last; frames within ``frame_radius`` of an annotation's
    nearest frame index take that class, ties going to the temporally
    nearer annotation, then the lower class index.
    """
    if rate_hz <= 0:
        raise ValueError("rate_hz must be positive")
    if frame_radius < 0:
        raise ValueError("frame_radius must be >= 0")
    start, length = clip_window
    num_classes = len(classes)
    class_index = {name: i for i, name in enumerate(classes)}

    if mode == CLIP_LABEL:
        lo_ms = start * 1000.0 / rate_hz
        hi_ms = (start + length) * 1000.0 / rate_hz
        clip_classes = np.zeros(num_classes, dtype=np.float32)
        for ann in annotations:
            if ann.label in class_index and lo_ms <= ann.position_ms < hi_ms:
                clip_classes[class_index[ann.label]] = 1.0
        return ClipTargets(mode=CLIP_LABEL, clip_classes=clip_classes)

    if mode == FRAME_LABEL:
        background = num_classes
        frame_classes = np.zeros((length, num_classes + 1), dtype=np.float32)
        # (distance, class_index) winner per frame; background loses to any hit
        best = [(frame_radius + 1, background)] * length
        for ann in annotations:
            if ann.label not in class_index:
                continue
            cls = class_index[ann.label]
            center = nearest_frame_index(ann.position_ms, rate_hz)
            for frame in range(max(start, center - frame_radius),
                               min(start + length, center + frame_radius + 1)):
                distance = abs(frame - center)
                if (distance, cls) < best[frame - start]:
                    best[frame - start] = (distance, cls)
        for row, (_, cls) in enumerate(best):
            frame_classes[row, cls] = 1.0
        return ClipTargets(mode=FRAME_LABEL, frame_classes=frame_classes)

    raise ValueError(f"unknown target mode '{mode}'")


# --- batching ------------------------------------------------------------------


@dataclass
class PipelineConfig:
    clip_length: int
    stride: int
    batch_size: int
    target_mode: str = CLIP_LABEL
    frame_radius: int = 0
    shuffle: bool = False
    prefetch_depth: int = 2
    source: str = "features"  # "features" | "video"
    decode: DecodeRequest = field(default_factory=lambda: DecodeRequest(target_fps=2.0))


class _SequenceCache:
    """Loads each video once; thread-safe, unbounded (desk-scale datasets)."""

    def __init__(self, root: Path, config: PipelineConfig):
        self.root = root
        self.config = config
        self._cache: dict[str, tuple[np.ndarray, float]] = {}
        self._lock = Lock()

    def get(self, entry: VideoEntry) -> tuple[np.ndarray, float]:
        key = entry.video_id
        with self._lock:
            if key in self._cache:
                return self._cache[key]
        if self.config.source == "video":
            decoded = decode_video(entry, self.config.decode, self.root)
            value = (decoded.frames, decoded.frame_rate_hz)
        else:
            seq = load_feature_sequence(entry, self.root)
            value = (seq.data, seq.feature_rate_hz)
        with self._lock:
            self._cache[key] = value
        return value


def make_clip(entry: VideoEntry, data: np.ndarray, rate_hz: float, start: int,
              config: PipelineConfig, classes: Sequence[str]) -> Clip:
    """Slice one padded clip out of a full sequence and attach its targets."""
    length = config.clip_length
    seq_length = data.shape[0]
    real = min(length, seq_length - start)
    payload = np.zeros((length,) + data.shape[1:], dtype=data.dtype)
    payload[:real] = data[start:start + real]
    pad_mask = np.zeros(length, dtype=bool)
    pad_mask[:real] = True
    targets = assign_targets((start, length), entry.annotations, rate_hz,
                             config.target_mode, config.frame_radius, classes)
    return Clip(video_id=entry.video_id, start_index=start, length=length,
                payload=payload, pad_mask=pad_mask, targets=targets)


def _stack_targets(clips: list[Clip]) -> ClipTargets:
    mode = clips[0].targets.mode
    if mode == CLIP_LABEL:
        return ClipTargets(mode=mode,
                           clip_classes=np.stack([c.targets.clip_classes for c in clips]))
    return ClipTargets(mode=mode,
                       frame_classes=np.stack([c.targets.frame_classes for c in clips]))


def batch_iterator(
    manifest: DatasetManifest,
    root: Path | str,
    config: PipelineConfig,
    seed: int,
) -> Iterator[ClipBatch]:
    """Yield ClipBatches in an order fully determined by (manifest, config, seed).

    Prefetch workers assemble batches ahead of time but delivery order is
    fixed; the final partial batch is retained. Loader errors are re-raised
    as DataError with clip provenance attached.
    """
    root = Path(root)
    cache = _SequenceCache(root, config)
    classes = list(manifest.classes)

    index: list[tuple[VideoEntry, int]] = []
    for entry in manifest.videos:
        try:
            data, rate = cache.get(entry)
        except Exception as exc:
            raise DataError(f"{entry.video_id}: {exc}") from exc
        for start, _pad in window_clips(data.shape[0], config.clip_length, config.stride):
            index.append((entry, start))

    if config.shuffle:
        random.Random(seed).shuffle(index)

    batches = [index[i:i + config.batch_size] for i in range(0, len(index), config.batch_size)]

    def assemble(batch_index: list[tuple[VideoEntry, int]]) -> ClipBatch:
        clips = []
        for entry, start in batch_index:
            try:
                data, rate = cache.get(entry)
                clips.append(make_clip(entry, data, rate, start, config, classes))
            except Exception as exc:
                raise DataError(f"{entry.video_id} @ clip {start}: {exc}") from exc
        return ClipBatch(
            payload=np.stack([c.payload for c in clips]),
            pad_mask=np.stack([c.pad_mask for c in clips]),
            targets=_stack_targets(clips),
            video_ids=[c.video_id for c in clips],
            start_indices=[c.start_index for c in clips],
        )

    if config.prefetch_depth <= 0:
        for batch_index in batches:
            yield assemble(batch_index)
        return

    with ThreadPoolExecutor(max_workers=2) as pool:
        pending = []
        iterator = iter(batches)
        for batch_index in iterator:
            pending.append(pool.submit(assemble, batch_index))
            if len(pending) > config.prefetch_depth:
                yield pending.pop(0).result()
        while pending:
            yield pending.pop(0).result()
