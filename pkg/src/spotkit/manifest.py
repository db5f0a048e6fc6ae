"""Unified single-file JSON dataset format.

One manifest describes a whole dataset: the class vocabulary, every video
(or pre-extracted feature file) with its split, and all temporal
annotations in integer milliseconds. Prediction files reuse the same
schema with a required ``confidence`` on every annotation.

All strings are NFC-normalized on parse, so ``serialize(parse(text))`` is
a byte-level fixed point after one pass.
"""

from __future__ import annotations

import json
import unicodedata
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Optional

from .errors import (
    InvalidManifest,
    MalformedDocument,
    MissingLabelFile,
    SchemaViolation,
    UnknownLegacyLabel,
    UnknownVersion,
    UnparseableGameTime,
)

FORMAT_VERSION = "1.0"
SUPPORTED_VERSIONS = frozenset({"1.0"})
SPLITS = ("train", "valid", "test", "challenge")

_TOP_LEVEL_KEYS = ("format_version", "dataset_name", "classes", "videos", "metadata")


@dataclass
class Annotation:
    label: str
    position_ms: int
    confidence: Optional[float] = None
    metadata: dict = field(default_factory=dict)


@dataclass
class VideoEntry:
    path: Optional[str] = None
    features_path: Optional[str] = None
    duration_ms: int = 0
    fps: float = 25.0
    split: str = "train"
    annotations: list[Annotation] = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    @property
    def video_id(self) -> str:
        """Stable identifier: the video path, or the feature path for
        feature-only entries."""
        return self.path if self.path is not None else (self.features_path or "")


@dataclass
class DatasetManifest:
    format_version: str = FORMAT_VERSION
    dataset_name: str = ""
    classes: list[str] = field(default_factory=list)
    videos: list[VideoEntry] = field(default_factory=list)
    metadata: dict = field(default_factory=dict)


@dataclass(frozen=True)
class ValidationIssue:
    code: str
    location: str
    message: str


@dataclass
class ValidationReport:
    errors: list[ValidationIssue] = field(default_factory=list)
    warnings: list[ValidationIssue] = field(default_factory=list)

    @property
    def is_valid(self) -> bool:
        return not self.errors


def _nfc(value: str) -> str:
    return unicodedata.normalize("NFC", value)


def _require(doc: dict, key: str, kind, location: str):
    if key not in doc:
        raise SchemaViolation(f"{location}: missing required field '{key}'")
    value = doc[key]
    if kind is float:
        if not isinstance(value, (int, float)) or isinstance(value, bool):
            raise SchemaViolation(f"{location}.{key}: expected a number, got {type(value).__name__}")
        return float(value)
    if kind is int:
        if not isinstance(value, int) or isinstance(value, bool):
            raise SchemaViolation(f"{location}.{key}: expected an integer, got {type(value).__name__}")
        return value
    if not isinstance(value, kind):
        raise SchemaViolation(f"{location}.{key}: expected {kind.__name__}, got {type(value).__name__}")
    return value


def _optional_str(doc: dict, key: str, location: str) -> Optional[str]:
    value = doc.get(key)
    if value is None:
        return None
    if not isinstance(value, str):
        raise SchemaViolation(f"{location}.{key}: expected string or null")
    return _nfc(value)


def _parse_annotation(doc: Any, location: str) -> Annotation:
    if not isinstance(doc, dict):
        raise SchemaViolation(f"{location}: annotation must be an object")
    label = _nfc(_require(doc, "label", str, location))
    position_ms = _require(doc, "position_ms", int, location)
    if position_ms < 0:
        raise SchemaViolation(f"{location}.position_ms: must be >= 0")
    confidence = doc.get("confidence")
    if confidence is not None:
        if not isinstance(confidence, (int, float)) or isinstance(confidence, bool):
            raise SchemaViolation(f"{location}.confidence: expected a number")
        confidence = float(confidence)
    metadata = doc.get("metadata", {})
    if not isinstance(metadata, dict):
        raise SchemaViolation(f"{location}.metadata: expected an object")
    return Annotation(label=label, position_ms=position_ms, confidence=confidence, metadata=metadata)


def _parse_video(doc: Any, location: str) -> VideoEntry:
    if not isinstance(doc, dict):
        raise SchemaViolation(f"{location}: video entry must be an object")
    path = _optional_str(doc, "path", location)
    features_path = _optional_str(doc, "features_path", location)
    duration_ms = _require(doc, "duration_ms", int, location)
    if duration_ms < 0:
        raise SchemaViolation(f"{location}.duration_ms: must be >= 0")
    fps = _require(doc, "fps", float, location)
    if fps <= 0:
        raise SchemaViolation(f"{location}.fps: must be > 0")
    split = _require(doc, "split", str, location)
    if split not in SPLITS:
        raise SchemaViolation(f"{location}.split: '{split}' is not one of {SPLITS}")
    raw_annotations = doc.get("annotations", [])
    if not isinstance(raw_annotations, list):
        raise SchemaViolation(f"{location}.annotations: expected a list")
    annotations = [
        _parse_annotation(a, f"{location}.annotations[{i}]") for i, a in enumerate(raw_annotations)
    ]
    metadata = doc.get("metadata", {})
    if not isinstance(metadata, dict):
        raise SchemaViolation(f"{location}.metadata: expected an object")
    return VideoEntry(
        path=path,
        features_path=features_path,
        duration_ms=duration_ms,
        fps=fps,
        split=split,
        annotations=annotations,
        metadata=metadata,
    )


def parse_manifest(text: str, strict: bool = True) -> DatasetManifest:
    """Parse manifest JSON text into a DatasetManifest.

    Structural problems (missing fields, wrong types, unknown version)
    always raise. With ``strict=True`` (default) semantic invariants are
    also enforced; with ``strict=False`` they are left for
    :func:`validate_manifest` to report.

    Unknown top-level keys are preserved inside ``metadata``.
    """
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise MalformedDocument(f"not parseable JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise SchemaViolation("top level: expected a JSON object")

    version = _require(doc, "format_version", str, "top level")
    if version not in SUPPORTED_VERSIONS:
        raise UnknownVersion(f"unrecognized format_version '{version}'")
    dataset_name = _nfc(_require(doc, "dataset_name", str, "top level"))
    raw_classes = _require(doc, "classes", list, "top level")
    classes = []
    for i, name in enumerate(raw_classes):
        if not isinstance(name, str):
            raise SchemaViolation(f"classes[{i}]: expected string")
        classes.append(_nfc(name))
    raw_videos = _require(doc, "videos", list, "top level")
    videos = [_parse_video(v, f"videos[{i}]") for i, v in enumerate(raw_videos)]

    metadata = doc.get("metadata", {})
    if not isinstance(metadata, dict):
        raise SchemaViolation("top level.metadata: expected an object")
    extras = {k: v for k, v in doc.items() if k not in _TOP_LEVEL_KEYS}
    if extras:
        metadata = {**metadata, **extras}

    manifest = DatasetManifest(
        format_version=version,
        dataset_name=dataset_name,
        classes=classes,
        videos=videos,
        metadata=metadata,
    )
    if strict:
        report = validate_manifest(manifest, strict=True)
        if not report.is_valid:
            first = report.errors[0]
            raise SchemaViolation(f"{first.location}: [{first.code}] {first.message}")
    return manifest


def validate_manifest(
    manifest: DatasetManifest,
    strict: bool = True,
    root: Optional[Path] = None,
) -> ValidationReport:
    """Check every manifest invariant and report findings with stable codes.

    ``strict=False`` downgrades position-out-of-range and missing-file
    findings to warnings. File existence is only checked when ``root`` is
    given.
    """
    report = ValidationReport()

    def finding(code: str, location: str, message: str, downgradable: bool = False):
        issue = ValidationIssue(code, location, message)
        if downgradable and not strict:
            report.warnings.append(issue)
        else:
            report.errors.append(issue)

    seen_classes: set[str] = set()
    for i, name in enumerate(manifest.classes):
        loc = f"classes[{i}]"
        if not name:
            finding("EMPTY_CLASS_NAME", loc, "class names must be non-empty")
        if name in seen_classes:
            finding("DUPLICATE_CLASS", loc, f"class '{name}' appears more than once")
        seen_classes.add(name)

    seen_ids: set[str] = set()
    for vi, video in enumerate(manifest.videos):
        vloc = f"videos[{vi}]"
        if video.path is None and video.features_path is None:
            finding("MISSING_SOURCE", vloc, "neither path nor features_path is set")
        vid = video.video_id
        if vid:
            if vid in seen_ids:
                finding("DUPLICATE_VIDEO", vloc, f"video id '{vid}' appears more than once")
            seen_ids.add(vid)
        if video.duration_ms <= 0 and video.annotations:
            finding("NO_DURATION", vloc, "duration_ms must be > 0 when annotations exist")
        if video.fps <= 0:
            finding("BAD_FPS", vloc, "fps must be > 0")
        if video.split not in SPLITS:
            finding("BAD_SPLIT", vloc, f"split '{video.split}' is not one of {SPLITS}")
        if root is not None:
            for attr in ("path", "features_path"):
                rel = getattr(video, attr)
                if rel is not None and not (Path(root) / rel).exists():
                    finding("MISSING_FILE", vloc, f"{attr} '{rel}' not found under {root}",
                            downgradable=True)
        for ai, ann in enumerate(video.annotations):
            aloc = f"{vloc}.annotations[{ai}]"
            if ann.label not in seen_classes:
                finding("UNKNOWN_LABEL", aloc, f"label '{ann.label}' is not in classes")
            if ann.position_ms < 0 or ann.position_ms > video.duration_ms:
                finding("POSITION_OUT_OF_RANGE", aloc,
                        f"position_ms {ann.position_ms} outside [0, {video.duration_ms}]",
                        downgradable=True)
            if ann.confidence is not None and not (0.0 <= ann.confidence <= 1.0):
                finding("BAD_CONFIDENCE", aloc, f"confidence {ann.confidence} outside [0, 1]")
    return report


def _annotation_doc(ann: Annotation) -> dict:
    doc: dict[str, Any] = {"label": ann.label, "position_ms": ann.position_ms}
    if ann.confidence is not None:
        doc["confidence"] = ann.confidence
    doc["metadata"] = ann.metadata
    return doc


def _video_doc(video: VideoEntry) -> dict:
    doc: dict[str, Any] = {}
    if video.path is not None:
        doc["path"] = video.path
    if video.features_path is not None:
        doc["features_path"] = video.features_path
    doc["duration_ms"] = video.duration_ms
    doc["fps"] = video.fps
    doc["split"] = video.split
    doc["annotations"] = [_annotation_doc(a) for a in video.annotations]
    doc["metadata"] = video.metadata
    return doc


def serialize_manifest(manifest: DatasetManifest) -> str:
    """Render a manifest as canonical JSON (fixed key order, 2-space indent)."""
    report = validate_manifest(manifest, strict=True)
    if not report.is_valid:
        lines = "; ".join(f"[{e.code}] {e.location}: {e.message}" for e in report.errors[:5])
        raise InvalidManifest(f"manifest fails strict validation: {lines}")
    doc = {
        "format_version": manifest.format_version,
        "dataset_name": manifest.dataset_name,
        "classes": list(manifest.classes),
        "videos": [_video_doc(v) for v in manifest.videos],
        "metadata": manifest.metadata,
    }
    return json.dumps(doc, ensure_ascii=False, indent=2) + "\n"


def save_manifest(manifest: DatasetManifest, path: Path | str) -> None:
    Path(path).write_text(serialize_manifest(manifest), encoding="utf-8")


def load_manifest(path: Path | str, strict: bool = True) -> DatasetManifest:
    return parse_manifest(Path(path).read_text(encoding="utf-8"), strict=strict)


def filter_split(manifest: DatasetManifest, split: str) -> DatasetManifest:
    """Keep exactly the videos of one split; classes are untouched."""
    if split not in SPLITS:
        raise SchemaViolation(f"split '{split}' is not one of {SPLITS}")
    return DatasetManifest(
        format_version=manifest.format_version,
        dataset_name=manifest.dataset_name,
        classes=list(manifest.classes),
        videos=[v for v in manifest.videos if v.split == split],
        metadata=dict(manifest.metadata),
    )


# --- legacy conversion -----------------------------------------------------


@dataclass
class LegacyMappingConfig:
    """How to interpret a legacy per-match label tree.

    ``label_map`` maps legacy label strings to class names (None keeps them
    verbatim). ``split_map`` assigns splits by match directory (relative to
    the legacy root); unlisted matches get ``default_split``.
    """

    label_filename: str = "Labels-v2.json"
    label_map: Optional[dict[str, str]] = None
    classes: Optional[list[str]] = None
    split_map: dict[str, str] = field(default_factory=dict)
    default_split: str = "train"
    video_path_template: str = "{match}/{half}_224p.mkv"
    half_duration_ms: int = 2_700_000
    fps: float = 25.0
    strict: bool = True

    @classmethod
    def from_dict(cls, doc: dict) -> "LegacyMappingConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(doc) - known
        if unknown:
            raise SchemaViolation(f"unknown legacy mapping keys: {sorted(unknown)}")
        return cls(**doc)


def _parse_game_time(game_time: str, location: str) -> int:
    """'H - MM:SS' -> half number. Raises UnparseableGameTime."""
    try:
        half_str, _clock = [part.strip() for part in game_time.split("-", 1)]
        return int(half_str)
    except (ValueError, AttributeError) as exc:
        raise UnparseableGameTime(f"{location}: cannot parse gameTime '{game_time}'") from exc


def convert_legacy(root: Path | str, mapping: LegacyMappingConfig) -> DatasetManifest:
    """Convert a legacy per-match label tree into one manifest.

    Each match directory holding ``mapping.label_filename`` contributes one
    VideoEntry per half (1 and 2). Annotation positions come from the
    legacy absolute-millisecond field. Conversion statistics and warnings
    are recorded in the manifest metadata, so that
    annotations_read == annotations_emitted + unknown_label_skips.
    """
    root = Path(root)
    label_files = sorted(root.rglob(mapping.label_filename))
    matches = [p.parent.relative_to(root).as_posix() for p in label_files]

    warnings: list[str] = []
    for match in sorted(mapping.split_map):
        if match not in matches:
            message = f"match '{match}' in split_map has no {mapping.label_filename}"
            if mapping.strict:
                raise MissingLabelFile(message)
            warnings.append(message)

    match_dirs = {p.relative_to(root).as_posix() for p in root.iterdir() if p.is_dir()} if root.exists() else set()
    for directory in sorted(match_dirs):
        if not any(m == directory or m.startswith(directory + "/") for m in matches):
            warnings.append(f"directory '{directory}' contains no {mapping.label_filename}; skipped")

    read = emitted = skipped = 0
    videos: list[VideoEntry] = []
    seen_labels: set[str] = set()
    for label_file, match in zip(label_files, matches):
        try:
            doc = json.loads(label_file.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise MalformedDocument(f"{label_file}: {exc}") from exc
        raw = doc.get("annotations", [])
        if not isinstance(raw, list):
            raise SchemaViolation(f"{label_file}: 'annotations' must be a list")

        split = mapping.split_map.get(match, mapping.default_split)
        per_half: dict[int, list[Annotation]] = {1: [], 2: []}
        for i, entry in enumerate(raw):
            location = f"{match}[{i}]"
            read += 1
            label = str(entry.get("label", ""))
            if mapping.label_map is not None:
                if label not in mapping.label_map:
                    if mapping.strict:
                        raise UnknownLegacyLabel(f"{location}: no mapping for label '{label}'")
                    skipped += 1
                    warnings.append(f"{location}: unknown legacy label '{label}'")
                    continue
                label = mapping.label_map[label]
            label = _nfc(label)

            if "half" in entry:
                half = int(entry["half"])
            else:
                half = _parse_game_time(entry.get("gameTime", ""), location)
            if half not in per_half:
                per_half[half] = []

            if "position" in entry:
                position_ms = int(entry["position"])
            else:
                game_time = entry.get("gameTime", "")
                try:
                    clock = game_time.split("-", 1)[1].strip()
                    minutes, seconds = clock.split(":")
                    position_ms = (int(minutes) * 60 + int(seconds)) * 1000
                except (IndexError, ValueError, AttributeError) as exc:
                    raise UnparseableGameTime(
                        f"{location}: no position and unparseable gameTime '{game_time}'") from exc

            per_half[half].append(Annotation(label=label, position_ms=position_ms))
            seen_labels.add(label)
            emitted += 1

        for half in sorted(per_half):
            annotations = sorted(per_half[half], key=lambda a: (a.position_ms, a.label))
            videos.append(VideoEntry(
                path=mapping.video_path_template.format(match=match, half=half),
                duration_ms=mapping.half_duration_ms,
                fps=mapping.fps,
                split=split,
                annotations=annotations,
            ))

    if not label_files:
        warnings.append(f"no {mapping.label_filename} files found under {root}")

    classes = list(mapping.classes) if mapping.classes is not None else sorted(seen_labels)
    return DatasetManifest(
        dataset_name=root.name,
        classes=classes,
        videos=videos,
        metadata={
            "conversion": {
                "legacy_annotations_read": read,
                "annotations_emitted": emitted,
                "unknown_label_skips": skipped,
                "warnings": warnings,
            }
        },
    )


def iter_annotations(manifest: DatasetManifest) -> Iterable[tuple[VideoEntry, Annotation]]:
    for video in manifest.videos:
        for ann in video.annotations:
            yield video, ann
