"""Spot extraction and loose/tight average-mAP evaluation.

A prediction matches a ground truth of the same class in the same video
when their timestamps differ by at most the tolerance (inclusive).
Matching is greedy in confidence order; per-class AP uses all-point
interpolated precision. The loose grid is 5..60 s in 5 s steps, the
tight grid 1..5 s in 1 s steps; each average-mAP is the unweighted mean
of the per-tolerance mAPs. All time arithmetic is integer milliseconds.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import (
    InvalidManifest,
    NonPositiveTolerance,
    UnknownVideoInPredictions,
    VocabularyMismatch,
)
from .manifest import DatasetManifest

LOOSE_TOLERANCES_S: tuple[float, ...] = tuple(float(t) for t in range(5, 61, 5))
TIGHT_TOLERANCES_S: tuple[float, ...] = tuple(float(t) for t in range(1, 6))


@dataclass(frozen=True)
class SpotPrediction:
    video_id: str
    label: str
    position_ms: int
    confidence: float


@dataclass(frozen=True)
class GroundTruthSpot:
    video_id: str
    label: str
    position_ms: int


def extract_spots(
    times_ms: Sequence[int],
    scores: np.ndarray,
    classes: Sequence[str],
    video_id: str,
    threshold: float,
    nms_window_ms: int,
) -> list[SpotPrediction]:
    """Threshold a dense score timeline and apply per-class temporal NMS.

    Per class: keep points with score >= threshold, then repeatedly emit
    the highest-score survivor (ties: earlier timestamp) and suppress all
    candidates within +/- nms_window_ms of it.
    """
    if not 0.0 <= threshold <= 1.0:
        raise ValueError("threshold must lie in [0, 1]")
    if nms_window_ms < 0:
        raise ValueError("nms_window_ms must be >= 0")
    scores = np.asarray(scores)
    if scores.ndim != 2 or scores.shape[1] != len(classes):
        raise ValueError(f"scores must be N x {len(classes)}, got {scores.shape}")
    times = np.asarray(times_ms, dtype=np.int64)
    if times.shape[0] != scores.shape[0]:
        raise ValueError("times and scores disagree on N")

    spots: list[SpotPrediction] = []
    for ci, label in enumerate(classes):
        keep = scores[:, ci] >= threshold
        candidates = sorted(
            ((float(scores[t, ci]), int(times[t])) for t in np.flatnonzero(keep)),
            key=lambda sc: (-sc[0], sc[1]),
        )
        alive = [True] * len(candidates)
        for i, (score, time) in enumerate(candidates):
            if not alive[i]:
                continue
            spots.append(SpotPrediction(video_id=video_id, label=label,
                                        position_ms=time, confidence=score))
            for j in range(i + 1, len(candidates)):
                if alive[j] and abs(candidates[j][1] - time) <= nms_window_ms:
                    alive[j] = False
    spots.sort(key=lambda s: (s.position_ms, s.label))
    return spots


def _match_flags(
    preds: Sequence[SpotPrediction],
    gts: Sequence[GroundTruthSpot],
    tolerance_ms: int,
) -> list[bool]:
    """Greedy confidence-ordered matching; returns a TP flag per sorted pred.

    Predictions are taken by descending confidence (ties: earlier
    timestamp, then video id); each claims the closest not-yet-matched
    ground truth within tolerance in its own video, ties going to the
    earlier ground truth.
    """
    ordered = sorted(preds, key=lambda p: (-p.confidence, p.position_ms, p.video_id))
    free: dict[str, list[int]] = {}
    for gt in gts:
        free.setdefault(gt.video_id, []).append(gt.position_ms)
    for times in free.values():
        times.sort()
    taken: dict[str, set[int]] = {vid: set() for vid in free}

    flags = []
    for pred in ordered:
        times = free.get(pred.video_id, [])
        best: Optional[int] = None
        best_key: Optional[tuple[int, int]] = None
        for idx, gt_time in enumerate(times):
            if idx in taken[pred.video_id]:
                continue
            delta = abs(pred.position_ms - gt_time)
            if delta > tolerance_ms:
                continue
            key = (delta, gt_time)
            if best_key is None or key < best_key:
                best_key = key
                best = idx
        if best is not None:
            taken[pred.video_id].add(best)
            flags.append(True)
        else:
            flags.append(False)
    return flags


def _interpolated_ap(flags: Sequence[bool], num_gt: int) -> float:
    """Area under the PR curve with right-continuous interpolated precision."""
    if num_gt == 0:
        return 0.0
    tp = 0
    precisions = []
    recalls = []
    for rank, flag in enumerate(flags, start=1):
        tp += int(flag)
        precisions.append(tp / rank)
        recalls.append(tp / num_gt)
    ap = 0.0
    prev_recall = 0.0
    for k in range(len(flags)):
        if recalls[k] > prev_recall:
            interp = max(precisions[k:])
            ap += (recalls[k] - prev_recall) * interp
            prev_recall = recalls[k]
    return ap


def average_precision(
    preds: Sequence[SpotPrediction],
    gts: Sequence[GroundTruthSpot],
    tolerance_s: float,
) -> Optional[float]:
    """AP for one class over a set of videos at one matching tolerance.

    Returns None when there are neither predictions nor ground truths
    (undefined; callers skip the class). With ground truths but no
    predictions, or predictions but no ground truths, the AP is 0.
    """
    if tolerance_s <= 0:
        raise NonPositiveTolerance(f"tolerance must be > 0, got {tolerance_s}")
    if not gts:
        return 0.0 if preds else None
    if not preds:
        return 0.0
    tolerance_ms = int(round(tolerance_s * 1000))
    flags = _match_flags(preds, gts, tolerance_ms)
    return _interpolated_ap(flags, len(gts))


def matched_count(
    preds: Sequence[SpotPrediction],
    gts: Sequence[GroundTruthSpot],
    tolerance_s: float,
) -> int:
    if not preds or not gts:
        return 0
    return int(sum(_match_flags(preds, gts, int(round(tolerance_s * 1000)))))


def average_map(
    preds: Sequence[SpotPrediction],
    gts: Sequence[GroundTruthSpot],
    tolerances_s: Sequence[float],
) -> tuple[dict[float, float], float]:
    """Per-tolerance mAP over classes with ground truth, plus their mean."""
    if not tolerances_s:
        raise NonPositiveTolerance("tolerance list must be non-empty")
    classes = sorted({gt.label for gt in gts})
    by_class_preds = {c: [p for p in preds if p.label == c] for c in classes}
    by_class_gts = {c: [g for g in gts if g.label == c] for c in classes}
    map_per_tolerance: dict[float, float] = {}
    for tol in tolerances_s:
        if tol <= 0:
            raise NonPositiveTolerance(f"tolerance must be > 0, got {tol}")
        if not classes:
            map_per_tolerance[float(tol)] = 0.0
            continue
        aps = [average_precision(by_class_preds[c], by_class_gts[c], tol) for c in classes]
        map_per_tolerance[float(tol)] = float(sum(aps) / len(aps))
    average = float(sum(map_per_tolerance[float(t)] for t in tolerances_s) / len(tolerances_s))
    return map_per_tolerance, average


@dataclass
class EvalReport:
    per_class_ap: dict[str, dict[float, float]] = field(default_factory=dict)
    map_per_tolerance: dict[float, float] = field(default_factory=dict)
    average_map_loose: float = 0.0
    average_map_tight: float = 0.0
    counts: dict = field(default_factory=dict)

    def to_json_dict(self) -> dict:
        return {
            "per_class_ap": {
                cls: {f"{tol:g}": ap for tol, ap in sorted(tols.items())}
                for cls, tols in self.per_class_ap.items()
            },
            "map_per_tolerance": {f"{tol:g}": v for tol, v in sorted(self.map_per_tolerance.items())},
            "average_map_loose": self.average_map_loose,
            "average_map_tight": self.average_map_tight,
            "counts": self.counts,
        }

    def to_text_table(self) -> str:
        """Fixed-width classes x tolerances AP table plus summary lines."""
        tolerances = sorted(self.map_per_tolerance)
        label_width = max([len("class"), len("mAP")] + [len(c) for c in self.per_class_ap]) + 2
        header = "class".ljust(label_width) + "".join(f"{f'{tol:g}s':>8}" for tol in tolerances)
        lines = [header, "-" * len(header)]
        for cls in sorted(self.per_class_ap):
            row = cls.ljust(label_width)
            row += "".join(f"{self.per_class_ap[cls].get(tol, float('nan')):>8.3f}"
                           for tol in tolerances)
            lines.append(row)
        lines.append("-" * len(header))
        lines.append("mAP".ljust(label_width)
                     + "".join(f"{self.map_per_tolerance[tol]:>8.3f}" for tol in tolerances))
        lines.append("")
        lines.append(f"average-mAP loose (5-60 s): {self.average_map_loose:.4f}")
        lines.append(f"average-mAP tight (1-5 s):  {self.average_map_tight:.4f}")
        return "\n".join(lines)


def manifest_spots(manifest: DatasetManifest, require_confidence: bool) -> list:
    spots = []
    for video in manifest.videos:
        for ann in video.annotations:
            if require_confidence:
                if ann.confidence is None:
                    raise InvalidManifest(
                        f"prediction for '{video.video_id}' misses a confidence")
                spots.append(SpotPrediction(video.video_id, ann.label,
                                            ann.position_ms, ann.confidence))
            else:
                spots.append(GroundTruthSpot(video.video_id, ann.label, ann.position_ms))
    return spots


def evaluate(
    pred_manifest: DatasetManifest,
    gt_manifest: DatasetManifest,
    extra_tolerances_s: Iterable[float] = (),
) -> EvalReport:
    """Full report: per-class AP per tolerance, loose and tight averages, counts."""
    if set(pred_manifest.classes) != set(gt_manifest.classes):
        raise VocabularyMismatch(
            f"prediction classes {sorted(pred_manifest.classes)} != "
            f"ground truth classes {sorted(gt_manifest.classes)}")
    gt_ids = {v.video_id for v in gt_manifest.videos}
    for video in pred_manifest.videos:
        if video.video_id not in gt_ids:
            raise UnknownVideoInPredictions(f"'{video.video_id}' not present in ground truth")

    preds: list[SpotPrediction] = manifest_spots(pred_manifest, require_confidence=True)
    gts: list[GroundTruthSpot] = manifest_spots(gt_manifest, require_confidence=False)

    tolerances = sorted(set(LOOSE_TOLERANCES_S) | set(TIGHT_TOLERANCES_S)
                        | {float(t) for t in extra_tolerances_s})
    scored_classes = sorted({gt.label for gt in gts})
    by_class_preds = {c: [p for p in preds if p.label == c] for c in scored_classes}
    by_class_gts = {c: [g for g in gts if g.label == c] for c in scored_classes}

    report = EvalReport()
    matched: dict[str, int] = {}
    for tol in tolerances:
        aps = []
        matches = 0
        for cls in scored_classes:
            ap = average_precision(by_class_preds[cls], by_class_gts[cls], tol)
            report.per_class_ap.setdefault(cls, {})[tol] = float(ap)
            aps.append(ap)
            matches += matched_count(by_class_preds[cls], by_class_gts[cls], tol)
        report.map_per_tolerance[tol] = float(sum(aps) / len(aps)) if aps else 0.0
        matched[f"{tol:g}"] = matches

    report.average_map_loose = float(
        sum(report.map_per_tolerance[t] for t in LOOSE_TOLERANCES_S) / len(LOOSE_TOLERANCES_S))
    report.average_map_tight = float(
        sum(report.map_per_tolerance[t] for t in TIGHT_TOLERANCES_S) / len(TIGHT_TOLERANCES_S))
    report.counts = {
        "predictions": len(preds),
        "ground_truths": len(gts),
        "matched": matched,
    }
    return report
