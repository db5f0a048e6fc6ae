"""Context-aware segmentation/spotting model.

The neck is a small temporal-convolution stack producing per-frame
per-class actionness scores; its training signal weights each frame by
its signed distance to the nearest annotation of the class (push-to-zero
far away, free "context" bands just before and after, push-to-one inside
the action zone). A regression head emits a fixed number of candidate
spots per clip, trained by matching every ground truth to its
nearest-location candidate.
"""

from __future__ import annotations

from typing import Optional, Sequence

import torch
import torch.nn.functional as F
from torch import nn

from ..errors import InvalidZoneParams, ShapeMismatch
from ..pipeline import FRAME_LABEL
from .base import ModelConfig, SpottingModel, seeded_generator
from .init import reseed_parameters

NO_ANNOTATION_DISTANCE = 1e17
_SENTINEL = 1e18  # zone bounds at +/- this value make a zone unreachable


def signed_distance_grid(num_frames: int, annotations: Sequence[tuple[int, int]],
                         num_classes: int, dtype=torch.float64) -> torch.Tensor:
    """(T, C) signed frame distance to the nearest annotation of each class.

    Nearest by absolute distance; exact ties resolve to the earlier
    annotation (positive distance). Classes with no annotation sit at
    +NO_ANNOTATION_DISTANCE.
    """
    grid = torch.full((num_frames, num_classes), NO_ANNOTATION_DISTANCE, dtype=dtype)
    steps = torch.arange(num_frames, dtype=dtype)
    for frame, cls in annotations:
        candidate = steps - float(frame)
        current = grid[:, cls]
        closer = candidate.abs() < current.abs()
        tie_earlier = (candidate.abs() == current.abs()) & (candidate > current)
        take = closer | tie_earlier
        grid[take, cls] = candidate[take]
    return grid


def _validate_zones(zones: torch.Tensor) -> None:
    k1, k2, k3, k4 = zones.unbind(dim=-1)
    ordered = (k1 <= k2) & (k2 <= 0) & (0 <= k3) & (k3 <= k4)
    if not bool(ordered.all()):
        raise InvalidZoneParams(f"zones must satisfy K1 <= K2 <= 0 <= K3 <= K4, got {zones.tolist()}")


def calf_context_loss(scores: torch.Tensor, annotations: Sequence[tuple[int, int]],
                      zones: torch.Tensor) -> torch.Tensor:
    """Zone-weighted segmentation loss, mean over T x C cells.

    scores: (T, C) in (0, 1]; annotations: (frame, class) pairs; zones:
    (C, 4) or (4,) frame offsets (K1, K2, K3, K4). Cells far from every
    annotation (d < K1 or d > K4) pay -log(1 - s); cells in the action
    zone (K2 <= d <= K3) pay -log(s); the two context bands are free.
    """
    if scores.dim() != 2:
        raise ShapeMismatch(f"scores must be (T, C), got {tuple(scores.shape)}")
    num_frames, num_classes = scores.shape
    zones = torch.as_tensor(zones, dtype=scores.dtype)
    if zones.dim() == 1:
        zones = zones.unsqueeze(0).expand(num_classes, 4)
    if zones.shape != (num_classes, 4):
        raise ShapeMismatch(f"zones must be (C, 4), got {tuple(zones.shape)}")
    _validate_zones(zones)

    distances = signed_distance_grid(num_frames, annotations, num_classes,
                                     dtype=scores.dtype)
    k1, k2, k3, k4 = zones.t()
    far = (distances < k1) | (distances > k4)
    action = (distances >= k2) & (distances <= k3)
    total = scores.new_zeros(())
    if far.any():
        total = total + (-torch.log1p(-scores[far])).sum()
    if action.any():
        total = total + (-torch.log(scores[action])).sum()
    return total / (num_frames * num_classes)


def match_candidates(gt_locations: torch.Tensor, candidate_locations: torch.Tensor) -> list[int]:
    """Nearest-location candidate per ground truth; ties pick the lower index."""
    matches = []
    for g in gt_locations:
        diff = (candidate_locations - g).abs()
        best = diff.min()
        matches.append(int(torch.nonzero(diff == best)[0]))
    return matches


def calf_spotting_loss(locations: torch.Tensor, confidences: torch.Tensor,
                       class_probs: torch.Tensor,
                       ground_truths: Sequence[tuple[float, int]]) -> torch.Tensor:
    """Matched-regression loss for one clip's candidates.

    Each ground truth (normalized location, class) is matched to the
    nearest-location candidate: squared error on location plus -log of
    the candidate's probability for the class. Confidence targets are 1
    for matched candidates, 0 otherwise (binary cross-entropy).
    """
    if locations.shape != confidences.shape or class_probs.shape[0] != locations.shape[0]:
        raise ShapeMismatch("candidate tensors disagree on M")
    matched = torch.zeros_like(confidences)
    total = locations.new_zeros(())
    if ground_truths:
        gt_locs = torch.tensor([g for g, _ in ground_truths], dtype=locations.dtype)
        indices = match_candidates(gt_locs, locations.detach())
        loc_terms = []
        cls_terms = []
        for (g_loc, g_cls), idx in zip(ground_truths, indices):
            matched[idx] = 1.0
            loc_terms.append((locations[idx] - g_loc) ** 2)
            cls_terms.append(-torch.log(class_probs[idx, g_cls].clamp_min(1e-12)))
        total = total + torch.stack(loc_terms).mean() + torch.stack(cls_terms).mean()
    conf_loss = F.binary_cross_entropy(confidences, matched)
    return total + conf_loss


class CalfSegmentationNeck(nn.Module):
    """Temporal conv stack -> (per-frame class scores via sigmoid, hidden)."""

    def __init__(self, feature_dim: int, hidden_dim: int, num_classes: int, depth: int):
        super().__init__()
        layers = []
        channels = feature_dim
        for _ in range(max(1, depth)):
            layers.append(nn.Conv1d(channels, hidden_dim, kernel_size=3, padding=1))
            channels = hidden_dim
        self.convs = nn.ModuleList(layers)
        self.seg = nn.Conv1d(hidden_dim, num_classes, kernel_size=1)

    def forward(self, x: torch.Tensor, mask: Optional[torch.Tensor] = None):
        if x.dim() != 3:
            raise ShapeMismatch(f"expected (B, T, D), got {tuple(x.shape)}")
        if mask is not None:
            x = x * mask.unsqueeze(-1).to(x.dtype)
        h = x.transpose(1, 2)
        for conv in self.convs:
            h = torch.relu(conv(h))
        segmentation = torch.sigmoid(self.seg(h)).transpose(1, 2)
        return segmentation, h.transpose(1, 2)


class CalfSpottingHead(nn.Module):
    """Fixed-length clip -> M candidates (location, confidence, class simplex)."""

    def __init__(self, hidden_dim: int, clip_length: int, num_candidates: int,
                 num_classes: int):
        super().__init__()
        if num_candidates < 1:
            raise ShapeMismatch("need at least one candidate")
        self.clip_length = clip_length
        self.num_candidates = num_candidates
        self.fields = 2 + num_classes + 1
        self.conv = nn.Conv1d(hidden_dim, hidden_dim, kernel_size=3, padding=1)
        self.fc = nn.Linear(hidden_dim * clip_length, num_candidates * self.fields)

    def spread_location_bias(self):
        # start candidates spread across the clip so matching distributes
        with torch.no_grad():
            m = self.num_candidates
            positions = (torch.arange(m, dtype=torch.float32) + 1.0) / (m + 1.0)
            logits = torch.log(positions / (1.0 - positions))
            for i in range(m):
                self.fc.bias[i * self.fields] = logits[i]

    def forward(self, hidden: torch.Tensor):
        if hidden.shape[1] != self.clip_length:
            raise ShapeMismatch(
                f"spotting head is bound to clip length {self.clip_length}, got {hidden.shape[1]}")
        h = torch.relu(self.conv(hidden.transpose(1, 2)))
        out = self.fc(h.flatten(1)).view(hidden.shape[0], self.num_candidates, self.fields)
        locations = torch.sigmoid(out[..., 0])
        confidences = torch.sigmoid(out[..., 1])
        class_probs = torch.softmax(out[..., 2:], dim=-1)
        return locations, confidences, class_probs


class CalfModel(SpottingModel):
    prediction_mode = "candidate"
    source = "features"
    target_mode = FRAME_LABEL

    def __init__(self, config: ModelConfig):
        super().__init__(config)
        self.neck = CalfSegmentationNeck(config.feature_dim, config.hidden_dim,
                                         config.num_classes, config.seg_depth)
        self.spot = CalfSpottingHead(config.hidden_dim, config.clip_length,
                                     config.num_candidates, config.num_classes)
        reseed_parameters(self, seeded_generator(config.seed))
        self.spot.spread_location_bias()
        zones = torch.tensor(config.zone_params, dtype=torch.float32)
        self.register_buffer("zones", zones.unsqueeze(0).expand(config.num_classes, 4).clone())

    @property
    def frame_radius(self) -> int:
        return 0  # targets are exact event frames; zones widen them in the loss

    def _recover_annotations(self, frame_classes: torch.Tensor, real: int):
        background = self.config.num_classes
        labels = frame_classes[:real].argmax(dim=-1)
        return [(t, int(labels[t])) for t in range(real) if int(labels[t]) != background]

    def training_loss(self, payload, pad_mask, targets):
        segmentation, hidden = self.neck(payload, pad_mask)
        locations, confidences, class_probs = self.spot(hidden)
        frame_classes = torch.as_tensor(targets.frame_classes)
        batch = payload.shape[0]
        clip_length = payload.shape[1]
        total = payload.new_zeros(())
        for i in range(batch):
            real = int(pad_mask[i].sum())
            annotations = self._recover_annotations(frame_classes[i], real)
            seg_loss = calf_context_loss(segmentation[i, :real], annotations,
                                         self.zones.to(payload.dtype))
            gts = [(frame / clip_length, cls) for frame, cls in annotations]
            spot_loss = calf_spotting_loss(locations[i], confidences[i], class_probs[i], gts)
            total = total + self.config.segmentation_weight * seg_loss \
                + self.config.spotting_weight * spot_loss
        return total / batch

    def frame_scores(self, payload, pad_mask):
        # segmentation route: per-frame class scores plus a zero background column
        segmentation, _ = self.neck(payload, pad_mask)
        background = torch.zeros_like(segmentation[..., :1])
        return torch.cat([segmentation, background], dim=-1)

    def window_candidates(self, payload, pad_mask):
        _, hidden = self.neck(payload, pad_mask)
        return self.spot(hidden)
