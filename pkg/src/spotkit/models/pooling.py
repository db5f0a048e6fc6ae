"""Pooling necks: max/avg, cluster-based soft-assignment pooling with and
without centroid residuals, and the temporally-aware split variants."""

from __future__ import annotations

from typing import Callable, Optional

import torch
import torch.nn.functional as F
from torch import nn

from ..errors import AllMasked, EmptyHalf, ShapeMismatch
from .base import ModelConfig, SpottingModel, seeded_generator
from .heads import LinearClassHead

EPS = 1e-12


def _check_mask(x: torch.Tensor, mask: Optional[torch.Tensor]) -> torch.Tensor:
    if x.dim() not in (2, 3):
        raise ShapeMismatch(f"expected (T, D) or (B, T, D), got {tuple(x.shape)}")
    if mask is None:
        mask = torch.ones(x.shape[:-1], dtype=torch.bool, device=x.device)
    if mask.shape != x.shape[:-1]:
        raise ShapeMismatch(f"mask shape {tuple(mask.shape)} does not cover {tuple(x.shape[:-1])}")
    return mask.bool()


def pool_max(x: torch.Tensor, mask: Optional[torch.Tensor] = None) -> torch.Tensor:
    """Elementwise max over unmasked rows."""
    mask = _check_mask(x, mask)
    if not mask.any(dim=-1).all():
        raise AllMasked("max pooling over a fully masked window")
    filled = x.masked_fill(~mask.unsqueeze(-1), float("-inf"))
    return filled.amax(dim=-2)


def pool_avg(x: torch.Tensor, mask: Optional[torch.Tensor] = None) -> torch.Tensor:
    """Mean over unmasked rows; padding never biases the result."""
    mask = _check_mask(x, mask)
    counts = mask.sum(dim=-1, keepdim=True)
    if (counts == 0).any():
        raise AllMasked("average pooling over a fully masked window")
    sums = (x * mask.unsqueeze(-1).to(x.dtype)).sum(dim=-2)
    return sums / counts.to(x.dtype)


def _soft_assign(x: torch.Tensor, mask: torch.Tensor, assign_weight: torch.Tensor,
                 assign_bias: torch.Tensor) -> torch.Tensor:
    if assign_weight.shape[1] != x.shape[-1]:
        raise ShapeMismatch(
            f"assignment weight dim {assign_weight.shape[1]} != feature dim {x.shape[-1]}")
    logits = x @ assign_weight.t() + assign_bias  # (..., T, K)
    assign = torch.softmax(logits, dim=-1)
    return assign * mask.unsqueeze(-1).to(x.dtype)


def _normalize_blocks(vlad: torch.Tensor) -> torch.Tensor:
    # per-cluster scaling to unit norm, then global unit norm; epsilon-guarded
    intra = vlad / vlad.norm(dim=-1, keepdim=True).clamp_min(EPS)
    flat = intra.flatten(-2)
    return flat / flat.norm(dim=-1, keepdim=True).clamp_min(EPS)


def netvlad(x: torch.Tensor, mask: Optional[torch.Tensor], centroids: torch.Tensor,
            assign_weight: torch.Tensor, assign_bias: torch.Tensor) -> torch.Tensor:
    """Soft-assigned residual aggregation over K clusters -> K*D vector.

    assignment(t) = softmax_k(w_k . f_t + b_k); V_k = sum_t m(t) a_k(t)
    (f_t - c_k); blocks are unit-normalized with an epsilon guard and the
    concatenation normalized again.
    """
    squeeze = x.dim() == 2
    if squeeze:
        x = x.unsqueeze(0)
        mask = mask.unsqueeze(0) if mask is not None else None
    mask = _check_mask(x, mask)
    if centroids.shape != assign_weight.shape:
        raise ShapeMismatch("centroids and assignment weights must both be (K, D)")
    assign = _soft_assign(x, mask, assign_weight, assign_bias)  # (B, T, K)
    aggregated = assign.transpose(-1, -2) @ x                   # (B, K, D)
    totals = assign.sum(dim=-2)                                 # (B, K)
    vlad = aggregated - totals.unsqueeze(-1) * centroids
    out = _normalize_blocks(vlad)
    return out.squeeze(0) if squeeze else out


def netrvlad(x: torch.Tensor, mask: Optional[torch.Tensor], assign_weight: torch.Tensor,
             assign_bias: torch.Tensor) -> torch.Tensor:
    """netvlad without the centroid subtraction: V_k = sum_t m(t) a_k(t) f_t."""
    squeeze = x.dim() == 2
    if squeeze:
        x = x.unsqueeze(0)
        mask = mask.unsqueeze(0) if mask is not None else None
    mask = _check_mask(x, mask)
    assign = _soft_assign(x, mask, assign_weight, assign_bias)
    vlad = assign.transpose(-1, -2) @ x
    out = _normalize_blocks(vlad)
    return out.squeeze(0) if squeeze else out


def temporally_aware_pool(pool_before: Callable, pool_after: Callable, x: torch.Tensor,
                          mask: Optional[torch.Tensor], split_index: int) -> torch.Tensor:
    """Pool [0, s) and [s, T) with independent parameters and concatenate."""
    seq_length = x.shape[-2]
    if not 0 < split_index < seq_length:
        raise ShapeMismatch(f"split index {split_index} outside (0, {seq_length})")
    mask = _check_mask(x, mask)
    before_mask = mask[..., :split_index]
    after_mask = mask[..., split_index:]
    if not before_mask.any(dim=-1).all() or not after_mask.any(dim=-1).all():
        raise EmptyHalf("both halves need at least one unmasked row")
    before = pool_before(x[..., :split_index, :], before_mask)
    after = pool_after(x[..., split_index:, :], after_mask)
    return torch.cat([before, after], dim=-1)


# --- parameterized neck modules -----------------------------------------------


class MaxPoolNeck(nn.Module):
    def __init__(self, feature_dim: int):
        super().__init__()
        self.output_dim = feature_dim

    def forward(self, x, mask=None):
        return pool_max(x, mask)


class AvgPoolNeck(nn.Module):
    def __init__(self, feature_dim: int):
        super().__init__()
        self.output_dim = feature_dim

    def forward(self, x, mask=None):
        return pool_avg(x, mask)


class ClusterPoolNeck(nn.Module):
    """Learnable cluster pooling. residual=True subtracts centroids.

    Initialization keeps assignments geometry-consistent: centroids from a
    spherical Gaussian scaled by 1/sqrt(D), w_k = 2*alpha*c_k and
    b_k = -alpha*|c_k|^2 with alpha = 1.
    """

    def __init__(self, feature_dim: int, clusters: int, residual: bool,
                 generator: Optional[torch.Generator] = None, alpha: float = 1.0):
        super().__init__()
        if clusters < 1:
            raise ShapeMismatch("clusters must be >= 1")
        self.residual = residual
        self.output_dim = clusters * feature_dim
        centroids = torch.empty(clusters, feature_dim).normal_(
            mean=0.0, std=feature_dim ** -0.5, generator=generator)
        self.assign_weight = nn.Parameter(2.0 * alpha * centroids.clone())
        self.assign_bias = nn.Parameter(-alpha * (centroids ** 2).sum(dim=1))
        if residual:
            self.centroids = nn.Parameter(centroids)

    def forward(self, x, mask=None):
        if self.residual:
            return netvlad(x, mask, self.centroids, self.assign_weight, self.assign_bias)
        return netrvlad(x, mask, self.assign_weight, self.assign_bias)


class TemporallyAwareNeck(nn.Module):
    """Two independent copies of a base neck over the halves around an
    anchor frame (default: the clip midpoint)."""

    def __init__(self, make_base: Callable[[], nn.Module]):
        super().__init__()
        self.before = make_base()
        self.after = make_base()
        self.output_dim = self.before.output_dim + self.after.output_dim

    def forward(self, x, mask=None, split_index: Optional[int] = None):
        split = split_index if split_index is not None else x.shape[-2] // 2
        return temporally_aware_pool(self.before, self.after, x, mask, split)


def make_neck(kind: str, feature_dim: int, clusters: int, temporally_aware: bool,
              generator: Optional[torch.Generator] = None) -> nn.Module:
    def base() -> nn.Module:
        if kind == "max":
            return MaxPoolNeck(feature_dim)
        if kind == "avg":
            return AvgPoolNeck(feature_dim)
        if kind == "netvlad":
            return ClusterPoolNeck(feature_dim, clusters, residual=True, generator=generator)
        if kind == "netrvlad":
            return ClusterPoolNeck(feature_dim, clusters, residual=False, generator=generator)
        raise ShapeMismatch(f"unknown pooling kind '{kind}'")

    if temporally_aware:
        return TemporallyAwareNeck(base)
    return base()


class PoolingClassifier(SpottingModel):
    """Pooling neck + linear softmax head trained as clip classification.

    A clip contributes one cross-entropy target per annotated class and a
    single background target when it has none.
    """

    prediction_mode = "clip"
    source = "features"

    def __init__(self, config: ModelConfig, kind: str, temporally_aware: bool):
        super().__init__(config)
        generator = seeded_generator(config.seed)
        self.neck = make_neck(kind, config.feature_dim, config.clusters,
                              temporally_aware, generator)
        self.head = LinearClassHead(self.neck.output_dim, config.num_classes + 1, generator)

    def _logits(self, payload, pad_mask):
        return self.head(self.neck(payload, pad_mask))

    def training_loss(self, payload, pad_mask, targets):
        logits = self._logits(payload, pad_mask)
        clip_classes = torch.as_tensor(targets.clip_classes)
        rows, labels = [], []
        background = self.config.num_classes
        for i in range(clip_classes.shape[0]):
            hits = torch.nonzero(clip_classes[i] > 0.5).flatten().tolist()
            if not hits:
                hits = [background]
            rows.extend([i] * len(hits))
            labels.extend(hits)
        return F.cross_entropy(logits[rows], torch.tensor(labels, dtype=torch.long))

    def clip_scores(self, payload, pad_mask):
        return torch.softmax(self._logits(payload, pad_mask), dim=-1)
