"""End-to-end video spotting: a compact per-frame conv trunk with temporal
channel shifting, followed by a gated recurrent per-frame classifier."""

from __future__ import annotations

from typing import Optional

import torch
import torch.nn.functional as F
from torch import nn

from ..errors import ShapeMismatch
from ..pipeline import FRAME_LABEL
from .base import ModelConfig, SpottingModel, seeded_generator
from .init import reseed_parameters


def temporal_shift(x: torch.Tensor, fraction: float) -> torch.Tensor:
    """Shift a fraction of channels one step forward in time and an equal
    fraction one step backward; vacated boundary positions are zero-filled.

    x: (B, T, C, H, W). fraction 0 returns the input unchanged.
    """
    if x.dim() != 5:
        raise ShapeMismatch(f"expected (B, T, C, H, W), got {tuple(x.shape)}")
    channels = x.shape[2]
    fold = int(round(channels * fraction))
    if fold == 0:
        return x
    if 2 * fold > channels:
        raise ShapeMismatch(f"shift fraction {fraction} needs 2*{fold} <= {channels} channels")
    out = torch.zeros_like(x)
    out[:, :-1, :fold] = x[:, 1:, :fold]                    # pull from the future
    out[:, 1:, fold:2 * fold] = x[:, :-1, fold:2 * fold]    # pull from the past
    out[:, :, 2 * fold:] = x[:, :, 2 * fold:]
    return out


class PtsBackbone(nn.Module):
    """Per-frame 2-D conv stages, each preceded by a temporal shift; ends in
    a global spatial average giving one embedding per frame."""

    def __init__(self, in_channels: int, trunk_channels: tuple[int, ...],
                 shift_fraction: float):
        super().__init__()
        self.shift_fraction = shift_fraction
        stages = []
        channels = in_channels
        for width in trunk_channels:
            stages.append(nn.Sequential(
                nn.Conv2d(channels, width, kernel_size=3, stride=2, padding=1),
                nn.GroupNorm(4, width),
                nn.ReLU(),
            ))
            channels = width
        self.stages = nn.ModuleList(stages)
        self.output_dim = channels

    def forward(self, frames: torch.Tensor) -> torch.Tensor:
        if frames.dim() != 5:
            raise ShapeMismatch(f"expected (B, T, H, W, C), got {tuple(frames.shape)}")
        x = frames.permute(0, 1, 4, 2, 3)  # (B, T, C, H, W)
        for stage in self.stages:
            x = temporal_shift(x, self.shift_fraction)
            batch, steps = x.shape[:2]
            x = stage(x.flatten(0, 1)).unflatten(0, (batch, steps))
        return x.mean(dim=(-2, -1))


class GatedRecurrentLayer(nn.Module):
    """Reset-gated recurrence: r_t = sigma(W_r x_t + U_r h + b_r),
    h_t = tanh(W_n x_t + r_t * (U_n h) + b_n).

    Zeroing the recurrent matrices (weight_hidden) makes the layer purely
    per-frame.
    """

    def __init__(self, input_dim: int, hidden_dim: int,
                 generator: Optional[torch.Generator] = None):
        super().__init__()
        self.hidden_dim = hidden_dim
        self.weight_input = nn.Parameter(torch.empty(2 * hidden_dim, input_dim).normal_(
            0.0, input_dim ** -0.5, generator=generator))
        self.weight_hidden = nn.Parameter(torch.empty(2 * hidden_dim, hidden_dim).normal_(
            0.0, hidden_dim ** -0.5, generator=generator))
        self.bias = nn.Parameter(torch.zeros(2 * hidden_dim))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.dim() != 3:
            raise ShapeMismatch(f"expected (B, T, D), got {tuple(x.shape)}")
        batch, steps, _ = x.shape
        hidden_dim = self.hidden_dim
        gates_x = x @ self.weight_input.t() + self.bias  # (B, T, 2H)
        h = x.new_zeros(batch, hidden_dim)
        outputs = []
        for t in range(steps):
            gates_h = h @ self.weight_hidden.t()
            reset = torch.sigmoid(gates_x[:, t, :hidden_dim] + gates_h[:, :hidden_dim])
            h = torch.tanh(gates_x[:, t, hidden_dim:] + reset * gates_h[:, hidden_dim:])
            outputs.append(h)
        return torch.stack(outputs, dim=1)


class PtsHead(nn.Module):
    """Gated recurrent sequence layer (optionally bidirectional) followed by
    a per-frame linear projection to C+1 logits."""

    def __init__(self, input_dim: int, hidden_dim: int, num_classes: int,
                 bidirectional: bool, generator: Optional[torch.Generator] = None):
        super().__init__()
        self.forward_cell = GatedRecurrentLayer(input_dim, hidden_dim, generator)
        self.backward_cell = (GatedRecurrentLayer(input_dim, hidden_dim, generator)
                              if bidirectional else None)
        width = hidden_dim * (2 if bidirectional else 1)
        self.linear = nn.Linear(width, num_classes + 1)

    def forward(self, features: torch.Tensor) -> torch.Tensor:
        states = self.forward_cell(features)
        if self.backward_cell is not None:
            reverse = self.backward_cell(features.flip(1)).flip(1)
            states = torch.cat([states, reverse], dim=-1)
        return self.linear(states)


class PtsModel(SpottingModel):
    prediction_mode = "frame"
    source = "video"
    target_mode = FRAME_LABEL

    def __init__(self, config: ModelConfig):
        super().__init__(config)
        generator = seeded_generator(config.seed)
        self.backbone = PtsBackbone(3, config.trunk_channels, config.shift_fraction)
        self.head = PtsHead(self.backbone.output_dim, config.recurrent_hidden,
                            config.num_classes, config.bidirectional, generator)
        reseed_parameters(self.backbone, generator)
        # the linear readout was reseeded above; recurrent cells keep their draws
        reseed_parameters(self.head.linear, generator)

    def _logits(self, payload, pad_mask):
        features = self.backbone(payload)
        return self.head(features)

    def training_loss(self, payload, pad_mask, targets):
        logits = self._logits(payload, pad_mask)
        frame_classes = torch.as_tensor(targets.frame_classes)
        labels = frame_classes.argmax(dim=-1)
        keep = pad_mask.reshape(-1)
        flat_logits = logits.reshape(-1, logits.shape[-1])[keep]
        flat_labels = labels.reshape(-1)[keep]
        return F.cross_entropy(flat_logits, flat_labels)

    def frame_scores(self, payload, pad_mask):
        return torch.softmax(self._logits(payload, pad_mask), dim=-1)

    def embed(self, payload):
        """Per-frame embeddings at the decode rate (the backbone output)."""
        return self.backbone(payload)
