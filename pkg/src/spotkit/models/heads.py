"""Classification heads shared across models."""

from __future__ import annotations

from typing import Optional

import torch
from torch import nn

from ..errors import ShapeMismatch


def classification_head(neck_features: torch.Tensor, weight: torch.Tensor,
                        bias: torch.Tensor) -> torch.Tensor:
    """softmax(W x + b): a probability vector over classes + background."""
    if weight.shape[1] != neck_features.shape[-1]:
        raise ShapeMismatch(
            f"head expects dim {weight.shape[1]}, got {neck_features.shape[-1]}")
    return torch.softmax(neck_features @ weight.t() + bias, dim=-1)


class LinearClassHead(nn.Module):
    """Single linear projection to C+1 logits (background last)."""

    def __init__(self, input_dim: int, num_outputs: int,
                 generator: Optional[torch.Generator] = None):
        super().__init__()
        weight = torch.empty(num_outputs, input_dim).normal_(
            mean=0.0, std=input_dim ** -0.5, generator=generator)
        self.weight = nn.Parameter(weight)
        self.bias = nn.Parameter(torch.zeros(num_outputs))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[-1] != self.weight.shape[1]:
            raise ShapeMismatch(
                f"head expects dim {self.weight.shape[1]}, got {x.shape[-1]}")
        return x @ self.weight.t() + self.bias

    def scores(self, x: torch.Tensor) -> torch.Tensor:
        return torch.softmax(self.forward(x), dim=-1)
