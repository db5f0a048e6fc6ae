"""Seeded parameter initialization.

Model parameters must be a pure function of the config seed, so every
module is re-initialized from an explicit generator after construction
(replacing whatever the global RNG produced).
"""

from __future__ import annotations

import math

import torch
from torch import nn


def reseed_parameters(module: nn.Module, generator: torch.Generator) -> None:
    """Deterministically re-draw weights for every standard layer.

    Conv/linear weights get N(0, 1/fan_in) and zero bias; normalization
    layers get unit scale and zero shift. Custom layers that draw their
    own parameters from the generator are left alone.
    """
    for m in module.modules():
        if isinstance(m, (nn.Conv1d, nn.Conv2d, nn.Linear)):
            fan_in = m.weight.shape[1] * math.prod(m.weight.shape[2:])
            m.weight.data.normal_(mean=0.0, std=fan_in ** -0.5, generator=generator)
            if m.bias is not None:
                m.bias.data.zero_()
        elif isinstance(m, (nn.GroupNorm, nn.LayerNorm)):
            m.weight.data.fill_(1.0)
            m.bias.data.zero_()
