"""Learnable model-level view augmenters.

Two independent 3-layer MLPs map the encoder's final vectors of the two
data-augmented views to model-augmented views.  In the shared variant the
second augmenter aliases the first, so gradients accumulate into one
parameter set.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
from torch import nn

from .rng import torch_generator


@dataclass
class ViewQuadruple:
    """The four contrastive views of one batch: data-augmented ``h1``/``h2``
    and their model-augmented counterparts ``z1 = w1(h1)``, ``z2 = w2(h2)``."""

    h1: torch.Tensor
    h2: torch.Tensor
    z1: torch.Tensor
    z2: torch.Tensor


class ViewAugmenter(nn.Module):
    """Fully connected d -> d -> d -> d map, smooth rectifier between layers,
    no output activation and no dropout."""

    def __init__(self, d: int, gen: torch.Generator, dtype: torch.dtype) -> None:
        super().__init__()
        self.layers = nn.ModuleList(nn.Linear(d, d, dtype=dtype) for _ in range(3))
        bound = math.sqrt(6.0 / (2 * d))
        with torch.no_grad():
            for layer in self.layers:
                layer.weight.uniform_(-bound, bound, generator=gen)
                layer.bias.zero_()

    def forward(self, h: torch.Tensor) -> torch.Tensor:
        x = h
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1:
                x = torch.nn.functional.gelu(x)
        return x


class AugmenterPair(nn.Module):
    """Holds both augmenters; ``share=True`` makes the second alias the first."""

    def __init__(
        self,
        d: int,
        share: bool = False,
        seed: int = 0,
        dtype: torch.dtype = torch.float32,
    ) -> None:
        super().__init__()
        self.d = d
        self.share = share
        gen = torch_generator(seed)
        self.first = ViewAugmenter(d, gen, dtype)
        self.second = self.first if share else ViewAugmenter(d, gen, dtype)

    def forward(self, h1: torch.Tensor, h2: torch.Tensor) -> ViewQuadruple:
        return augment_views(h1, h2, self)


def augment_views(
    h1: torch.Tensor, h2: torch.Tensor, params: AugmenterPair
) -> ViewQuadruple:
    """Build the view quadruple; ``h1``/``h2`` pass through unchanged."""
    for name, h in (("h1", h1), ("h2", h2)):
        if h.ndim != 2 or h.shape[1] != params.d:
            raise ValueError(
                f"{name} must have shape [batch, {params.d}], got {tuple(h.shape)}"
            )
    return ViewQuadruple(h1=h1, h2=h2, z1=params.first(h1), z2=params.second(h2))


def init_augmenters(
    d: int,
    share: bool = False,
    seed: int = 0,
    dtype: torch.dtype = torch.float32,
) -> AugmenterPair:
    """Randomly initialize the pair; with ``share=False`` the two parameter
    sets come from consecutive draws of the same stream, so they differ."""
    if d < 1:
        raise ValueError(f"d must be >= 1, got {d}")
    return AugmenterPair(d=d, share=share, seed=seed, dtype=dtype)
