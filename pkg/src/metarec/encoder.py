"""Causal transformer encoder for next-item prediction.

Left-padded id rows go through item + position embeddings, ``blocks``
pre-norm attention blocks with a causal mask that also hides pad keys,
and a final layer norm.  The sequence representation is the last position,
which under left padding is always the most recent item.  Scoring reuses
the item embedding table, so logits are inner products with item vectors.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Optional

import torch
from torch import nn

from .corpus import PAD_ID
from .rng import torch_generator


@dataclass(frozen=True)
class EncoderConfig:
    n_items: int
    d: int = 64
    n: int = 50
    blocks: int = 2
    heads: int = 2
    dropout: float = 0.5

    def __post_init__(self) -> None:
        if self.n_items < 1:
            raise ValueError(f"n_items must be >= 1, got {self.n_items}")
        if self.d % self.heads != 0:
            raise ValueError(f"d={self.d} must be divisible by heads={self.heads}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must be in [0, 1), got {self.dropout}")


class EncoderOutput(NamedTuple):
    hidden: torch.Tensor  # [B, n, d] all positions after the final norm
    final: torch.Tensor  # [B, d] last position
    attention: Optional[list[torch.Tensor]]  # per block [B, heads, n, n]


def seeded_dropout(
    x: torch.Tensor, p: float, gen: Optional[torch.Generator]
) -> torch.Tensor:
    """Inverted dropout driven by an explicit generator; identity when the
    generator is absent (evaluation) or p == 0."""
    if gen is None or p <= 0.0:
        return x
    keep = torch.rand(x.shape, generator=gen, dtype=x.dtype, device=x.device) >= p
    return x * keep.to(x.dtype) / (1.0 - p)


def _init_linear(layer: nn.Linear, gen: torch.Generator) -> None:
    fan_out, fan_in = layer.weight.shape
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    with torch.no_grad():
        layer.weight.uniform_(-bound, bound, generator=gen)
        if layer.bias is not None:
            layer.bias.zero_()


class CausalSelfAttention(nn.Module):
    def __init__(self, d: int, heads: int, dtype: torch.dtype) -> None:
        super().__init__()
        self.heads = heads
        self.head_dim = d // heads
        self.query = nn.Linear(d, d, dtype=dtype)
        self.key = nn.Linear(d, d, dtype=dtype)
        self.value = nn.Linear(d, d, dtype=dtype)
        self.out = nn.Linear(d, d, dtype=dtype)

    def forward(
        self,
        x: torch.Tensor,
        allowed: torch.Tensor,
        dropout: float,
        gen: Optional[torch.Generator],
        collect: bool,
    ) -> tuple[torch.Tensor, Optional[torch.Tensor]]:
        batch, n, d = x.shape
        def split(t: torch.Tensor) -> torch.Tensor:
            return t.view(batch, n, self.heads, self.head_dim).transpose(1, 2)

        q, k, v = split(self.query(x)), split(self.key(x)), split(self.value(x))
        scores = q @ k.transpose(-2, -1) / math.sqrt(self.head_dim)
        scores = scores.masked_fill(~allowed[:, None, :, :], float("-inf"))
        weights = torch.softmax(scores, dim=-1)
        dropped = seeded_dropout(weights, dropout, gen)
        context = (dropped @ v).transpose(1, 2).reshape(batch, n, d)
        return self.out(context), (weights if collect else None)


class EncoderBlock(nn.Module):
    def __init__(self, d: int, heads: int, dtype: torch.dtype) -> None:
        super().__init__()
        self.attn_norm = nn.LayerNorm(d, dtype=dtype)
        self.attn = CausalSelfAttention(d, heads, dtype)
        self.ffn_norm = nn.LayerNorm(d, dtype=dtype)
        self.ffn_in = nn.Linear(d, d, dtype=dtype)
        self.ffn_out = nn.Linear(d, d, dtype=dtype)

    def forward(
        self,
        x: torch.Tensor,
        allowed: torch.Tensor,
        dropout: float,
        gen: Optional[torch.Generator],
        collect: bool,
    ) -> tuple[torch.Tensor, Optional[torch.Tensor]]:
        attn_out, weights = self.attn(
            self.attn_norm(x), allowed, dropout, gen, collect
        )
        x = x + seeded_dropout(attn_out, dropout, gen)
        hidden = torch.relu(self.ffn_in(self.ffn_norm(x)))
        hidden = seeded_dropout(hidden, dropout, gen)
        x = x + seeded_dropout(self.ffn_out(hidden), dropout, gen)
        return x, weights


class SequenceEncoder(nn.Module):
    """Backbone encoder; all parameters live here (item table included)."""

    def __init__(
        self,
        cfg: EncoderConfig,
        seed: int,
        dtype: torch.dtype = torch.float32,
    ) -> None:
        super().__init__()
        self.cfg = cfg
        # Row 0 is padding, row n_items + 1 the mask token; neither is scored.
        self.item_embeddings = nn.Embedding(cfg.n_items + 2, cfg.d, dtype=dtype)
        self.position_embeddings = nn.Embedding(cfg.n, cfg.d, dtype=dtype)
        self.blocks = nn.ModuleList(
            EncoderBlock(cfg.d, cfg.heads, dtype) for _ in range(cfg.blocks)
        )
        self.final_norm = nn.LayerNorm(cfg.d, dtype=dtype)
        self._reset_parameters(seed)

    @property
    def mask_id(self) -> int:
        return self.cfg.n_items + 1

    def _reset_parameters(self, seed: int) -> None:
        gen = torch_generator(seed)
        with torch.no_grad():
            self.item_embeddings.weight.normal_(0.0, 0.02, generator=gen)
            self.position_embeddings.weight.normal_(0.0, 0.02, generator=gen)
        for block in self.blocks:
            for layer in (
                block.attn.query,
                block.attn.key,
                block.attn.value,
                block.attn.out,
                block.ffn_in,
                block.ffn_out,
            ):
                _init_linear(layer, gen)

    def embed(self, ids: torch.Tensor) -> torch.Tensor:
        """Item plus learned position embeddings, pads included."""
        if ids.shape[1] != self.cfg.n:
            raise ValueError(
                f"expected rows of width n={self.cfg.n}, got {ids.shape[1]}"
            )
        positions = torch.arange(self.cfg.n, device=ids.device)
        return self.item_embeddings(ids) + self.position_embeddings(positions)

    def _allowed_mask(self, ids: torch.Tensor) -> torch.Tensor:
        n = ids.shape[1]
        causal = torch.tril(torch.ones(n, n, dtype=torch.bool, device=ids.device))
        key_ok = ids.ne(PAD_ID)[:, None, :]
        allowed = causal[None, :, :] & key_ok
        # Every query may attend to itself, so all-pad rows stay finite.
        diag = torch.eye(n, dtype=torch.bool, device=ids.device)
        return allowed | diag[None, :, :]

    def forward(
        self,
        ids: torch.Tensor,
        dropout_gen: Optional[torch.Generator] = None,
        collect_attention: bool = False,
    ) -> EncoderOutput:
        """Encode left-padded rows; pass a generator to enable dropout."""
        x = seeded_dropout(self.embed(ids), self.cfg.dropout, dropout_gen)
        allowed = self._allowed_mask(ids)
        collected: list[torch.Tensor] = []
        for block in self.blocks:
            x, weights = block(
                x, allowed, self.cfg.dropout, dropout_gen, collect_attention
            )
            if collect_attention:
                collected.append(weights)
        hidden = self.final_norm(x)
        return EncoderOutput(
            hidden=hidden,
            final=hidden[:, -1, :],
            attention=collected if collect_attention else None,
        )

    def score_items(self, final: torch.Tensor) -> torch.Tensor:
        """Logits over real items only; pad and mask rows are excluded, so
        column ``i`` scores dense item id ``i + 1``."""
        table = self.item_embeddings.weight[1 : self.cfg.n_items + 1]
        return final @ table.transpose(0, 1)
