"""Sequential row/column spatial attention over a latent image.

The block attends first among the positions of each row, then (after a
transpose) among the positions of each column, and applies ONE residual
connection around the combined pair:

    x      = x W_e + b_e            (embedding, once, before block 1)
    x_att  = MHA(QKV = x)           (per-row attention)
    x_att' = MHA(QKV = permute(x_att))   (per-column attention)
    x      = LayerNorm(x + permute(x_att'))
    x      = LayerNorm(x + P-FFN(x))

A latent image is a tensor (..., w_l, h_l, d): w_l rows of h_l positions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn as nn

from .nncore import FeedForward, LayerNorm, MultiHeadAttention


@dataclass(frozen=True)
class SeqSpatialConfig:
    latent_width: int
    latent_height: int
    d: int = 64
    heads: int = 4
    ffn_hidden: int = 128
    num_blocks: int = 2
    positional_encoding: bool = True
    d_in: int | None = None  # input depth; defaults to d

    def __post_init__(self):
        if self.d % self.heads != 0:
            raise ValueError("d must be divisible by heads")
        if self.latent_width < 1 or self.latent_height < 1:
            raise ValueError("latent dims must be >= 1")


def positional_encoding_grid(rows: int, cols: int, d: int,
                             dtype=torch.float32) -> torch.Tensor:
    """Sinusoidal 2-D encoding: first d/2 channels encode the row index, the
    last d/2 the column index, each with the standard 1-D sin/cos formula."""
    if d % 2 != 0:
        raise ValueError("model dim must be even for split row/column encoding")
    half = d // 2

    def encode_1d(n: int) -> torch.Tensor:
        pos = torch.arange(n, dtype=dtype).unsqueeze(1)
        i = torch.arange(half, dtype=dtype).unsqueeze(0)
        angle = pos / (10000.0 ** (2 * torch.div(i, 2, rounding_mode="floor") / half))
        enc = torch.zeros(n, half, dtype=dtype)
        enc[:, 0::2] = torch.sin(angle[:, 0::2])
        enc[:, 1::2] = torch.cos(angle[:, 1::2])
        return enc

    row_enc = encode_1d(rows)  # (rows, half)
    col_enc = encode_1d(cols)  # (cols, half)
    grid = torch.zeros(rows, cols, d, dtype=dtype)
    grid[:, :, :half] = row_enc.unsqueeze(1)
    grid[:, :, half:] = col_enc.unsqueeze(0)
    return grid


def positional_encode(x: torch.Tensor) -> torch.Tensor:
    """Add the sinusoidal grid encoding; x is (..., rows, cols, d)."""
    rows, cols, d = x.shape[-3:]
    return x + positional_encoding_grid(rows, cols, d, dtype=x.dtype).to(x.device)


class RowColAttentionBlock(nn.Module):
    """One sequential-attention block; records attention weights on request."""

    def __init__(self, d: int, heads: int, ffn_hidden: int):
        super().__init__()
        self.row_mha = MultiHeadAttention(d, heads)
        self.col_mha = MultiHeadAttention(d, heads)
        self.norm1 = LayerNorm(d)
        self.norm2 = LayerNorm(d)
        self.ffn = FeedForward(d, ffn_hidden)

    def row_attention(self, x: torch.Tensor, recorder: list | None = None) -> torch.Tensor:
        """Self-attention over the positions of each row independently."""
        out, weights = self.row_mha(x)
        if recorder is not None:
            recorder.append(("row", weights.detach()))
        return out

    def col_attention(self, x_att: torch.Tensor, recorder: list | None = None) -> torch.Tensor:
        """Self-attention over each column, via transpose -> row attention -> transpose."""
        permuted = x_att.transpose(-3, -2)
        out, weights = self.col_mha(permuted)
        if recorder is not None:
            recorder.append(("col", weights.detach()))
        return out  # still in permuted layout; caller permutes back

    def forward(self, x: torch.Tensor, recorder: list | None = None) -> torch.Tensor:
        x_att = self.row_attention(x, recorder)
        x_att_t = self.col_attention(x_att, recorder)
        x = self.norm1(x + x_att_t.transpose(-3, -2))
        x = self.norm2(x + self.ffn(x))
        return x


class SequentialSpatialTransformer(nn.Module):
    """Embedding + positional encoding + a stack of row/column attention blocks."""

    def __init__(self, cfg: SeqSpatialConfig):
        super().__init__()
        self.cfg = cfg
        d_in = cfg.d_in if cfg.d_in is not None else cfg.d
        self.embed = nn.Linear(d_in, cfg.d)
        self.blocks = nn.ModuleList([
            RowColAttentionBlock(cfg.d, cfg.heads, cfg.ffn_hidden)
            for _ in range(cfg.num_blocks)
        ])

    def forward(self, x: torch.Tensor, recorder: list | None = None) -> torch.Tensor:
        x = self.embed(x)
        if self.cfg.positional_encoding:
            x = positional_encode(x)
        for block in self.blocks:
            x = block(x, recorder)
        return x
