"""Masked attention primitives: multi-head attention-on-attention stacks and
plain transformer layers for cross-modal fusion.

Padding uses additive -inf key masks, so a padded position's contribution is
exactly zero and altering padded content cannot change any valid output.
Fully padded query rows would produce NaN softmax; their attention output is
replaced by zeros after the fact.
"""

from __future__ import annotations

import torch
from torch import Tensor, nn


class MaskedSelfAttention(nn.Module):
    """Standard multi-head self-attention with key padding masks."""

    def __init__(self, dim: int, n_heads: int) -> None:
        super().__init__()
        if dim % n_heads != 0:
            raise ValueError(f"dim {dim} not divisible by heads {n_heads}")
        self.dim = dim
        self.n_heads = n_heads
        self.head_dim = dim // n_heads
        self.q = nn.Linear(dim, dim)
        self.k = nn.Linear(dim, dim)
        self.v = nn.Linear(dim, dim)
        self.out = nn.Linear(dim, dim)

    def forward(self, x: Tensor, valid: Tensor) -> Tensor:
        b, length, _ = x.shape
        h, hd = self.n_heads, self.head_dim

        def heads(t: Tensor) -> Tensor:
            return t.view(b, length, h, hd).transpose(1, 2)  # (B, H, L, hd)

        q, k, v = heads(self.q(x)), heads(self.k(x)), heads(self.v(x))
        scores = q @ k.transpose(-1, -2) / hd**0.5
        bias = torch.zeros(b, 1, 1, length, dtype=x.dtype, device=x.device)
        bias = bias.masked_fill(~valid[:, None, None, :], float("-inf"))
        weights = torch.softmax(scores + bias, dim=-1)
        # a row with no valid key divides by zero above; zero it out
        weights = torch.nan_to_num(weights, nan=0.0)
        attended = (weights @ v).transpose(1, 2).reshape(b, length, self.dim)
        return self.out(attended)


class AoALayer(nn.Module):
    """Self-attention whose output is re-gated against the query: an
    information vector and a sigmoid gate are both computed from the
    concatenated (query, attended) pair, then combined elementwise, with a
    residual connection and layer normalization."""

    def __init__(self, dim: int, n_heads: int) -> None:
        super().__init__()
        self.attention = MaskedSelfAttention(dim, n_heads)
        self.info = nn.Linear(2 * dim, dim)
        self.gate = nn.Linear(2 * dim, dim)
        self.norm = nn.LayerNorm(dim)

    def forward(self, x: Tensor, valid: Tensor) -> Tensor:
        attended = self.attention(x, valid)
        joint = torch.cat([x, attended], dim=-1)
        gated = torch.sigmoid(self.gate(joint)) * self.info(joint)
        return self.norm(x + gated)


class AoAEncoder(nn.Module):
    """Stack of AoA layers over a padded sequence.

    With `with_cls` a learned summary token is prepended and its output
    returned; otherwise the output is the mean over valid positions.
    """

    def __init__(self, dim: int, n_heads: int, n_layers: int, *, with_cls: bool) -> None:
        super().__init__()
        self.layers = nn.ModuleList(AoALayer(dim, n_heads) for _ in range(n_layers))
        self.with_cls = with_cls
        self.cls = nn.Parameter(torch.zeros(dim)) if with_cls else None

    def forward(self, x: Tensor, valid: Tensor) -> Tensor:
        if not bool(valid.any(dim=1).all()):
            raise ValueError("every sequence in the batch must have a valid position")
        b = x.shape[0]
        if self.with_cls:
            x = torch.cat([self.cls.expand(b, 1, -1), x], dim=1)
            valid = torch.cat([valid.new_ones(b, 1), valid], dim=1)
        for layer in self.layers:
            x = layer(x, valid)
        if self.with_cls:
            return x[:, 0]
        weights = valid.to(x.dtype)
        return (x * weights[:, :, None]).sum(dim=1) / weights.sum(dim=1, keepdim=True)


class TransformerLayer(nn.Module):
    """Post-norm transformer encoder layer (attention + feed-forward)."""

    def __init__(self, dim: int, n_heads: int, ffn_ratio: int = 4) -> None:
        super().__init__()
        self.attention = MaskedSelfAttention(dim, n_heads)
        self.norm1 = nn.LayerNorm(dim)
        self.ffn = nn.Sequential(
            nn.Linear(dim, ffn_ratio * dim),
            nn.GELU(),
            nn.Linear(ffn_ratio * dim, dim),
        )
        self.norm2 = nn.LayerNorm(dim)

    def forward(self, x: Tensor, valid: Tensor) -> Tensor:
        x = self.norm1(x + self.attention(x, valid))
        return self.norm2(x + self.ffn(x))
