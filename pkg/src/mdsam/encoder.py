"""ViT image encoder with Lightweight Multi-Scale Adapters (LMSA).

Feature maps travel between modules as ``(B, D, H, W)`` grids; inside a
transformer layer they are flattened to ``(B, N, D)`` tokens with N = H * W.
"""
from __future__ import annotations

from typing import NamedTuple, Sequence

import torch
import torch.nn.functional as F
from torch import nn

from .config import ConfigError, ModelConfig


def to_tokens(grid: torch.Tensor) -> torch.Tensor:
    """(B, D, H, W) -> (B, H*W, D)."""
    return grid.flatten(2).transpose(1, 2)


def to_grid(tokens: torch.Tensor, hw: tuple[int, int]) -> torch.Tensor:
    """(B, H*W, D) -> (B, D, H, W)."""
    h, w = hw
    b, n, d = tokens.shape
    if n != h * w:
        raise ValueError(f"cannot reshape {n} tokens into a {h}x{w} grid")
    return tokens.transpose(1, 2).reshape(b, d, h, w)


class _PoolBranch(nn.Module):
    # adaptive pool -> 1x1 conv + GELU -> depth-wise 3x3 + GELU -> bilinear upsample
    def __init__(self, in_dim: int, out_dim: int, scale: int):
        super().__init__()
        self.scale = scale
        self.proj = nn.Sequential(nn.Conv2d(in_dim, out_dim, 1), nn.GELU())
        self.dwconv = nn.Sequential(
            nn.Conv2d(out_dim, out_dim, 3, padding=1, groups=out_dim), nn.GELU()
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        size = x.shape[-2:]
        y = F.adaptive_avg_pool2d(x, self.scale)
        y = self.dwconv(self.proj(y))
        return F.interpolate(y, size=size, mode="bilinear", align_corners=False)


class LMSA(nn.Module):
    """Lightweight Multi-Scale Adapter.

    Bottleneck D -> D/r (ReLU), four pooled branches of width D/(4r) plus an
    optional depth-wise "local" branch on the unpooled map, a 1x1 fuse back to
    D/r and a zero-initialised up-projection added to the input.
    """

    def __init__(
        self,
        embed_dim: int,
        reduction: int = 3,
        pool_scales: Sequence[int] = (3, 6, 9, 12),
        zero_init_up: bool = True,
        use_local: bool = True,
    ):
        super().__init__()
        if embed_dim % (4 * reduction):
            raise ConfigError("adapter.reduction", "4 * reduction must divide embed_dim")
        if len(pool_scales) != 4:
            raise ConfigError("adapter.pool_scales", "exactly four pooling scales are required")
        self.embed_dim = embed_dim
        self.pool_scales = tuple(pool_scales)
        hidden = embed_dim // reduction
        branch = embed_dim // (4 * reduction)
        self.hidden_dim = hidden
        self.branch_dim = branch

        self.down = nn.Linear(embed_dim, hidden)
        self.branches = nn.ModuleList(_PoolBranch(hidden, branch, s) for s in self.pool_scales)
        self.local = (
            nn.Sequential(nn.Conv2d(hidden, hidden, 3, padding=1, groups=hidden), nn.GELU())
            if use_local
            else None
        )
        fuse_in = 4 * branch + (hidden if use_local else 0)
        self.fuse = nn.Sequential(nn.Conv2d(fuse_in, hidden, 1), nn.GELU())
        self.up = nn.Linear(hidden, embed_dim)
        if zero_init_up:
            nn.init.zeros_(self.up.weight)
            nn.init.zeros_(self.up.bias)

    def forward(self, x: torch.Tensor, hw: tuple[int, int] | None = None) -> torch.Tensor:
        """Accepts a grid ``(B, D, H, W)`` or tokens ``(B, N, D)`` with ``hw``; returns the same layout."""
        as_grid = x.dim() == 4
        if as_grid:
            hw = tuple(x.shape[-2:])
            tokens = to_tokens(x)
        else:
            if hw is None:
                raise ValueError("token input needs the grid size hw")
            tokens = x
        if tokens.shape[-1] != self.embed_dim:
            raise ConfigError("adapter", f"expected {self.embed_dim} channels, got {tokens.shape[-1]}")
        if max(self.pool_scales) > min(hw):
            raise ConfigError("adapter.pool_scales", f"scale {max(self.pool_scales)} exceeds grid {hw}")

        s = to_grid(F.relu(self.down(tokens)), hw)
        feats = [branch(s) for branch in self.branches]
        if self.local is not None:
            feats.append(self.local(s))
        fused = self.fuse(torch.cat(feats, dim=1))
        out = tokens + self.up(to_tokens(fused))
        return to_grid(out, hw) if as_grid else out


class Attention(nn.Module):
    def __init__(self, dim: int, num_heads: int):
        super().__init__()
        self.num_heads = num_heads
        self.scale = (dim // num_heads) ** -0.5
        self.qkv = nn.Linear(dim, dim * 3)
        self.proj = nn.Linear(dim, dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, n, d = x.shape
        qkv = self.qkv(x).reshape(b, n, 3, self.num_heads, d // self.num_heads)
        q, k, v = qkv.permute(2, 0, 3, 1, 4)
        attn = (q * self.scale) @ k.transpose(-2, -1)
        out = attn.softmax(dim=-1) @ v
        return self.proj(out.transpose(1, 2).reshape(b, n, d))


class MLPBlock(nn.Module):
    def __init__(self, dim: int, hidden: int, act: type[nn.Module] = nn.GELU):
        super().__init__()
        self.lin1 = nn.Linear(dim, hidden)
        self.lin2 = nn.Linear(hidden, dim)
        self.act = act()

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.lin2(self.act(self.lin1(x)))


class TransformerLayer(nn.Module):
    """Pre-norm ViT layer; the adapter (if any) runs before the first LayerNorm."""

    def __init__(self, dim: int, num_heads: int, mlp_ratio: float = 4.0, adapter: LMSA | None = None):
        super().__init__()
        self.adapter = adapter
        self.norm1 = nn.LayerNorm(dim, eps=1e-6)
        self.attn = Attention(dim, num_heads)
        self.norm2 = nn.LayerNorm(dim, eps=1e-6)
        self.mlp = MLPBlock(dim, int(dim * mlp_ratio))

    def forward(self, x: torch.Tensor, hw: tuple[int, int] | None = None) -> torch.Tensor:
        as_grid = x.dim() == 4
        if as_grid:
            hw = tuple(x.shape[-2:])
            x = to_tokens(x)
        if self.adapter is not None:
            x = self.adapter(x, hw)
        x = x + self.attn(self.norm1(x))
        x = x + self.mlp(self.norm2(x))
        return to_grid(x, hw) if as_grid else x


class PatchEmbed(nn.Module):
    def __init__(self, patch_size: int, in_chans: int, embed_dim: int):
        super().__init__()
        self.proj = nn.Conv2d(in_chans, embed_dim, patch_size, stride=patch_size)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.proj(x)


class EncoderOutput(NamedTuple):
    taps: list[torch.Tensor]
    final: torch.Tensor


class ImageEncoder(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        enc, ad = cfg.encoder, cfg.adapter
        self.patch_size = enc.patch_size
        self.tap_indices = tuple(enc.tap_indices)
        self.patch_embed = PatchEmbed(enc.patch_size, 3, enc.embed_dim)
        # learned absolute position embedding, stored channels-last like SAM
        self.pos_embed = nn.Parameter(torch.zeros(1, cfg.grid_size, cfg.grid_size, enc.embed_dim))
        nn.init.trunc_normal_(self.pos_embed, std=0.02)
        self.blocks = nn.ModuleList()
        for _ in range(enc.depth):
            adapter = None
            if ad.enabled:
                adapter = LMSA(enc.embed_dim, ad.reduction, ad.pool_scales, ad.zero_init_up, ad.use_local)
            self.blocks.append(TransformerLayer(enc.embed_dim, enc.num_heads, enc.mlp_ratio, adapter))

    def _pos_embed(self, hw: tuple[int, int]) -> torch.Tensor:
        pos = self.pos_embed
        if tuple(pos.shape[1:3]) != hw:
            pos = F.interpolate(pos.permute(0, 3, 1, 2), size=hw, mode="bilinear", align_corners=False)
            pos = pos.permute(0, 2, 3, 1)
        return pos.flatten(1, 2)

    def forward(self, image: torch.Tensor) -> EncoderOutput:
        h_in, w_in = image.shape[-2:]
        if h_in % self.patch_size or w_in % self.patch_size:
            raise ValueError(f"input size {h_in}x{w_in} is not divisible by patch size {self.patch_size}")
        x = self.patch_embed(image)
        hw = tuple(x.shape[-2:])
        x = to_tokens(x) + self._pos_embed(hw)
        taps = []
        for i, block in enumerate(self.blocks, start=1):
            x = block(x, hw)
            if i in self.tap_indices:
                taps.append(to_grid(x, hw))
        return EncoderOutput(taps=taps, final=to_grid(x, hw))
