"""Multi-Level Fusion Module (MLFM) with per-tap Weight Distributors."""
from __future__ import annotations

from typing import Sequence

import torch
from torch import nn


def _check_taps(taps: Sequence[torch.Tensor], n: int) -> None:
    if len(taps) != n:
        raise ValueError(f"expected {n} taps, got {len(taps)}")
    shape = taps[0].shape
    for t in taps[1:]:
        if t.shape != shape:
            raise ValueError(f"tap shapes differ: {tuple(shape)} vs {tuple(t.shape)}")


def fuse(taps: Sequence[torch.Tensor], weights: Sequence[torch.Tensor]) -> torch.Tensor:
    """Sum over taps of ``P_g * X_g + X_g`` with ``P_g`` of shape (B, D) broadcast spatially."""
    if len(taps) != len(weights):
        raise ValueError(f"{len(taps)} taps but {len(weights)} weight vectors")
    _check_taps(taps, len(taps))
    out = torch.zeros_like(taps[0])
    for x, p in zip(taps, weights):
        out = out + (p[:, :, None, None] * x + x)
    return out


class MLFM(nn.Module):
    """Aggregates four encoder taps; ``mode="concat"`` stops after the aggregation conv."""

    def __init__(self, dim: int, num_taps: int = 4, mode: str = "full"):
        super().__init__()
        if mode not in ("concat", "full"):
            raise ValueError(f"unknown MLFM mode {mode!r}")
        self.mode = mode
        self.num_taps = num_taps
        self.aggregate_conv = nn.Conv2d(num_taps * dim, dim, 1)
        self.distributors = None
        if mode == "full":
            self.distributors = nn.ModuleList(nn.Conv2d(dim, dim, 1) for _ in range(num_taps))

    def aggregate(self, taps: Sequence[torch.Tensor]) -> torch.Tensor:
        _check_taps(taps, self.num_taps)
        return self.aggregate_conv(torch.cat(list(taps), dim=1))

    def distribute_weights(self, xc: torch.Tensor) -> list[torch.Tensor]:
        # pooling after the conv; the conv is linear, so the order only matters numerically
        return [torch.sigmoid(wd(xc).mean(dim=(2, 3))) for wd in self.distributors]

    def forward(self, taps: Sequence[torch.Tensor]) -> torch.Tensor:
        xc = self.aggregate(taps)
        if self.mode == "concat":
            return xc
        return fuse(taps, self.distribute_weights(xc))
