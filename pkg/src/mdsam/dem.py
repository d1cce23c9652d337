"""Detail Enhancement Module: upsampling primary branch + image-driven edge branch."""
from __future__ import annotations

from typing import NamedTuple

import torch
import torch.nn.functional as F
from torch import nn

from .config import DEMConfig


def avg_pool3(x: torch.Tensor) -> torch.Tensor:
    """3x3 stride-1 average pool; border windows average only the in-image cells."""
    return F.avg_pool2d(x, 3, stride=1, padding=1, count_include_pad=False)


def edge_residual(f: torch.Tensor) -> torch.Tensor:
    """High-frequency part of ``f``: the feature minus its local 3x3 mean."""
    return f - avg_pool3(f)


class ConvBNReLU(nn.Sequential):
    def __init__(self, in_ch: int, out_ch: int, kernel: int = 3):
        super().__init__(
            nn.Conv2d(in_ch, out_ch, kernel, padding=kernel // 2),
            nn.BatchNorm2d(out_ch),
            nn.ReLU(inplace=False),
        )


class ConvBNSigmoid(nn.Sequential):
    def __init__(self, in_ch: int, out_ch: int):
        super().__init__(nn.Conv2d(in_ch, out_ch, 1), nn.BatchNorm2d(out_ch), nn.Sigmoid())


class EdgeEnhancer(nn.Module):
    def __init__(self, dim: int):
        super().__init__()
        self.out = ConvBNSigmoid(dim, dim)

    def forward(self, f: torch.Tensor) -> torch.Tensor:
        return self.out(edge_residual(f)) + f


class MEEM(nn.Module):
    """Multi-scale Edge Enhancement Module.

    Builds a four-level pyramid by repeated (1x1 conv + BN + sigmoid, then 3x3
    average pool), edge-enhances levels 1..3 and fuses all four with a 1x1 conv.
    Resolution never changes.
    """

    def __init__(self, dim: int, levels: int = 4):
        super().__init__()
        self.in_conv = nn.Conv2d(dim, dim, 1)
        self.mid_convs = nn.ModuleList(ConvBNSigmoid(dim, dim) for _ in range(levels - 1))
        self.enhancers = nn.ModuleList(EdgeEnhancer(dim) for _ in range(levels - 1))
        self.out_conv = nn.Conv2d(levels * dim, dim, 1)

    def pyramid(self, f_local: torch.Tensor) -> tuple[list[torch.Tensor], list[torch.Tensor]]:
        f_e = [self.in_conv(f_local)]
        for conv in self.mid_convs:
            f_e.append(avg_pool3(conv(f_e[-1])))
        f_ee = [ee(f) for ee, f in zip(self.enhancers, f_e[1:])]
        return f_e, f_ee

    def forward(self, f_local: torch.Tensor) -> torch.Tensor:
        f_e, f_ee = self.pyramid(f_local)
        return self.out_conv(torch.cat([f_e[0], *f_ee], dim=1))


class DemOutput(NamedTuple):
    s_f: torch.Tensor
    f_re: torch.Tensor
    f_up: torch.Tensor
    f_local: torch.Tensor
    f_me: torch.Tensor | None
    f_de: torch.Tensor


class DEM(nn.Module):
    """``mode="no_meem"`` drops the MEEM so the auxiliary branch is the local feature alone."""

    def __init__(self, encoder_dim: int, decoder_dim: int, widths: DEMConfig, mode: str = "full"):
        super().__init__()
        if mode not in ("full", "no_meem"):
            raise ValueError(f"unknown DEM mode {mode!r}")
        self.mode = mode
        self.fd_proj = nn.Conv2d(encoder_dim, decoder_dim, 1)
        self.reduce = nn.Conv2d(2 * decoder_dim, widths.reduce_dim, 1)
        self.up1 = ConvBNReLU(widths.reduce_dim, widths.up_dim)
        self.up2 = ConvBNReLU(widths.up_dim, widths.up_dim)
        self.local = ConvBNReLU(3, widths.local_dim)
        self.meem = MEEM(widths.local_dim) if mode == "full" else None
        self.head = nn.Sequential(
            ConvBNReLU(widths.up_dim + widths.local_dim, widths.head_dim),
            ConvBNReLU(widths.head_dim, widths.head_dim),
            nn.Conv2d(widths.head_dim, 1, 1),
        )

    def project_final(self, final: torch.Tensor, size: tuple[int, int]) -> torch.Tensor:
        """F^d: last encoder output, bilinearly upsampled to decoder resolution, then 1x1 conv."""
        up = F.interpolate(final, size=size, mode="bilinear", align_corners=False)
        return self.fd_proj(up)

    def primary_branch(self, f_m: torch.Tensor, f_d: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        if f_m.shape[-2:] != f_d.shape[-2:]:
            raise ValueError(f"F^m {tuple(f_m.shape[-2:])} and F^d {tuple(f_d.shape[-2:])} differ in size")
        f_re = self.reduce(torch.cat([f_d, f_m], dim=1))
        x = self.up1(F.interpolate(f_re, scale_factor=2, mode="bilinear", align_corners=False))
        f_up = self.up2(F.interpolate(x, scale_factor=2, mode="bilinear", align_corners=False))
        return f_re, f_up

    def forward(self, image: torch.Tensor, f_m: torch.Tensor, f_d: torch.Tensor) -> DemOutput:
        f_re, f_up = self.primary_branch(f_m, f_d)
        if f_up.shape[-2:] != image.shape[-2:]:
            raise ValueError(
                f"primary branch lands at {tuple(f_up.shape[-2:])}, image is {tuple(image.shape[-2:])}"
            )
        f_local = self.local(image)
        if self.meem is not None:
            f_me = self.meem(f_local)
            aux = f_me + f_local
        else:
            f_me, aux = None, f_local
        f_de = torch.cat([f_up, aux], dim=1)
        return DemOutput(self.head(f_de), f_re, f_up, f_local, f_me, f_de)
