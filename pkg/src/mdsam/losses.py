"""BCE + IoU + L1 objective applied to both saliency outputs.

All terms take probabilities in [0, 1]; ``total_loss`` takes logits and
applies the sigmoid itself.
"""
from __future__ import annotations

import torch
import torch.nn.functional as F

EPS = 1e-7


def _check(pred: torch.Tensor, gt: torch.Tensor) -> None:
    if pred.shape != gt.shape:
        raise ValueError(f"prediction {tuple(pred.shape)} and ground truth {tuple(gt.shape)} differ")


def bce_loss(pred: torch.Tensor, gt: torch.Tensor) -> torch.Tensor:
    _check(pred, gt)
    p = pred.clamp(EPS, 1 - EPS)
    return -(gt * torch.log(p) + (1 - gt) * torch.log(1 - p)).mean()


def iou_loss(pred: torch.Tensor, gt: torch.Tensor) -> torch.Tensor:
    """Soft IoU with +1 smoothing, per image then averaged over the batch."""
    _check(pred, gt)
    dims = tuple(range(1, pred.dim()))
    inter = (pred * gt).sum(dim=dims)
    union = pred.sum(dim=dims) + gt.sum(dim=dims) - inter
    return (1 - (inter + 1) / (union + 1)).mean()


def l1_loss(pred: torch.Tensor, gt: torch.Tensor) -> torch.Tensor:
    _check(pred, gt)
    return (pred - gt).abs().mean()


def composite_loss(pred: torch.Tensor, gt: torch.Tensor) -> torch.Tensor:
    return bce_loss(pred, gt) + iou_loss(pred, gt) + l1_loss(pred, gt)


def loss_terms(pred: torch.Tensor, gt: torch.Tensor) -> dict[str, torch.Tensor]:
    return {"bce": bce_loss(pred, gt), "iou": iou_loss(pred, gt), "l1": l1_loss(pred, gt)}


def upsample_to(logits: torch.Tensor, gt: torch.Tensor) -> torch.Tensor:
    out = F.interpolate(logits, size=gt.shape[-2:], mode="bilinear", align_corners=False)
    if out.shape != gt.shape:
        raise ValueError(f"upsampled output {tuple(out.shape)} does not match ground truth {tuple(gt.shape)}")
    return out


def total_loss(s_f: torch.Tensor, s_m: torch.Tensor | None, gt: torch.Tensor) -> torch.Tensor:
    """composite(S^f) + composite(up(S^m)) on logits; with no side output only the first term."""
    loss = composite_loss(torch.sigmoid(s_f), gt)
    if s_m is not None:
        loss = loss + composite_loss(torch.sigmoid(upsample_to(s_m, gt)), gt)
    return loss
