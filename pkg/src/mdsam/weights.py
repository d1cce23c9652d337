"""Importing pretrained weights from ``.npz`` or ``.safetensors`` archives."""
from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from .model import MDSAM

log = logging.getLogger(__name__)


class WeightImportError(ValueError):
    pass


@dataclass
class ImportReport:
    loaded: list[str] = field(default_factory=list)
    fresh: list[str] = field(default_factory=list)  # kept at their initial values
    ignored: list[str] = field(default_factory=list)  # dropped by the key converter


def read_archive(path) -> dict[str, torch.Tensor]:
    path = Path(path)
    if path.suffix == ".npz":
        with np.load(path) as data:
            return {k: torch.from_numpy(np.array(data[k])) for k in data.files}
    if path.suffix == ".safetensors":
        from safetensors.torch import load_file
        return load_file(str(path))
    raise WeightImportError(f"{path}: unsupported weight format (use .npz or .safetensors)")


_SAM_RULES = [
    (r"^image_encoder\.blocks\.\d+\.attn\.rel_pos_[hw]$", None),
    (r"^image_encoder\.neck\.(.*)$", r"decoder.neck.\1"),
    (r"^image_encoder\.(.*)$", r"encoder.\1"),
    (r"^prompt_encoder\.pe_layer\.(.*)$", r"decoder.pe_layer.\1"),
    (r"^prompt_encoder\..*$", None),
    (r"^mask_decoder\.(iou_token|iou_prediction_head)\..*$", None),
    (r"^mask_decoder\.output_hypernetworks_mlps\.0\.(.*)$", r"decoder.output_hypernetworks_mlp.\1"),
    (r"^mask_decoder\.output_hypernetworks_mlps\.\d+\..*$", None),
    (r"^mask_decoder\.(.*)$", r"decoder.\1"),
]


def convert_sam_keys(state: dict[str, torch.Tensor]) -> tuple[dict[str, torch.Tensor], list[str]]:
    """Rename a SAM checkpoint's keys to this model's layout.

    Prompt-encoder parts other than the positional encoding, the IoU head and
    the extra multimask outputs have no counterpart and are dropped; only the
    first mask token is kept.
    """
    out, dropped = {}, []
    for key, value in state.items():
        for pattern, repl in _SAM_RULES:
            if re.match(pattern, key):
                if repl is None:
                    dropped.append(key)
                else:
                    out[re.sub(pattern, repl, key)] = value
                break
        else:
            out[key] = value
    if "decoder.mask_tokens.weight" in out:
        out["decoder.mask_tokens.weight"] = out["decoder.mask_tokens.weight"][:1]
    return out, dropped


def resize_pos_embed(pos: torch.Tensor, grid: tuple[int, int]) -> torch.Tensor:
    """Bilinear resize of a (1, H, W, D) position table."""
    if tuple(pos.shape[1:3]) == tuple(grid):
        return pos
    x = pos.permute(0, 3, 1, 2).float()
    x = F.interpolate(x, size=grid, mode="bilinear", align_corners=False)
    return x.permute(0, 2, 3, 1).to(pos.dtype)


def load_pretrained(model: MDSAM, path, sam_layout: bool = False) -> ImportReport:
    """Copy matching weights into ``model``.

    Keys the model does not have raise :class:`WeightImportError`; model
    parameters missing from the archive (adapters and new modules, typically)
    keep their fresh initialisation.
    """
    state = read_archive(path)
    report = ImportReport()
    if sam_layout:
        state, report.ignored = convert_sam_keys(state)
    own = model.state_dict()
    unknown = sorted(set(state) - set(own))
    if unknown:
        raise WeightImportError(f"{len(unknown)} unknown key(s), e.g. {unknown[:3]}")
    with torch.no_grad():
        for key, target in own.items():
            if key not in state:
                report.fresh.append(key)
                continue
            value = state[key]
            if key == "encoder.pos_embed":
                value = resize_pos_embed(value, tuple(target.shape[1:3]))
            if value.shape != target.shape:
                raise WeightImportError(f"{key}: shape {tuple(value.shape)} != {tuple(target.shape)}")
            target.copy_(value.to(target.dtype))
            report.loaded.append(key)
    log.info("imported %d tensors, %d left at init", len(report.loaded), len(report.fresh))
    return report


def export_weights(model: MDSAM, path) -> Path:
    """Write the model's state as ``.npz`` or ``.safetensors`` (by suffix)."""
    path = Path(path)
    state = {k: v.detach().cpu().contiguous() for k, v in model.state_dict().items()}
    if path.suffix == ".npz":
        np.savez(path, **{k: v.numpy() for k, v in state.items()})
    elif path.suffix == ".safetensors":
        from safetensors.torch import save_file
        save_file({k: v.clone() for k, v in state.items()}, str(path))
    else:
        raise WeightImportError(f"{path}: unsupported weight format (use .npz or .safetensors)")
    return path
