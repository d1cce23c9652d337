"""Model assembly, parameter groups and the ablation variant table."""
from __future__ import annotations

from typing import NamedTuple

import torch
import torch.nn.functional as F
from torch import nn

from .config import ModelConfig
from .decoder import MaskDecoder
from .dem import DEM
from .encoder import ImageEncoder
from .fusion import MLFM

GROUPS = ("frozen", "pretrained", "new")

# Ablation rows: label, then overrides applied on top of a base config.
VARIANTS = {
    "a": ("(a) Full fine-tuning", {"adapter": {"enabled": False}, "encoder": {"freeze": False}, "mlfm": "off", "dem": "off"}),
    "b": ("(b) SAM+LMSA", {"mlfm": "off", "dem": "off"}),
    "c": ("(c) SAM+LMSA+MLFM*", {"mlfm": "concat", "dem": "off"}),
    "d": ("(d) SAM+LMSA+MLFM", {"mlfm": "full", "dem": "off"}),
    "e": ("(e) SAM+LMSA+MLFM+DEM*", {"mlfm": "full", "dem": "no_meem"}),
    "f": ("(f) SAM+LMSA+MLFM+DEM", {"mlfm": "full", "dem": "full"}),
}

# Pooling-scale / local-branch study on the full model.
SCALE_VARIANTS = {
    "a": ("(a) scales 1,2,3,6 without local", {"adapter": {"pool_scales": [1, 2, 3, 6], "use_local": False}}),
    "b": ("(b) scales 3,6,9,12 without local", {"adapter": {"pool_scales": [3, 6, 9, 12], "use_local": False}}),
    "c": ("(c) scales 9,9,9,9 with local", {"adapter": {"pool_scales": [9, 9, 9, 9], "use_local": True}}),
    "d": ("(d) scales 3,5,7,9 with local", {"adapter": {"pool_scales": [3, 5, 7, 9], "use_local": True}}),
    "e": ("(e) scales 3,6,9,12 with local", {"adapter": {"pool_scales": [3, 6, 9, 12], "use_local": True}}),
}


def variant_config(base: ModelConfig, key: str, table: dict = VARIANTS) -> ModelConfig:
    _, overrides = table[key]
    return type(base).from_dict(_merge(base.to_dict(), overrides))


def _merge(base: dict, extra: dict) -> dict:
    out = dict(base)
    for k, v in extra.items():
        out[k] = _merge(out[k], v) if isinstance(v, dict) and isinstance(out.get(k), dict) else v
    return out


class ModelOutput(NamedTuple):
    s_f: torch.Tensor  # final saliency logits at input resolution
    s_m: torch.Tensor | None  # decoder side-output logits at 4x grid; None when the DEM is off


class MDSAM(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        d = cfg.encoder.embed_dim
        self.encoder = ImageEncoder(cfg)
        self.mlfm = MLFM(d, mode=cfg.mlfm) if cfg.mlfm != "off" else None
        self.decoder = MaskDecoder(d, cfg.decoder)
        self.dem = DEM(d, self.decoder.out_dim, cfg.dem_widths, cfg.dem) if cfg.dem != "off" else None

    def forward(self, image: torch.Tensor) -> ModelOutput:
        enc = self.encoder(image)
        embedding = self.mlfm(enc.taps) if self.mlfm is not None else enc.final
        dec = self.decoder(embedding)
        if self.dem is None:
            s_f = F.interpolate(dec.s_m, size=image.shape[-2:], mode="bilinear", align_corners=False)
            return ModelOutput(s_f, None)
        f_d = self.dem.project_final(enc.final, dec.f_m.shape[-2:])
        return ModelOutput(self.dem(image, dec.f_m, f_d).s_f, dec.s_m)

    def param_groups(self) -> dict[str, list[tuple[str, nn.Parameter]]]:
        """Partition parameters into frozen / pretrained / new.

        Base encoder weights (and SAM's neck) are frozen unless the config
        unfreezes the encoder, in which case they join the pretrained group
        with the decoder. Adapters, MLFM, DEM and the saliency head are new.
        """
        groups = {g: [] for g in GROUPS}
        encoder_group = "frozen" if self.cfg.encoder.freeze else "pretrained"
        for name, p in self.named_parameters():
            if ".adapter." in name or name.startswith(("mlfm.", "dem.", "decoder.saliency_head.")):
                groups["new"].append((name, p))
            elif name.startswith(("encoder.", "decoder.neck.")):
                groups[encoder_group].append((name, p))
            else:
                groups["pretrained"].append((name, p))
        return groups

    def apply_freeze(self) -> None:
        for name, p in self.param_groups()["frozen"]:
            p.requires_grad_(False)


def build_model(cfg: ModelConfig) -> MDSAM:
    """Build the model with parameters seeded from ``cfg.seed`` and frozen params marked."""
    cfg.validate()
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(cfg.seed)
        model = MDSAM(cfg)
    model.apply_freeze()
    return model


def params_count(model: MDSAM, group: str | None = None) -> int:
    if group is None:
        return sum(p.numel() for p in model.parameters())
    if group == "lmsa":
        return sum(p.numel() for n, p in model.named_parameters() if ".adapter." in n)
    if group not in GROUPS:
        raise ValueError(f"unknown group {group!r}; expected one of {GROUPS + ('lmsa',)}")
    return sum(p.numel() for _, p in model.param_groups()[group])
