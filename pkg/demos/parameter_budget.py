"""Where the parameters live, for the full-size model and each ablation variant.

Nothing is allocated: models are built on the meta device, so this runs
instantly even for the ViT-B sized encoder.

    python3 demos/parameter_budget.py
"""
import torch

from mdsam import MDSAM, ModelConfig, SCALE_VARIANTS, VARIANTS, params_count, variant_config


def describe(model):
    total = params_count(model)
    trainable = total - params_count(model, "frozen")
    return f"{total / 1e6:7.2f}M total  {trainable / 1e6:6.2f}M trainable  {params_count(model, 'lmsa') / 1e6:5.2f}M adapters"


base = ModelConfig.sam_b()
with torch.device("meta"):
    full = MDSAM(base)

print("full model at", base.resolution, "px")
for group in ("frozen", "pretrained", "new", "lmsa"):
    print(f"  {group:<10} {params_count(full, group):>12,}")
print()

# Module ablation: each row adds one component on top of the previous.
print("module variants")
for key, (label, _) in VARIANTS.items():
    with torch.device("meta"):
        print(f"  {label:<36} {describe(MDSAM(variant_config(base, key)))}")
print()

# Pooling-scale study: the adapter's branches change, everything else stays put.
print("adapter scale variants")
for key, (label, _) in SCALE_VARIANTS.items():
    with torch.device("meta"):
        print(f"  {label:<36} {describe(MDSAM(variant_config(base, key, SCALE_VARIANTS)))}")
