"""Train a toy model on synthetic blobs, then predict and score it.

Runs on a laptop CPU in well under a minute:

    python3 demos/quickstart.py
"""
import tempfile
from pathlib import Path

import torch

from mdsam import ModelConfig, TrainConfig, build_model, infer, params_count, train
from mdsam.data import make_synthetic_samples
from mdsam.training import evaluate_samples

torch.manual_seed(0)

# A toy configuration keeps every architectural piece (adapters, multi-level
# fusion, detail enhancement) but shrinks widths and depth.
cfg = ModelConfig.toy()
model = build_model(cfg)
print(f"toy model: {params_count(model):,} parameters, {params_count(model, 'frozen'):,} frozen")

# Synthetic images: a bright ellipse on a textured background, mask = ellipse.
train_set = make_synthetic_samples(8, cfg.resolution, seed=0)
test_set = make_synthetic_samples(4, cfg.resolution, seed=1)

print("before training:", {k: round(v, 3) for k, v in evaluate_samples(model, test_set).items()})

tcfg = TrainConfig(max_epochs=20, warmup_epochs=2, batch_size=2, seed=0)
with tempfile.TemporaryDirectory() as tmp:
    result = train(model, train_set, tcfg, Path(tmp))
    print(f"trained {result.epoch} epochs / {result.step} steps, last loss {result.log[-1]['loss']:.3f}")
    print("files written:", sorted(p.name for p in Path(tmp).iterdir()))

print("after training: ", {k: round(v, 3) for k, v in evaluate_samples(model, test_set).items()})

# Inference returns probabilities at the input size.
probs = infer(model, torch.stack([s.image for s in test_set]))
print("prediction tensor:", tuple(probs.shape), f"range [{probs.min():.2f}, {probs.max():.2f}]")
