"""Training loop, inference, checkpoints and the ablation runner."""
from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
import torch.nn.functional as F
from safetensors.torch import load_file, save_file

from . import metrics
from .config import ModelConfig, TrainConfig, config_hash
from .data import Sample, augment_samples, batch
from .losses import loss_terms, upsample_to
from .model import MDSAM, build_model, params_count

log = logging.getLogger(__name__)

FORMAT_VERSION = 1
LOG_FIELDS = ("step", "epoch", "lr_pretrained", "lr_new", "loss",
              "f_bce", "f_iou", "f_l1", "m_bce", "m_iou", "m_l1", "grad_norm")


class TrainingDiverged(RuntimeError):
    def __init__(self, step: int, lr: dict[str, float], grad_norm: float, loss: float):
        super().__init__(f"non-finite loss {loss} at step {step} (lr={lr}, grad-norm={grad_norm:.4g})")
        self.step, self.lr, self.grad_norm = step, lr, grad_norm


# -- checkpoints ---------------------------------------------------------------

@dataclass
class Checkpoint:
    model_config: ModelConfig
    model_state: dict[str, torch.Tensor]
    train_config: TrainConfig | None = None
    optimizer_state: dict | None = None
    epoch: int = 0
    step: int = 0
    rng_state: torch.Tensor | None = None

    def build(self) -> MDSAM:
        model = build_model(self.model_config)
        model.load_state_dict(self.model_state)
        return model


def save_checkpoint(path, model: MDSAM, optimizer: torch.optim.Optimizer | None = None, *,
                    epoch: int = 0, step: int = 0, train_config: TrainConfig | None = None,
                    rng_state: torch.Tensor | None = None) -> Path:
    """Single safetensors file: arrays under ``model.*``/``optim.*``/``rng.*``, JSON metadata header."""
    opt_state = optimizer.state_dict() if optimizer is not None else None
    return _write_checkpoint(Path(path), Checkpoint(
        model.cfg, model.state_dict(), train_config, opt_state, epoch, step,
        torch.get_rng_state() if rng_state is None else rng_state))


def _write_checkpoint(path: Path, ckpt: Checkpoint) -> Path:
    tensors = {f"model.{k}": v.detach().cpu().contiguous().clone() for k, v in ckpt.model_state.items()}
    meta = {
        "format_version": FORMAT_VERSION,
        "config_hash": ckpt.model_config.hash(),
        "model_config": ckpt.model_config.to_dict(),
        "train_config": ckpt.train_config.to_dict() if ckpt.train_config else None,
        "epoch": ckpt.epoch,
        "step": ckpt.step,
        "optimizer": None,
    }
    if ckpt.optimizer_state is not None:
        state = ckpt.optimizer_state
        meta["optimizer"] = {"param_groups": state["param_groups"], "state_keys": {}}
        for idx, entry in state["state"].items():
            meta["optimizer"]["state_keys"][str(idx)] = sorted(entry)
            for key, value in entry.items():
                tensors[f"optim.{idx}.{key}"] = torch.as_tensor(value).detach().cpu().contiguous().clone()
    if ckpt.rng_state is not None:
        tensors["rng.torch"] = ckpt.rng_state.clone()
    path.parent.mkdir(parents=True, exist_ok=True)
    # one metadata key holding sorted JSON keeps the header byte-stable
    save_file(tensors, str(path), metadata={"mdsam": json.dumps(meta, sort_keys=True)})
    return path


def load_checkpoint(path) -> Checkpoint:
    from safetensors import safe_open

    path = Path(path)
    with safe_open(str(path), framework="pt") as fh:
        raw = (fh.metadata() or {}).get("mdsam")
    if raw is None:
        raise ValueError(f"{path}: not a checkpoint written by this package")
    meta = json.loads(raw)
    if meta.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint format {meta.get('format_version')}")
    tensors = load_file(str(path))
    model_cfg = ModelConfig.from_dict(meta["model_config"])
    if model_cfg.hash() != meta["config_hash"]:
        raise ValueError(f"{path}: config hash mismatch")
    model_state = {k[len("model."):]: v for k, v in tensors.items() if k.startswith("model.")}
    opt_state = None
    if meta["optimizer"] is not None:
        groups = meta["optimizer"]["param_groups"]
        for g in groups:
            if "betas" in g:
                g["betas"] = tuple(g["betas"])
        opt_state = {
            "state": {int(idx): {key: tensors[f"optim.{idx}.{key}"] for key in keys}
                      for idx, keys in meta["optimizer"]["state_keys"].items()},
            "param_groups": groups,
        }
    train_cfg = TrainConfig.from_dict(meta["train_config"]) if meta["train_config"] else None
    return Checkpoint(model_cfg, model_state, train_cfg, opt_state, meta["epoch"], meta["step"],
                      tensors.get("rng.torch"))


def resave_checkpoint(src, dst) -> Path:
    return _write_checkpoint(Path(dst), load_checkpoint(src))


# -- optimisation --------------------------------------------------------------

def make_optimizer(model: MDSAM, tcfg: TrainConfig) -> torch.optim.AdamW:
    """AdamW over the pretrained and new groups; frozen parameters are left out entirely."""
    groups = model.param_groups()
    param_groups = []
    for name, lr in (("pretrained", tcfg.lr_pretrained), ("new", tcfg.lr_new)):
        params = [p for _, p in groups[name]]
        if params:
            param_groups.append({"params": params, "lr": lr, "target_lr": lr, "name": name})
    return torch.optim.AdamW(param_groups, lr=tcfg.lr_new, weight_decay=tcfg.weight_decay)


def warmup_lr(target: float, step: int, warmup_steps: int) -> float:
    """Linear warmup: update ``step`` (1-based) uses ``target * step / warmup_steps``, then constant."""
    if warmup_steps <= 0 or step >= warmup_steps:
        return target
    return target * step / warmup_steps


def _epoch_seed(seed: int, epoch: int) -> int:
    return int(np.random.SeedSequence([seed, epoch]).generate_state(1)[0])


@dataclass
class TrainResult:
    model: MDSAM
    log: list[dict] = field(default_factory=list)
    checkpoints: list[Path] = field(default_factory=list)
    epoch: int = 0
    step: int = 0


def train(model: MDSAM, samples: Sequence[Sample], tcfg: TrainConfig, out_dir=None, *,
          resume: Checkpoint | None = None, keep_all_checkpoints: bool = False) -> TrainResult:
    """Train up to ``tcfg.max_epochs``; with ``out_dir`` writes ``train_log.csv`` and a checkpoint per epoch."""
    if not samples:
        raise ValueError("no training samples")
    optimizer = make_optimizer(model, tcfg)
    start_epoch, step = 0, 0
    if resume is not None:
        model.load_state_dict(resume.model_state)
        if resume.optimizer_state is not None:
            optimizer.load_state_dict(resume.optimizer_state)
        if resume.rng_state is not None:
            torch.set_rng_state(resume.rng_state)
        start_epoch, step = resume.epoch, resume.step
    else:
        torch.manual_seed(tcfg.seed)

    steps_per_epoch = math.ceil(len(samples) / tcfg.batch_size)
    warmup_steps = tcfg.warmup_epochs * steps_per_epoch
    trainable = [p for g in optimizer.param_groups for p in g["params"]]
    device = next(model.parameters()).device
    result = TrainResult(model, epoch=start_epoch, step=step)

    out_dir = Path(out_dir) if out_dir is not None else None
    log_fh = writer = None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        log_path = out_dir / "train_log.csv"
        fresh = resume is None or not log_path.exists()
        log_fh = open(log_path, "w" if fresh else "a", newline="")
        writer = csv.DictWriter(log_fh, LOG_FIELDS, restval="")
        if fresh:
            log_fh.write(f"# config-hash: {model.cfg.hash()} train-hash: {config_hash(tcfg.to_dict())}\n")
            writer.writeheader()

    try:
        for epoch in range(start_epoch, tcfg.max_epochs):
            seed = _epoch_seed(tcfg.seed, epoch)
            epoch_samples = augment_samples(samples, np.random.default_rng(seed)) if tcfg.augment else samples
            model.train()
            for b in batch(epoch_samples, tcfg.batch_size, seed=seed):
                step += 1
                lrs = {}
                for g in optimizer.param_groups:
                    g["lr"] = warmup_lr(g["target_lr"], step, warmup_steps)
                    lrs[g["name"]] = g["lr"]
                images, masks = b.images.to(device), b.masks.to(device)
                out = model(images)
                terms = {f"f_{k}": v for k, v in loss_terms(torch.sigmoid(out.s_f), masks).items()}
                if out.s_m is not None:
                    side = torch.sigmoid(upsample_to(out.s_m, masks))
                    terms.update({f"m_{k}": v for k, v in loss_terms(side, masks).items()})
                loss = sum(terms.values())
                optimizer.zero_grad(set_to_none=True)
                loss.backward()
                max_norm = tcfg.grad_clip if tcfg.grad_clip is not None else float("inf")
                grad_norm = float(torch.nn.utils.clip_grad_norm_(trainable, max_norm))
                if not math.isfinite(loss.item()):
                    raise TrainingDiverged(step, lrs, grad_norm, loss.item())
                optimizer.step()

                row = {"step": step, "epoch": epoch + 1, "lr_pretrained": lrs.get("pretrained", 0.0),
                       "lr_new": lrs.get("new", 0.0), "loss": loss.item(), "grad_norm": grad_norm}
                row.update({k: v.item() for k, v in terms.items()})
                result.log.append(row)
                if writer is not None:
                    writer.writerow(row)
            result.epoch, result.step = epoch + 1, step
            if out_dir is not None:
                log_fh.flush()
                name = f"epoch_{epoch + 1:03d}.safetensors" if keep_all_checkpoints else "last.safetensors"
                path = save_checkpoint(out_dir / name, model, optimizer, epoch=epoch + 1, step=step,
                                       train_config=tcfg)
                if path not in result.checkpoints:
                    result.checkpoints.append(path)
            log.info("epoch %d done, last loss %.4f", epoch + 1, result.log[-1]["loss"])
    finally:
        if log_fh is not None:
            log_fh.close()
    return result


# -- inference and evaluation --------------------------------------------------

@torch.no_grad()
def infer(model: MDSAM, images: torch.Tensor, resolution: int | None = None) -> torch.Tensor:
    """Saliency probabilities (B, 1, R, R) in eval mode; inputs are resized to ``resolution`` if given."""
    images = images.to(next(model.parameters()).device)
    if resolution is not None:
        if resolution % model.cfg.encoder.patch_size:
            raise ValueError(f"resolution {resolution} is not divisible by {model.cfg.encoder.patch_size}")
        if tuple(images.shape[-2:]) != (resolution, resolution):
            images = F.interpolate(images, size=(resolution, resolution), mode="bilinear", align_corners=False)
    was_training = model.training
    model.eval()
    try:
        return torch.sigmoid(model(images).s_f).cpu()
    finally:
        model.train(was_training)


def evaluate_samples(model: MDSAM, samples: Sequence[Sample], batch_size: int = 8) -> dict[str, float]:
    per_image = []
    for b in batch(samples, batch_size, seed=None):
        probs = infer(model, b.images)
        for sid, p, m in zip(b.ids, probs, b.masks):
            per_image.append(metrics.evaluate_pair(p[0].double().numpy(), m[0].double().numpy(), sid))
    return metrics.aggregate(per_image).aggregate


# -- ablation ------------------------------------------------------------------

ABLATION_FIELDS = ("variant", "status", "final_loss", "mae", "f_max", "s_measure", "e_measure",
                   "trainable_params", "total_params")


def run_ablation(variants: Sequence[tuple[str, ModelConfig]], samples: Sequence[Sample], tcfg: TrainConfig,
                 eval_samples: Sequence[Sample] | None = None, out_csv=None, device="cpu") -> list[dict]:
    """Train and evaluate each (label, config) under the same data and seeds; failures don't stop the run."""
    rows = []
    for label, cfg in variants:
        row = {k: "" for k in ABLATION_FIELDS}
        row["variant"] = label
        try:
            model = build_model(cfg)
            model.to(device)
            result = train(model, samples, tcfg)
            scores = evaluate_samples(model, eval_samples if eval_samples is not None else samples)
            row.update(status="ok", final_loss=result.log[-1]["loss"],
                       trainable_params=params_count(model, "pretrained") + params_count(model, "new"),
                       total_params=params_count(model),
                       **{k: scores[k] for k in ("mae", "f_max", "s_measure", "e_measure")})
        except Exception as err:  # record and continue with the remaining variants
            log.exception("variant %s failed", label)
            row["status"] = f"failed: {type(err).__name__}: {err}"
        rows.append(row)
    if out_csv is not None:
        write_ablation_csv(rows, out_csv, config_hash([cfg.to_dict() for _, cfg in variants]))
    return rows


def write_ablation_csv(rows: list[dict], path, cfg_hash: str = "none") -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write(f"# config-hash: {cfg_hash}\n")
        w = csv.DictWriter(fh, ABLATION_FIELDS)
        w.writeheader()
        for r in rows:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})
    return path
