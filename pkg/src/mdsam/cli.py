"""Command line entry point: ``mdsam {train,eval,infer,ablate,curves,params}``.

Exit codes: 0 success, 2 usage or configuration error, 3 numeric failure
(non-finite loss), 1 anything else. The default device comes from the
``MDSAM_DEVICE`` environment variable (``cpu`` when unset).
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import warnings
from dataclasses import dataclass, field
from pathlib import Path

from .config import ConfigError, ModelConfig, TrainConfig, config_hash

log = logging.getLogger("mdsam")

EXIT_OK, EXIT_ERROR, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2, 3
DEVICE_ENV = "MDSAM_DEVICE"


class UsageError(ValueError):
    pass


@dataclass
class CommandResult:
    exit_code: int = EXIT_OK
    artifacts: list[Path] = field(default_factory=list)
    summary: str = ""


# -- config files --------------------------------------------------------------

PRESETS = {"toy": ModelConfig.toy, "sam_b": ModelConfig.sam_b}


def load_run_config(path=None, preset: str | None = None) -> tuple[ModelConfig, TrainConfig, dict]:
    """Read a JSON run config ``{"preset", "model", "train", ...}``; returns the extra keys too."""
    data = {}
    if path is not None:
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as err:
            raise ConfigError("config", f"{path}: {err}") from None
        if not isinstance(data, dict):
            raise ConfigError("config", f"{path}: expected a JSON object")
    preset = preset or data.get("preset", "toy")
    if preset not in PRESETS:
        raise ConfigError("preset", f"unknown preset {preset!r}; expected one of {sorted(PRESETS)}")
    model_cfg = PRESETS[preset](**data.get("model", {}))
    train_cfg = TrainConfig.from_dict(data.get("train", {}))
    extra = {k: v for k, v in data.items() if k not in ("preset", "model", "train")}
    return model_cfg, train_cfg, extra


def _override_train(tcfg: TrainConfig, args) -> TrainConfig:
    updates = {k: getattr(args, k) for k in ("max_epochs", "batch_size", "lr_new", "lr_pretrained", "seed")
               if getattr(args, k, None) is not None}
    if getattr(args, "augment", False):
        updates["augment"] = True
    return TrainConfig.from_dict({**tcfg.to_dict(), **updates}) if updates else tcfg


def _manifest(args):
    from .data import DatasetManifest

    if args.manifest:
        return DatasetManifest.load(args.manifest)
    if args.images and args.masks:
        return DatasetManifest(Path(args.images), Path(args.masks))
    raise UsageError("give --manifest or both --images and --masks")


# -- commands ------------------------------------------------------------------

def cmd_train(args) -> CommandResult:
    from .data import load_dataset
    from .model import build_model
    from .training import load_checkpoint, train
    from .weights import load_pretrained

    model_cfg, tcfg, _ = load_run_config(args.config, args.preset)
    resume = None
    if args.resume:
        resume = load_checkpoint(args.resume)
        model_cfg = resume.model_config
        tcfg = resume.train_config or tcfg
    tcfg = _override_train(tcfg, args)
    samples = load_dataset(_manifest(args), model_cfg.resolution)
    model = build_model(model_cfg)
    if args.pretrained and resume is None:
        load_pretrained(model, args.pretrained, sam_layout=args.sam_layout)
    model.to(args.device)
    out_dir = Path(args.out_dir)
    result = train(model, samples, tcfg, out_dir, resume=resume, keep_all_checkpoints=args.keep_all_checkpoints)
    artifacts = [out_dir / "train_log.csv", *result.checkpoints]
    last = result.log[-1]["loss"] if result.log else float("nan")
    return CommandResult(EXIT_OK, artifacts, f"epochs {result.epoch} steps {result.step} final-loss {last:.4f}")


def cmd_eval(args) -> CommandResult:
    from . import metrics

    with warnings.catch_warnings(record=True):
        warnings.simplefilter("always")
        report = metrics.evaluate_dataset(args.pred_dir, args.gt_dir, workers=args.workers)
    out_csv = Path(args.out_csv)
    tag = config_hash({"pred": str(args.pred_dir), "gt": str(args.gt_dir)})
    curves = out_csv.with_name(out_csv.stem + "_curves.csv")
    metrics.write_report_csv(report, out_csv, tag)
    metrics.write_curves_csv(report, curves, tag)
    summary = report.summary_line()
    if report.unmatched:
        summary += f"\nwarning: {len(report.unmatched)} unmatched file(s) skipped"
    return CommandResult(EXIT_OK, [out_csv, curves], summary)


def cmd_infer(args) -> CommandResult:
    import torch.nn.functional as F

    from .data import SampleReadError, list_images, read_image, save_saliency
    from .training import infer, load_checkpoint

    ckpt = load_checkpoint(args.checkpoint)
    resolution = args.resolution or ckpt.model_config.resolution
    if resolution <= 0 or resolution % ckpt.model_config.encoder.patch_size:
        raise UsageError(f"--resolution must be a positive multiple of {ckpt.model_config.encoder.patch_size}")
    model = ckpt.build().to(args.device)
    out_dir = Path(args.out_dir)
    written, failed = [], 0
    for path in list_images(args.image_dir):
        try:
            image, orig = read_image(path, resolution, path.stem)
        except SampleReadError as err:
            log.warning("skipping %s", err)
            failed += 1
            continue
        prob = infer(model, image[None], resolution)
        if not args.no_restore_size:
            prob = F.interpolate(prob, size=orig, mode="bilinear", align_corners=False)
        written.append(save_saliency(prob[0, 0], out_dir / f"{path.stem}.png"))
    if not written:
        return CommandResult(EXIT_ERROR, [], f"no images written ({failed} unreadable)")
    return CommandResult(EXIT_OK, written, f"wrote {len(written)} map(s), skipped {failed}")


def cmd_ablate(args) -> CommandResult:
    from .data import load_dataset, make_synthetic_samples
    from .model import SCALE_VARIANTS, VARIANTS, variant_config
    from .training import run_ablation

    base, tcfg, extra = load_run_config(args.matrix, args.preset)
    tcfg = _override_train(tcfg, args)
    table = SCALE_VARIANTS if (args.table or extra.get("table", "modules")) == "scales" else VARIANTS
    keys = args.variants.split(",") if args.variants else extra.get("variants", sorted(table))
    bad = [k for k in keys if k not in table]
    if bad:
        raise ConfigError("variants", f"unknown variant(s) {bad}; expected a subset of {sorted(table)}")
    matrix = [(table[k][0], variant_config(base, k, table)) for k in keys]
    if args.manifest or args.images:
        samples = load_dataset(_manifest(args), base.resolution)
    else:
        n = args.synthetic or extra.get("synthetic", 8)
        samples = make_synthetic_samples(n, base.resolution, seed=tcfg.seed)
    rows = run_ablation(matrix, samples, tcfg, out_csv=args.out_csv, device=args.device)
    failed = [r["variant"] for r in rows if r["status"] != "ok"]
    summary = f"{len(rows)} variant(s), {len(failed)} failed"
    return CommandResult(EXIT_ERROR if failed else EXIT_OK, [Path(args.out_csv)], summary)


def cmd_curves(args) -> CommandResult:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    from .metrics import read_curves_csv

    curves = {}
    for path in args.curves_csv:
        try:
            curves[Path(path).stem] = read_curves_csv(path)
        except (OSError, ValueError, KeyError) as err:
            raise UsageError(f"{path}: malformed curve CSV ({err})") from None
    out = Path(args.out_plot)
    out.parent.mkdir(parents=True, exist_ok=True)
    suffix = out.suffix or ".png"
    pr_path = out.with_name(f"{out.stem}_pr{suffix}")
    f_path = out.with_name(f"{out.stem}_f{suffix}")

    fig, ax = plt.subplots(figsize=(5, 4))
    for name, c in curves.items():
        ax.plot(c["recall"], c["precision"], label=name)
    ax.set(xlabel="Recall", ylabel="Precision", xlim=(0, 1), ylim=(0, 1.02), title="Precision-recall")
    ax.legend()
    fig.savefig(pr_path, dpi=120, bbox_inches="tight")
    plt.close(fig)

    fig, ax = plt.subplots(figsize=(5, 4))
    for name, c in curves.items():
        ax.plot(c["threshold"] * 255, c["f"], label=name)
    ax.set(xlabel="Threshold", ylabel="F-measure", xlim=(0, 255), ylim=(0, 1.02), title="F-measure")
    ax.legend()
    fig.savefig(f_path, dpi=120, bbox_inches="tight")
    plt.close(fig)
    return CommandResult(EXIT_OK, [pr_path, f_path], f"plotted {len(curves)} method(s)")


def cmd_params(args) -> CommandResult:
    import torch

    from .model import MDSAM, params_count

    model_cfg, _, _ = load_run_config(args.config, args.preset)
    with torch.device("meta"):
        model = MDSAM(model_cfg)
    lines = []
    for group in (None, "frozen", "pretrained", "new", "lmsa"):
        n = params_count(model, group)
        lines.append(f"{group or 'total':<11} {n / 1e6:8.2f}M  {n}")
    return CommandResult(EXIT_OK, [], "\n".join(lines))


# -- argument parsing ------------------------------------------------------------

def _add_run_config(p: argparse.ArgumentParser, required: bool = False, flag: str = "--config") -> None:
    p.add_argument(flag, required=required, metavar="JSON",
                   help="run config: {'preset': 'toy'|'sam_b', 'model': {...}, 'train': {...}}")
    p.add_argument("--preset", choices=sorted(PRESETS), help="model preset (overrides the config's preset)")


def _add_data(p: argparse.ArgumentParser) -> None:
    p.add_argument("--manifest", metavar="JSON", help="dataset manifest with image_dir/mask_dir")
    p.add_argument("--images", metavar="DIR", help="image directory (with --masks, instead of --manifest)")
    p.add_argument("--masks", metavar="DIR", help="mask directory paired with --images by file stem")


def _add_train_overrides(p: argparse.ArgumentParser) -> None:
    p.add_argument("--epochs", dest="max_epochs", type=int, help="override train.max_epochs")
    p.add_argument("--batch-size", type=int, help="override train.batch_size")
    p.add_argument("--lr-new", type=float, help="override the learning rate of new modules")
    p.add_argument("--lr-pretrained", type=float, help="override the learning rate of pretrained weights")
    p.add_argument("--seed", type=int, help="override train.seed (data order and augmentation)")
    p.add_argument("--augment", action="store_true", help="enable random horizontal flips")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mdsam", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--device", default=os.environ.get(DEVICE_ENV, "cpu"),
                        help=f"torch device (default: ${DEVICE_ENV} or cpu)")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND", help="run 'mdsam COMMAND --help' for details")

    p = sub.add_parser("train", help="train a model; writes train_log.csv and checkpoints")
    _add_run_config(p)
    _add_data(p)
    _add_train_overrides(p)
    p.add_argument("--out-dir", required=True, metavar="DIR", help="where the log and checkpoints go")
    p.add_argument("--resume", metavar="CKPT", help="continue from a checkpoint (epoch counter included)")
    p.add_argument("--pretrained", metavar="FILE", help="initial weights (.npz or .safetensors)")
    p.add_argument("--sam-layout", action="store_true", help="--pretrained uses SAM's key names")
    p.add_argument("--keep-all-checkpoints", action="store_true",
                   help="write epoch_NNN.safetensors per epoch instead of overwriting last.safetensors")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score saliency maps against ground truth")
    p.add_argument("--pred-dir", required=True, metavar="DIR", help="predicted maps (8-bit images)")
    p.add_argument("--gt-dir", required=True, metavar="DIR", help="ground-truth masks, matched by stem")
    p.add_argument("--out-csv", required=True, metavar="CSV",
                   help="per-image report; curves go to <stem>_curves.csv next to it")
    p.add_argument("--workers", type=int, default=1, help="threads for per-image metrics (default 1)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("infer", help="write one saliency map per input image")
    p.add_argument("--checkpoint", required=True, metavar="CKPT", help="checkpoint from 'train'")
    p.add_argument("--image-dir", required=True, metavar="DIR", help="input images")
    p.add_argument("--out-dir", required=True, metavar="DIR", help="output maps, same stems, .png")
    p.add_argument("--resolution", type=int, help="network input size, multiple of 16 (default: config)")
    p.add_argument("--no-restore-size", action="store_true",
                   help="keep maps at the network resolution instead of the original image size")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("ablate", help="train and score a matrix of variants into one CSV")
    _add_run_config(p, flag="--matrix")
    _add_data(p)
    _add_train_overrides(p)
    p.add_argument("--out-csv", required=True, metavar="CSV", help="one row per variant")
    p.add_argument("--variants", metavar="KEYS", help="comma-separated keys, e.g. a,b,f (default: all)")
    p.add_argument("--table", choices=("modules", "scales"), help="module ablation or pooling-scale study")
    p.add_argument("--synthetic", type=int, metavar="N", help="use N synthetic images when no data is given")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("curves", help="plot precision-recall and F-measure curves")
    p.add_argument("--curves-csv", required=True, nargs="+", metavar="CSV",
                   help="curve CSVs from 'eval'; several are overlaid, labelled by file name")
    p.add_argument("--out-plot", required=True, metavar="PNG",
                   help="output prefix; writes <stem>_pr.png and <stem>_f.png")
    p.set_defaults(func=cmd_curves)

    p = sub.add_parser("params", help="print total and per-group parameter counts")
    _add_run_config(p)
    p.set_defaults(func=cmd_params)
    return parser


def run(argv=None) -> CommandResult:
    from .data import ManifestError
    from .training import TrainingDiverged

    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except TrainingDiverged as err:
        return CommandResult(EXIT_NUMERIC, [], f"error: {err}")
    except (ConfigError, ManifestError, UsageError) as err:
        return CommandResult(EXIT_USAGE, [], f"error: {err}")
    except (OSError, ValueError) as err:
        return CommandResult(EXIT_ERROR, [], f"error: {err}")


def main(argv=None) -> int:
    result = run(argv)
    stream = sys.stdout if result.exit_code == EXIT_OK else sys.stderr
    if result.summary:
        print(result.summary, file=stream)
    return result.exit_code


if __name__ == "__main__":
    sys.exit(main())
