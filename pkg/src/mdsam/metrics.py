"""Salient-object-detection metrics: MAE, F-measure curves, S-measure, E-measure, weighted F.

Conventions
-----------
* Ground truth is binarised at 0.5.
* For the threshold sweeps (F and E) the prediction is min-max normalised per
  image (left as-is when constant), quantised to 8 bits, and compared against
  256 thresholds placed at ``(k + 0.5) / 256``. A binary prediction therefore
  gives the same binary map at every threshold.
* MAE, S-measure and weighted F use the raw prediction.
"""
from __future__ import annotations

import csv
import logging
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np
from scipy import ndimage

log = logging.getLogger(__name__)

BETA2 = 0.3
N_THRESHOLDS = 256
THRESHOLDS = (np.arange(N_THRESHOLDS) + 0.5) / N_THRESHOLDS
_EPS = np.spacing(1.0)


class EmptyGroundTruth(ValueError):
    """The ground-truth mask has no foreground pixels."""


def _pair(pred, gt) -> tuple[np.ndarray, np.ndarray]:
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError(f"prediction {pred.shape} and ground truth {gt.shape} differ")
    if pred.ndim != 2:
        raise ValueError(f"expected 2-D maps, got shape {pred.shape}")
    return pred, gt


def binarize_gt(gt) -> np.ndarray:
    return np.asarray(gt, dtype=np.float64) > 0.5


def sweep_levels(pred) -> np.ndarray:
    """Min-max normalise then quantise to integer levels 0..255."""
    p = np.asarray(pred, dtype=np.float64)
    lo, hi = p.min(), p.max()
    if hi > lo:
        p = (p - lo) / (hi - lo)
    return np.round(np.clip(p, 0, 1) * 255).astype(np.int64)


# smallest level l with l / 255 > (k + 0.5) / 256, in exact integer arithmetic
_FIRST_POSITIVE_LEVEL = (255 * (2 * np.arange(N_THRESHOLDS) + 1)) // 512 + 1


def _confusion(pred, gt_bin: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-threshold TP and predicted-positive counts."""
    levels = sweep_levels(pred)
    fg_hist = np.bincount(levels[gt_bin], minlength=256)
    all_hist = np.bincount(levels.ravel(), minlength=256)
    # counts at level >= l, with an extra zero for l = 256
    fg_ge = np.append(np.cumsum(fg_hist[::-1])[::-1], 0)
    all_ge = np.append(np.cumsum(all_hist[::-1])[::-1], 0)
    first = _FIRST_POSITIVE_LEVEL
    return fg_ge[first].astype(np.float64), all_ge[first].astype(np.float64)


def mae(pred, gt) -> float:
    pred, gt = _pair(pred, gt)
    return float(np.abs(pred - gt).mean())


class FCurve(NamedTuple):
    precision: np.ndarray
    recall: np.ndarray
    f: np.ndarray
    f_max: float
    f_mean: float


def f_measure_curve(pred, gt, beta2: float = BETA2) -> FCurve:
    pred, gt = _pair(pred, gt)
    g = binarize_gt(gt)
    n_pos = g.sum()
    if n_pos == 0:
        raise EmptyGroundTruth("F-measure is undefined for an empty ground truth")
    tp, pp = _confusion(pred, g)
    # nothing predicted positive: precision 1, recall 0
    precision = np.where(pp > 0, tp / np.maximum(pp, 1), 1.0)
    recall = tp / n_pos
    denom = beta2 * precision + recall
    f = np.where(denom > 0, (1 + beta2) * precision * recall / np.where(denom > 0, denom, 1), 0.0)
    return FCurve(precision, recall, f, float(f.max()), float(f.mean()))


def e_measure_curve(pred, gt) -> np.ndarray:
    """Enhanced-alignment score at each of the 256 thresholds."""
    pred, gt = _pair(pred, gt)
    g = binarize_gt(gt)
    n = g.size
    n_pos = g.sum()
    tp, pp = _confusion(pred, g)
    if n_pos == n:
        return pp / n
    if n_pos == 0:
        return (n - pp) / n
    fp = pp - tp
    fn = n_pos - tp
    tn = n - n_pos - fp
    mean_p = pp / n
    mean_g = n_pos / n
    score = np.zeros(N_THRESHOLDS)
    for count, p_val, g_val in ((tp, 1.0, 1.0), (fp, 1.0, 0.0), (fn, 0.0, 1.0), (tn, 0.0, 0.0)):
        dp = p_val - mean_p
        dg = g_val - mean_g
        align = 2 * dp * dg / (dp * dp + dg * dg + _EPS)
        score += count * (align + 1) ** 2 / 4
    return score / n


def e_measure(pred, gt) -> float:
    return float(e_measure_curve(pred, gt).mean())


def _object_score(x: np.ndarray) -> float:
    mean = x.mean()
    std = x.std(ddof=1) if x.size > 1 else 0.0
    return 2 * mean / (mean * mean + 1 + std + _EPS)


def _ssim(pred: np.ndarray, gt: np.ndarray) -> float:
    n = pred.size
    x, y = pred.mean(), gt.mean()
    sx = ((pred - x) ** 2).sum() / (n - 1 + _EPS)
    sy = ((gt - y) ** 2).sum() / (n - 1 + _EPS)
    sxy = ((pred - x) * (gt - y)).sum() / (n - 1 + _EPS)
    alpha = 4 * x * y * sxy
    beta = (x * x + y * y) * (sx + sy)
    if alpha != 0:
        return alpha / (beta + _EPS)
    return 1.0 if beta == 0 else 0.0


def _centroid(g: np.ndarray) -> tuple[int, int]:
    # 1-based centroid, rounded half up; quadrants split as [:cy] / [cy:]
    h, w = g.shape
    if not g.any():
        return int(np.floor(h / 2 + 0.5)), int(np.floor(w / 2 + 0.5))
    rows, cols = np.nonzero(g)
    cy = int(np.floor(rows.mean() + 1 + 0.5))
    cx = int(np.floor(cols.mean() + 1 + 0.5))
    return cy, cx


def s_measure(pred, gt, alpha: float = 0.5) -> float:
    pred, gt = _pair(pred, gt)
    g = binarize_gt(gt)
    y = g.mean()
    if y == 0:
        return float(1 - pred.mean())
    if y == 1:
        return float(pred.mean())

    s_object = y * _object_score(pred[g]) + (1 - y) * _object_score(1 - pred[~g])

    h, w = g.shape
    cy, cx = _centroid(g)
    gf = g.astype(np.float64)
    s_region = 0.0
    for rs, cs in ((slice(0, cy), slice(0, cx)), (slice(0, cy), slice(cx, w)),
                   (slice(cy, h), slice(0, cx)), (slice(cy, h), slice(cx, w))):
        p_q, g_q = pred[rs, cs], gf[rs, cs]
        if p_q.size:
            s_region += p_q.size / (h * w) * _ssim(p_q, g_q)

    return float(max(0.0, alpha * s_object + (1 - alpha) * s_region))


def _gaussian_kernel(size: int = 7, sigma: float = 5.0) -> np.ndarray:
    r = (size - 1) / 2
    y, x = np.ogrid[-r:r + 1, -r:r + 1]
    k = np.exp(-(x * x + y * y) / (2 * sigma * sigma))
    k[k < np.finfo(k.dtype).eps * k.max()] = 0
    return k / k.sum()


def weighted_f(pred, gt, beta2: float = 1.0) -> float:
    """Weighted F-measure with dependency (Gaussian 7x7, sigma 5) and distance-based importance."""
    pred, gt = _pair(pred, gt)
    g = binarize_gt(gt)
    if not g.any():
        raise EmptyGroundTruth("weighted F-measure is undefined for an empty ground truth")
    dist, (iy, ix) = ndimage.distance_transform_edt(~g, return_indices=True)
    err = np.abs(pred - g)
    # background pixels take the error of their nearest foreground pixel
    err_t = err[iy, ix]
    blurred = ndimage.convolve(err_t, _gaussian_kernel(), mode="constant", cval=0.0)
    min_err = np.where(g & (blurred < err), blurred, err)
    importance = np.where(g, 1.0, 2 - np.exp(np.log(0.5) / 5 * dist))
    ew = min_err * importance
    tp_w = g.sum() - ew[g].sum()
    fp_w = ew[~g].sum()
    recall = 1 - ew[g].mean()
    precision = tp_w / (tp_w + fp_w + _EPS)
    return float((1 + beta2) * recall * precision / (recall + beta2 * precision + _EPS))


@dataclass
class ImageMetrics:
    id: str
    mae: float
    s_measure: float
    e_measure: float
    f_max: float = float("nan")
    f_mean: float = float("nan")
    weighted_f: float = float("nan")
    empty_gt: bool = False
    precision: np.ndarray | None = field(default=None, repr=False)
    recall: np.ndarray | None = field(default=None, repr=False)
    f_curve: np.ndarray | None = field(default=None, repr=False)


def evaluate_pair(pred, gt, image_id: str = "") -> ImageMetrics:
    g = binarize_gt(gt).astype(np.float64)
    m = ImageMetrics(
        id=image_id,
        mae=mae(pred, g),
        s_measure=s_measure(pred, g),
        e_measure=e_measure(pred, g),
    )
    if not g.any():
        m.empty_gt = True
        return m
    curve = f_measure_curve(pred, g)
    m.f_max, m.f_mean = curve.f_max, curve.f_mean
    m.precision, m.recall, m.f_curve = curve.precision, curve.recall, curve.f
    m.weighted_f = weighted_f(pred, g)
    return m


AGGREGATE_KEYS = ("mae", "f_max", "f_mean", "s_measure", "e_measure", "weighted_f")


@dataclass
class MetricReport:
    per_image: list[ImageMetrics]
    aggregate: dict[str, float]
    precision: np.ndarray
    recall: np.ndarray
    f: np.ndarray
    unmatched: list[str] = field(default_factory=list)
    empty_gt: list[str] = field(default_factory=list)

    def summary_line(self) -> str:
        a = self.aggregate
        return f"{a['mae']:.4f} {a['f_max']:.4f} {a['s_measure']:.4f} {a['e_measure']:.4f}"


def aggregate(per_image: list[ImageMetrics]) -> MetricReport:
    """Dataset means; F statistics come from the image-averaged F curve."""
    if not per_image:
        raise ValueError("no images to aggregate")
    per_image = sorted(per_image, key=lambda m: m.id)
    valid = [m for m in per_image if not m.empty_gt]
    nan_curve = np.full(N_THRESHOLDS, np.nan)
    if valid:
        precision = np.mean([m.precision for m in valid], axis=0)
        recall = np.mean([m.recall for m in valid], axis=0)
        f = np.mean([m.f_curve for m in valid], axis=0)
    else:
        precision = recall = f = nan_curve
    agg = {
        "mae": float(np.mean([m.mae for m in per_image])),
        "e_measure": float(np.mean([m.e_measure for m in per_image])),
        "s_measure": float(np.mean([m.s_measure for m in valid])) if valid else float("nan"),
        "weighted_f": float(np.mean([m.weighted_f for m in valid])) if valid else float("nan"),
        "f_max": float(f.max()) if valid else float("nan"),
        "f_mean": float(f.mean()) if valid else float("nan"),
    }
    return MetricReport(per_image, agg, precision, recall, f,
                        empty_gt=[m.id for m in per_image if m.empty_gt])


def evaluate_dataset(pred_dir, gt_dir, workers: int = 1) -> MetricReport:
    """Pair prediction and ground-truth files by stem and evaluate every pair."""
    from .data import list_images, load_saliency

    preds = {p.stem: p for p in list_images(pred_dir)}
    gts = {p.stem: p for p in list_images(gt_dir)}
    common = sorted(preds.keys() & gts.keys())
    unmatched = sorted(preds.keys() ^ gts.keys())
    if not common:
        raise ValueError(f"no file stems in common between {pred_dir} and {gt_dir}")
    if unmatched:
        warnings.warn(f"{len(unmatched)} unmatched file(s) excluded from evaluation")

    def one(stem: str) -> ImageMetrics:
        pred = load_saliency(preds[stem])
        gt = load_saliency(gts[stem])
        if pred.shape != gt.shape:
            raise ValueError(f"{stem}: prediction {pred.shape} vs ground truth {gt.shape}")
        return evaluate_pair(pred, gt, stem)

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            per_image = list(pool.map(one, common))
    else:
        per_image = [one(s) for s in common]
    report = aggregate(per_image)
    report.unmatched = unmatched
    return report


REPORT_FIELDS = ("id", "mae", "f_max", "f_mean", "s_measure", "e_measure", "weighted_f", "empty_gt")
MEAN_ROW = "__mean__"


def write_report_csv(report: MetricReport, path, config_hash: str | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write(f"# config-hash: {config_hash or 'none'}\n")
        w = csv.writer(fh)
        w.writerow(REPORT_FIELDS)
        for m in report.per_image:
            w.writerow([m.id] + [_fmt(getattr(m, k)) for k in REPORT_FIELDS[1:-1]] + [int(m.empty_gt)])
        w.writerow([MEAN_ROW] + [_fmt(report.aggregate[k]) for k in REPORT_FIELDS[1:-1]] + [0])
    return path


def write_curves_csv(report: MetricReport, path, config_hash: str | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write(f"# config-hash: {config_hash or 'none'}\n")
        w = csv.writer(fh)
        w.writerow(("index", "threshold", "precision", "recall", "f"))
        for k in range(N_THRESHOLDS):
            w.writerow([k, _fmt(THRESHOLDS[k]), _fmt(report.precision[k]), _fmt(report.recall[k]), _fmt(report.f[k])])
    return path


def _fmt(x: float) -> str:
    return repr(float(x))


def _rows(path) -> list[dict]:
    with open(path, newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    return list(csv.DictReader(lines))


def read_curves_csv(path) -> dict[str, np.ndarray]:
    rows = _rows(path)
    missing = {"threshold", "precision", "recall", "f"} - set(rows[0] if rows else ())
    if len(rows) != N_THRESHOLDS or missing:
        raise ValueError(f"{path}: expected {N_THRESHOLDS} curve rows with threshold/precision/recall/f columns")
    return {k: np.array([float(r[k]) for r in rows]) for k in ("threshold", "precision", "recall", "f")}


def read_report_csv(path, curves_path=None) -> MetricReport:
    rows = _rows(path)
    if not rows or set(REPORT_FIELDS) - set(rows[0]):
        raise ValueError(f"{path}: not a metric report")
    per_image, agg = [], None
    for r in rows:
        values = {k: float(r[k]) for k in REPORT_FIELDS[1:-1]}
        if r["id"] == MEAN_ROW:
            agg = values
            continue
        per_image.append(ImageMetrics(id=r["id"], empty_gt=bool(int(r["empty_gt"])), **values))
    if agg is None:
        raise ValueError(f"{path}: missing {MEAN_ROW} row")
    if curves_path is not None:
        c = read_curves_csv(curves_path)
        precision, recall, f = c["precision"], c["recall"], c["f"]
    else:
        precision = recall = f = np.full(N_THRESHOLDS, np.nan)
    return MetricReport(per_image, agg, precision, recall, f,
                        empty_gt=[m.id for m in per_image if m.empty_gt])
