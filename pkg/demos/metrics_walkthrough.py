"""How the saliency metrics react to a few hand-made predictions.

    python3 demos/metrics_walkthrough.py
"""
import numpy as np
from scipy.ndimage import gaussian_filter

from mdsam import metrics

gt = np.zeros((64, 64))
gt[16:48, 20:44] = 1

candidates = {
    "perfect": gt,
    "blurred": gaussian_filter(gt, 3),
    "shifted": np.roll(gt, 6, axis=1),
    "half-grey": np.full_like(gt, 0.5),
    "inverted": 1 - gt,
    "noisy": np.clip(gt + np.random.default_rng(0).normal(0, 0.3, gt.shape), 0, 1),
}

print(f"{'prediction':<10}  {'MAE':>6}  {'Fmax':>6}  {'Fmean':>6}  {'Fw':>6}  {'S':>6}  {'E':>6}")
for name, pred in candidates.items():
    m = metrics.evaluate_pair(pred, gt, name)
    print(f"{name:<10}  {m.mae:6.3f}  {m.f_max:6.3f}  {m.f_mean:6.3f}  {m.weighted_f:6.3f}  "
          f"{m.s_measure:6.3f}  {m.e_measure:6.3f}")

# The F-measure is computed at 256 thresholds; the curve shows where a
# blurred prediction loses precision or recall.
curve = metrics.f_measure_curve(candidates["blurred"], gt)
best = int(np.argmax(curve.f))
print(f"\nblurred: best threshold {metrics.THRESHOLDS[best]:.3f} "
      f"(precision {curve.precision[best]:.3f}, recall {curve.recall[best]:.3f})")

# Uniform predictions carry no structure, which the structure measure notices
# even though the absolute error is moderate.
print("grey MAE vs S:", round(metrics.mae(candidates["half-grey"], gt), 3),
      round(metrics.s_measure(candidates["half-grey"], gt), 3))
