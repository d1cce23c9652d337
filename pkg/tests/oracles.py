"""Straight-line reference implementations used to cross-check the library.

Everything here is written with explicit Python loops over pixels and
thresholds so that it shares no code path with the vectorised versions.
"""
from __future__ import annotations

import math

import numpy as np

EPS = np.spacing(1.0)


# -- metrics -------------------------------------------------------------------

def quantized(pred):
    h, w = len(pred), len(pred[0])
    lo = min(pred[i][j] for i in range(h) for j in range(w))
    hi = max(pred[i][j] for i in range(h) for j in range(w))
    out = [[0] * w for _ in range(h)]
    for i in range(h):
        for j in range(w):
            v = (pred[i][j] - lo) / (hi - lo) if hi > lo else pred[i][j]
            v = min(max(v, 0.0), 1.0)
            out[i][j] = int(math.floor(v * 255 + 0.5))
    return out


def binary_maps(pred):
    """The 256 binarised predictions, one per threshold (k + 0.5) / 256."""
    q = quantized(pred)
    maps = []
    for k in range(256):
        t = (k + 0.5) / 256
        maps.append([[1 if v / 255 > t else 0 for v in row] for row in q])
    return maps


def oracle_mae(pred, gt):
    h, w = len(pred), len(pred[0])
    return sum(abs(pred[i][j] - gt[i][j]) for i in range(h) for j in range(w)) / (h * w)


def oracle_f_curve(pred, gt, beta2=0.3):
    h, w = len(gt), len(gt[0])
    g = [[1 if gt[i][j] > 0.5 else 0 for j in range(w)] for i in range(h)]
    n_pos = sum(map(sum, g))
    precision, recall, f = [], [], []
    for b in binary_maps(pred):
        tp = fp = 0
        for i in range(h):
            for j in range(w):
                if b[i][j]:
                    if g[i][j]:
                        tp += 1
                    else:
                        fp += 1
        p = tp / (tp + fp) if tp + fp else 1.0
        r = tp / n_pos
        precision.append(p)
        recall.append(r)
        f.append((1 + beta2) * p * r / (beta2 * p + r) if beta2 * p + r > 0 else 0.0)
    return precision, recall, f


def oracle_e_measure(pred, gt):
    h, w = len(gt), len(gt[0])
    n = h * w
    g = [[1.0 if gt[i][j] > 0.5 else 0.0 for j in range(w)] for i in range(h)]
    n_pos = sum(map(sum, g))
    scores = []
    for b in binary_maps(pred):
        if n_pos == 0:
            enhanced = [[1.0 - b[i][j] for j in range(w)] for i in range(h)]
        elif n_pos == n:
            enhanced = [[float(b[i][j]) for j in range(w)] for i in range(h)]
        else:
            mp = sum(map(sum, b)) / n
            mg = n_pos / n
            enhanced = [[0.0] * w for _ in range(h)]
            for i in range(h):
                for j in range(w):
                    dp, dg = b[i][j] - mp, g[i][j] - mg
                    align = 2 * dp * dg / (dp * dp + dg * dg + EPS)
                    enhanced[i][j] = (align + 1) ** 2 / 4
        scores.append(sum(map(sum, enhanced)) / n)
    return sum(scores) / len(scores)


def _mean(xs):
    return sum(xs) / len(xs)


def _sample_std(xs):
    if len(xs) < 2:
        return 0.0
    m = _mean(xs)
    return math.sqrt(sum((x - m) ** 2 for x in xs) / (len(xs) - 1))


def _object(values):
    m = _mean(values)
    return 2 * m / (m * m + 1 + _sample_std(values) + EPS)


def _region_ssim(p, g):
    n = len(p)
    x, y = _mean(p), _mean(g)
    sx = sum((a - x) ** 2 for a in p) / (n - 1 + EPS)
    sy = sum((b - y) ** 2 for b in g) / (n - 1 + EPS)
    sxy = sum((a - x) * (b - y) for a, b in zip(p, g)) / (n - 1 + EPS)
    alpha = 4 * x * y * sxy
    beta = (x * x + y * y) * (sx + sy)
    if alpha != 0:
        return alpha / (beta + EPS)
    return 1.0 if beta == 0 else 0.0


def oracle_s_measure(pred, gt, alpha=0.5):
    h, w = len(gt), len(gt[0])
    g = [[gt[i][j] > 0.5 for j in range(w)] for i in range(h)]
    fg = [pred[i][j] for i in range(h) for j in range(w) if g[i][j]]
    bg = [1 - pred[i][j] for i in range(h) for j in range(w) if not g[i][j]]
    y = len(fg) / (h * w)
    if y == 0:
        return 1 - _mean([pred[i][j] for i in range(h) for j in range(w)])
    if y == 1:
        return _mean(fg)
    s_object = y * _object(fg) + (1 - y) * _object(bg)

    # 1-based centroid rounded half up
    total = len(fg)
    cy = int(math.floor(sum(i + 1 for i in range(h) for j in range(w) if g[i][j]) / total + 0.5))
    cx = int(math.floor(sum(j + 1 for i in range(h) for j in range(w) if g[i][j]) / total + 0.5))
    s_region = 0.0
    for rows, cols in (((0, cy), (0, cx)), ((0, cy), (cx, w)), ((cy, h), (0, cx)), ((cy, h), (cx, w))):
        p_q = [pred[i][j] for i in range(*rows) for j in range(*cols)]
        g_q = [1.0 if g[i][j] else 0.0 for i in range(*rows) for j in range(*cols)]
        if p_q:
            s_region += len(p_q) / (h * w) * _region_ssim(p_q, g_q)
    return max(0.0, alpha * s_object + (1 - alpha) * s_region)


def _gaussian(size=7, sigma=5.0):
    r = (size - 1) // 2
    k = [[math.exp(-(x * x + y * y) / (2 * sigma * sigma)) for x in range(-r, r + 1)] for y in range(-r, r + 1)]
    peak = max(map(max, k))
    k = [[v if v >= np.finfo(float).eps * peak else 0.0 for v in row] for row in k]
    s = sum(map(sum, k))
    return [[v / s for v in row] for row in k]


def oracle_weighted_f(pred, gt, beta2=1.0):
    h, w = len(gt), len(gt[0])
    g = [[gt[i][j] > 0.5 for j in range(w)] for i in range(h)]
    fg = sorted((j, i) for i in range(h) for j in range(w) if g[i][j])  # column-major: ties go to (col, row) order
    err = [[abs(pred[i][j] - (1.0 if g[i][j] else 0.0)) for j in range(w)] for i in range(h)]
    dist = [[0.0] * w for _ in range(h)]
    err_t = [row[:] for row in err]
    for i in range(h):
        for j in range(w):
            if g[i][j]:
                continue
            best = None
            for fj, fi in fg:
                d2 = (fi - i) ** 2 + (fj - j) ** 2
                if best is None or d2 < best[0]:
                    best = (d2, fi, fj)
            dist[i][j] = math.sqrt(best[0])
            err_t[i][j] = err[best[1]][best[2]]
    k = _gaussian()
    r = len(k) // 2
    blurred = [[0.0] * w for _ in range(h)]
    for i in range(h):
        for j in range(w):
            acc = 0.0
            for di in range(-r, r + 1):
                for dj in range(-r, r + 1):
                    ii, jj = i + di, j + dj
                    if 0 <= ii < h and 0 <= jj < w:
                        acc += k[di + r][dj + r] * err_t[ii][jj]
            blurred[i][j] = acc
    ew_fg, ew_bg = [], []
    for i in range(h):
        for j in range(w):
            if g[i][j]:
                ew_fg.append(min(err[i][j], blurred[i][j]))
            else:
                importance = 2 - math.exp(math.log(0.5) / 5 * dist[i][j])
                ew_bg.append(err[i][j] * importance)
    tp = len(ew_fg) - sum(ew_fg)
    fp = sum(ew_bg)
    recall = 1 - _mean(ew_fg)
    precision = tp / (tp + fp + EPS)
    return (1 + beta2) * recall * precision / (recall + beta2 * precision + EPS)


# -- detail branch -------------------------------------------------------------

def _avg_pool3(x):
    c, h, w = x.shape
    out = np.zeros_like(x)
    for ch in range(c):
        for i in range(h):
            for j in range(w):
                acc, cnt = 0.0, 0
                for di in (-1, 0, 1):
                    for dj in (-1, 0, 1):
                        if 0 <= i + di < h and 0 <= j + dj < w:
                            acc += x[ch, i + di, j + dj]
                            cnt += 1
                out[ch, i, j] = acc / cnt
    return out


def _conv1x1(x, weight, bias):
    c_out = weight.shape[0]
    _, h, w = x.shape
    out = np.zeros((c_out, h, w))
    for o in range(c_out):
        for i in range(h):
            for j in range(w):
                out[o, i, j] = bias[o] + sum(weight[o, c, 0, 0] * x[c, i, j] for c in range(x.shape[0]))
    return out


def _bn_sigmoid(x, bn):
    out = np.zeros_like(x)
    for ch in range(x.shape[0]):
        scale = bn["weight"][ch] / math.sqrt(bn["running_var"][ch] + bn["eps"])
        for i in range(x.shape[1]):
            for j in range(x.shape[2]):
                z = (x[ch, i, j] - bn["running_mean"][ch]) * scale + bn["bias"][ch]
                out[ch, i, j] = 1 / (1 + math.exp(-z))
    return out


def _conv_bn_sigmoid(x, block):
    conv, bn = block[0], block[1]
    y = _conv1x1(x, conv.weight.detach().double().numpy(), conv.bias.detach().double().numpy())
    params = {k: getattr(bn, k).detach().double().numpy() for k in ("weight", "bias", "running_mean", "running_var")}
    params["eps"] = bn.eps
    return _bn_sigmoid(y, params)


def oracle_edge_enhance(f, enhancer):
    """``f``: (C, H, W) array; ``enhancer`` an EdgeEnhancer in eval mode."""
    residual = f - _avg_pool3(f)
    return _conv_bn_sigmoid(residual, enhancer.out) + f


def oracle_meem(f_local, meem):
    conv = meem.in_conv
    levels = [_conv1x1(f_local, conv.weight.detach().double().numpy(), conv.bias.detach().double().numpy())]
    for block in meem.mid_convs:
        levels.append(_avg_pool3(_conv_bn_sigmoid(levels[-1], block)))
    enhanced = [oracle_edge_enhance(lv, ee) for lv, ee in zip(levels[1:], meem.enhancers)]
    stacked = np.concatenate([levels[0], *enhanced], axis=0)
    out = meem.out_conv
    return _conv1x1(stacked, out.weight.detach().double().numpy(), out.bias.detach().double().numpy())
