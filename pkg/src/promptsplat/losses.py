"""Training objective: photometric, inverse-depth, total-variation and
region-smoothness terms, each returning the scalar and its analytic
gradient. All terms are means, so the composite weight stays meaningful
across resolutions. Sub-gradient of |x| at 0 is taken as 0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class LossWeights:
    lam: float = 0.01             # weight on TV terms and region smoothness
    region_min_pixels: int = 1000
    depth_epsilon: float = 1e-3

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lam must be >= 0")
        if self.region_min_pixels < 1:
            raise ValueError("region_min_pixels must be >= 1")
        if self.depth_epsilon <= 0:
            raise ValueError("depth_epsilon must be > 0")


def _sign0(x: np.ndarray) -> np.ndarray:
    # sign with sign(0) = 0
    return np.sign(x)


def photometric_l1(c: np.ndarray, c_gt: np.ndarray):
    """Mean absolute error over every element; gradient on the render."""
    c = np.asarray(c, dtype=np.float64)
    c_gt = np.asarray(c_gt, dtype=np.float64)
    if c.shape != c_gt.shape:
        raise ValueError(f"shape mismatch: {c.shape} vs {c_gt.shape}")
    diff = c - c_gt
    loss = float(np.mean(np.abs(diff)))
    grad = _sign0(diff) / diff.size
    return loss, grad


def inverse_depth_loss(d: np.ndarray, d_gt: np.ndarray, epsilon: float = 1e-3):
    """Mean |1/d_gt - 1/d| over pixels with valid (positive) ground truth.

    The rendered depth is clamped to >= epsilon before inversion; the
    gradient is zero wherever the clamp is active.
    """
    d = np.asarray(d, dtype=np.float64)
    d_gt = np.asarray(d_gt, dtype=np.float64)
    if d.shape != d_gt.shape:
        raise ValueError(f"shape mismatch: {d.shape} vs {d_gt.shape}")
    valid = d_gt > 0
    count = int(valid.sum())
    grad = np.zeros_like(d)
    if count == 0:
        return 0.0, grad
    dc = np.maximum(d, epsilon)
    inv_gt = np.where(valid, 1.0 / np.where(valid, d_gt, 1.0), 0.0)
    term = np.where(valid, np.abs(inv_gt - 1.0 / dc), 0.0)
    loss = float(term.sum() / count)
    # d/dd |1/gt - 1/dc| = sign(1/gt - 1/dc) * (1/dc^2) * [d > epsilon]
    s = _sign0(inv_gt - 1.0 / dc)
    grad = np.where(valid & (d > epsilon), s / (dc * dc), 0.0) / count
    return loss, grad


def tv_loss(x: np.ndarray):
    """Anisotropic total variation: mean over neighbor pairs of the
    absolute difference, summed over channels. Accepts H x W or H x W x c."""
    x = np.asarray(x, dtype=np.float64)
    squeeze = x.ndim == 2
    if squeeze:
        x = x[:, :, None]
    h, w, _ = x.shape
    if h < 2 or w < 2:
        raise ValueError("tv_loss needs at least a 2x2 map")
    dv = x[1:, :, :] - x[:-1, :, :]
    dh = x[:, 1:, :] - x[:, :-1, :]
    pairs = (h - 1) * w + h * (w - 1)
    loss = float((np.abs(dv).sum() + np.abs(dh).sum()) / pairs)
    grad = np.zeros_like(x)
    sv = _sign0(dv) / pairs
    sh = _sign0(dh) / pairs
    grad[1:, :, :] += sv
    grad[:-1, :, :] -= sv
    grad[:, 1:, :] += sh
    grad[:, :-1, :] -= sh
    if squeeze:
        grad = grad[:, :, 0]
    return loss, grad


def region_smoothness_loss(f: np.ndarray, regions: np.ndarray, min_pixels: int = 1000):
    """Mean absolute deviation of features from their per-region mean.

    Only regions with strictly more than min_pixels pixels contribute; the
    total is divided by (contributing pixels * channels). Label 0 marks
    unlabeled pixels and never forms a region. The region mean is part of
    the computation graph, so the gradient flows through it too.
    """
    f = np.asarray(f, dtype=np.float64)
    regions = np.asarray(regions)
    if f.shape[:2] != regions.shape:
        raise ValueError(f"label map {regions.shape} does not match feature map {f.shape[:2]}")
    d = f.shape[2]
    grad = np.zeros_like(f)
    labels, counts = np.unique(regions, return_counts=True)
    total = 0.0
    contributing = 0
    for lab, cnt in zip(labels, counts):
        if lab == 0 or cnt <= min_pixels:
            continue
        mask = regions == lab
        vals = f[mask]  # cnt x d
        mean = vals.mean(axis=0)
        diff = vals - mean
        total += float(np.abs(diff).sum())
        contributing += int(cnt)
        s = _sign0(diff)
        # d|v - mean|/dv_j = s_j - (1/cnt) sum_i s_i
        g = s - s.sum(axis=0, keepdims=True) / cnt
        grad[mask] += g
    if contributing == 0:
        return 0.0, np.zeros_like(f)
    denom = contributing * d
    return total / denom, grad / denom


def total_loss(render, frame, weights: LossWeights, include_region: bool = True):
    """Composite objective and its gradients on rendered color, depth and
    feature maps. Returns (loss, grads dict, per-term breakdown dict).

    L = L1(color) + inverse-depth + L1(feature)
        + lam * (TV(color) + TV(depth) + TV(feature) + region smoothness)

    include_region=False drops the region-smoothness term (ablation switch).
    """
    c_gt = np.asarray(frame.color, dtype=np.float64) / 255.0
    l1, g_c = photometric_l1(render.color, c_gt)
    ldep, g_d = inverse_depth_loss(render.depth, frame.depth, weights.depth_epsilon)
    lfeat, g_f = photometric_l1(render.feature, frame.feature_comp)

    tv_c, g_tv_c = tv_loss(render.color)
    tv_d, g_tv_d = tv_loss(render.depth)
    tv_f, g_tv_f = tv_loss(render.feature)
    if include_region:
        l_rs, g_rs = region_smoothness_loss(render.feature, frame.labels, weights.region_min_pixels)
    else:
        l_rs, g_rs = 0.0, 0.0

    lam = weights.lam
    loss = l1 + ldep + lfeat + lam * (tv_c + tv_d + tv_f + l_rs)
    grads = {
        "color": g_c + lam * g_tv_c,
        "depth": g_d + lam * g_tv_d,
        "feature": g_f + lam * (g_tv_f + g_rs),
    }
    parts = {
        "l1": l1,
        "inverse_depth": ldep,
        "feature_l1": lfeat,
        "tv_color": tv_c,
        "tv_depth": tv_d,
        "tv_feature": tv_f,
        "region_smoothness": l_rs,
        "total": loss,
    }
    return loss, grads, parts
