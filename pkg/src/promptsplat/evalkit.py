"""Evaluation metrics: per-class IoU, PSNR on quantized renders, and
query throughput measurement with an injectable clock."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

PSNR_INF = float("inf")


def miou(pred_masks: dict, gt_masks: dict):
    """Per-class IoU in percent plus the mean over scorable classes.

    Classes whose union is empty (absent from both masks) are excluded
    from the mean and listed separately. Returns (per_class, mean, skipped).
    """
    per_class = {}
    skipped = []
    for name in gt_masks:
        if name not in pred_masks:
            raise ValueError(f"prediction missing class {name!r}")
        p = np.asarray(pred_masks[name], dtype=bool)
        g = np.asarray(gt_masks[name], dtype=bool)
        if p.shape != g.shape:
            raise ValueError(f"class {name!r}: shape {p.shape} != {g.shape}")
        union = np.logical_or(p, g).sum()
        if union == 0:
            skipped.append(name)
            continue
        inter = np.logical_and(p, g).sum()
        per_class[name] = 100.0 * float(inter) / float(union)
    mean = float(np.mean(list(per_class.values()))) if per_class else 0.0
    return per_class, mean, skipped


def quantize_u8(img: np.ndarray) -> np.ndarray:
    return np.clip(np.round(np.asarray(img, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)


def psnr(img: np.ndarray, ref: np.ndarray, quantize: bool = True) -> float:
    """10*log10(1/MSE) over [0,1] images; identical inputs give +inf.

    By default both images pass through 8-bit quantization first, matching
    how renders are actually displayed and stored.
    """
    a = np.asarray(img, dtype=np.float64)
    b = np.asarray(ref, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if quantize:
        a = quantize_u8(a) / 255.0
        b = quantize_u8(b) / 255.0
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_INF
    return 10.0 * np.log10(1.0 / mse)


@dataclass
class BenchReport:
    median_ms: float
    p95_ms: float
    mean_ms: float
    fps: float
    samples_ms: list = field(default_factory=list)
    label: str = ""

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "median_ms": self.median_ms,
            "p95_ms": self.p95_ms,
            "mean_ms": self.mean_ms,
            "fps": self.fps,
            "n": len(self.samples_ms),
        }


def bench(fn, n_repeats: int, warmup: int = 1, clock=None, label: str = "") -> BenchReport:
    """Time fn() n_repeats times after warmup runs; FPS = 1000/median_ms.

    clock is injectable (defaults to time.perf_counter) so the statistics
    are testable with synthetic timings.
    """
    if n_repeats < 1:
        raise ValueError("n_repeats must be >= 1")
    clock = clock or time.perf_counter
    for _ in range(warmup):
        fn()
    samples = []
    for _ in range(n_repeats):
        t0 = clock()
        fn()
        t1 = clock()
        samples.append((t1 - t0) * 1000.0)
    arr = np.asarray(samples)
    median = float(np.median(arr))
    p95 = float(np.percentile(arr, 95))
    return BenchReport(
        median_ms=median,
        p95_ms=p95,
        mean_ms=float(arr.mean()),
        fps=1000.0 / median if median > 0 else PSNR_INF,
        samples_ms=samples,
        label=label,
    )


def bench_query(checkpoint, codec, lexicon, prompts, n_repeats: int = 10, t: float = 0.5,
                clock=None, camera=None) -> BenchReport:
    """Wall-clock latency of full query_frame calls, cycling the prompts."""
    from .query import query_frame

    prompts = list(prompts)
    state = {"i": 0}

    def one():
        p = prompts[state["i"] % len(prompts)]
        state["i"] += 1
        query_frame(checkpoint, codec, lexicon, t, prompt=p, camera=camera)

    return bench(one, n_repeats, warmup=1, clock=clock, label="query")
