"""Acceptance suite.

One test per acceptance criterion, each printing a single PASS/FAIL line
with the measured numbers. The full synthetic pipeline (dataset generation,
codec training, 3000-iteration scene optimization) runs inside module-scoped
fixtures, so this file is the expensive part of the test tree; the unit
tests elsewhere stay fast.

Budgets asserted here (gradient suite < 5 min, tiled-vs-oracle < 1 min,
pipeline <= 20 min) assume one free desktop-class core.
"""

import json
import os
import time

import numpy as np
import pytest

from promptsplat import cli
from promptsplat.codec import load_codec
from promptsplat.dataio import encode_png_bytes, load_dataset
from promptsplat.deform import init_deformation
from promptsplat.evalkit import bench_query
from promptsplat.gradcheck import format_report, run_all
from promptsplat.query import load_lexicon, query_frame, relevancy_score
from promptsplat.rasterizer import project_cloud, rasterize_forward, rasterize_oracle, render_scene
from promptsplat.scene import Camera, GaussianCloud, quat_normalize
from promptsplat.trainer import load_checkpoint

ABLATION_ITERS = 3000

ACCEPTANCE_LINES: list[str] = []


def _line(ok: bool, name: str, detail: str) -> None:
    msg = f"ACCEPTANCE {'PASS' if ok else 'FAIL'}: {name} ({detail})"
    print(msg)
    ACCEPTANCE_LINES.append(msg)
    assert ok, f"{name}: {detail}"


# ---------------------------------------------------------------------------
# cheap criteria first


def test_gradient_suite_matches_finite_differences():
    t0 = time.perf_counter()
    results = run_all(seed=0, n_configs=100)
    elapsed = time.perf_counter() - t0
    print(format_report(results))
    worst = max(results, key=lambda r: r.max_rel)
    ok = all(r.passed for r in results) and elapsed < 300.0
    _line(
        ok,
        "gradient suite",
        f"8 suites x 100 configs, worst rel {worst.max_rel:.2e} ({worst.name}), "
        f"tol 1e-3/1e-4, {elapsed:.1f}s < 300s",
    )


def _oracle_scene(rng, n):
    z = rng.uniform(1.8, 4.5, size=n)
    xy = rng.uniform(-0.45, 0.45, size=(n, 2)) * z[:, None]
    sh = np.zeros((n, 3, 4))
    sh[:, :, 0] = rng.normal(size=(n, 3)) * 0.35
    sh[:, :, 1:] = rng.normal(size=(n, 3, 3)) * 0.12
    return GaussianCloud(
        means=np.column_stack([xy, z]),
        rotations=rng.normal(size=(n, 4)),
        log_scales=np.log(rng.uniform(0.015, 0.16, size=(n, 3))),
        opacity_logits=rng.normal(size=n) * 1.5,
        sh_coeffs=sh,
        features=rng.normal(size=(n, 3)),
    )


def test_tiled_rasterizer_matches_oracle():
    rng = np.random.default_rng(0)
    cam = Camera.look_at([0, 0, 0], [0, 0, 1], width=64, height=64)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(100):
        n = int(rng.integers(1, 201))
        cloud = _oracle_scene(rng, n)
        batch, _ = project_cloud(
            cloud.means, quat_normalize(cloud.rotations), cloud.log_scales,
            cloud.opacity_logits, cloud.sh_coeffs, cloud.features, cam,
        )
        bg = rng.uniform(0, 1, size=3)
        fast = rasterize_forward(batch, 64, 64, bg_color=bg, bg_depth=2.0)
        slow = rasterize_oracle(batch, 64, 64, bg_color=bg, bg_depth=2.0)
        for name in ("color", "depth", "feature", "accum_alpha"):
            worst = max(worst, float(np.abs(getattr(fast, name) - getattr(slow, name)).max()))
    elapsed = time.perf_counter() - t0
    ok = worst < 1e-5 and elapsed < 60.0
    _line(
        ok,
        "tiled rasterizer vs brute-force oracle",
        f"100 scenes <=200 splats at 64x64, max abs diff {worst:.2e} < 1e-5, "
        f"{elapsed:.1f}s < 60s",
    )


def test_identity_deformation_is_pixel_exact():
    rng = np.random.default_rng(1)
    cloud = _oracle_scene(rng, 400)
    cam = Camera.look_at([0, 0, 0], [0, 0, 1], width=64, height=64)
    field = init_deformation(cloud.n, d=3)  # zero banks, zero tracker head
    static = render_scene(cloud, cam)
    identical = True
    for t in rng.uniform(0.0, 1.0, size=10):
        moved = render_scene(cloud, cam, field=field, t=float(t), track_features=True)
        for name in ("color", "depth", "feature", "accum_alpha"):
            if not np.array_equal(getattr(static, name), getattr(moved, name)):
                identical = False
    _line(
        identical,
        "identity deformation",
        "10 random times, all four output channels bit-identical to the static render",
    )


def test_query_math_spot_checks():
    sym = relevancy_score(np.array([1.0, 0.0]), np.array([0.8, 0.0]),
                          np.array([[0.8, 0.0], [0.1, 0.0], [0.0, 1.0], [-1.0, 0.0]]))
    unit = relevancy_score(np.array([1.0, 0.0]), np.array([1.0, 0.0]),
                           np.tile([-1.0, 0.0], (4, 1)))
    scores = np.array([[0.39999997, 0.4], [0.73, 0.1]], dtype=np.float32)
    mask = scores >= np.float32(0.4)
    ok = (
        sym == 0.5
        and np.isclose(unit, 1.0 / (1.0 + np.exp(-2.0)), rtol=1e-15)
        and mask.tolist() == [[False, True], [True, False]]
    )
    _line(
        ok,
        "query math spot checks",
        f"symmetric dots -> {sym}, unit-gap dots -> {unit:.6f} "
        f"(target {1.0 / (1.0 + np.exp(-2.0)):.6f}), mask == score >= 0.4",
    )


# ---------------------------------------------------------------------------
# full pipeline fixtures


def _run_pipeline(base: str) -> dict:
    """gen-synthetic -> codec-train -> train (3000 iters), all timed."""
    ds = os.path.join(base, "ds")
    run = os.path.join(base, "run")
    times = {}

    t0 = time.perf_counter()
    rc = cli.main(
        ["gen-synthetic", "--out", ds, "--classes", "3", "--frames", "60",
         "--resolution", "128x128", "--seed", "0"]
    )
    assert rc == 0
    times["gen"] = time.perf_counter() - t0

    manifest = os.path.join(ds, "manifest.json")
    t0 = time.perf_counter()
    rc = cli.main(["codec-train", "--manifest", manifest])
    assert rc == 0
    times["codec"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    rc = cli.main(["train", "--manifest", manifest, "--out", run, "--iterations", "3000"])
    assert rc == 0
    times["train"] = time.perf_counter() - t0

    return {
        "manifest": manifest,
        "ds": ds,
        "run": run,
        "checkpoint": os.path.join(run, "checkpoint"),
        "times": times,
    }


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    return _run_pipeline(str(tmp_path_factory.mktemp("accept")))


def test_end_to_end_synthetic_fixture(pipeline, tmp_path):
    report_path = tmp_path / "report.json"
    t0 = time.perf_counter()
    rc = cli.main(
        ["eval", "--checkpoint", pipeline["checkpoint"], "--manifest", pipeline["manifest"],
         "--split", "test", "--out", str(report_path)]
    )
    assert rc == 0
    eval_s = time.perf_counter() - t0
    report = json.loads(report_path.read_text())
    total = sum(pipeline["times"].values()) + eval_s

    ious = report["iou_per_class"]
    ok = (
        report["n_frames"] == 8
        and len(ious) == 3
        and all(v >= 70.0 for v in ious.values())
        and report["psnr_mean"] >= 25.0
        and total <= 1200.0
    )
    iou_text = ", ".join(f"{k} {v:.1f}%" for k, v in sorted(ious.items()))
    _line(
        ok,
        "end-to-end synthetic fixture",
        f"8 held-out frames: IoU {iou_text} (>= 70%), "
        f"psnr {report['psnr_mean']:.2f} dB (>= 25), "
        f"pipeline {total:.0f}s (<= 1200s: gen {pipeline['times']['gen']:.0f} "
        f"+ codec {pipeline['times']['codec']:.0f} + train {pipeline['times']['train']:.0f} "
        f"+ eval {eval_s:.0f})",
    )


def test_bench_query_report_monotone_with_resolution(pipeline):
    ckpt = load_checkpoint(pipeline["checkpoint"])
    ds = load_dataset(pipeline["manifest"])
    codec = load_codec(ds.codec_path)
    lexicon = load_lexicon(ds.lexicon_path)
    prompts = sorted(ds.extra["prompt_classes"])
    reports = []
    for side in (64, 128, 192):
        cam = Camera.look_at([0, 0, 0], [0, 0, 1], width=side, height=side)
        rep = bench_query(ckpt, codec, lexicon, prompts, n_repeats=3, camera=cam)
        reports.append((side, rep))
        print(
            f"bench_query {side}x{side}: median {rep.median_ms:.1f} ms, "
            f"p95 {rep.p95_ms:.1f} ms, {rep.fps:.2f} fps"
        )
    medians = [rep.median_ms for _, rep in reports]
    ok = all(m > 0 for m in medians) and medians[0] < medians[1] < medians[2]
    _line(
        ok,
        "query throughput report",
        "median latency produced and monotone with resolution: "
        + " < ".join(f"{m:.1f}ms@{s}px" for (s, _), m in zip(reports, medians)),
    )


def _query_mask_bytes(run: dict) -> dict:
    ckpt = load_checkpoint(run["checkpoint"])
    ds = load_dataset(run["manifest"])
    codec = load_codec(ds.codec_path)
    lexicon = load_lexicon(ds.lexicon_path)
    out = {}
    for prompt in sorted(ds.extra["prompt_classes"]):
        for t in (0.0, 0.5, 1.0):
            res = query_frame(ckpt, codec, lexicon, t=t, prompt=prompt)
            out[(prompt, t)] = encode_png_bytes(res.mask_u8())
    return out


def test_determinism_bit_identical_reruns(pipeline, tmp_path_factory):
    second = _run_pipeline(str(tmp_path_factory.mktemp("accept2")))

    ck1, ck2 = pipeline["checkpoint"], second["checkpoint"]
    names1 = sorted(os.listdir(ck1))
    names2 = sorted(os.listdir(ck2))
    files_equal = names1 == names2 and all(
        open(os.path.join(ck1, n), "rb").read() == open(os.path.join(ck2, n), "rb").read()
        for n in names1
    )
    masks1 = _query_mask_bytes(pipeline)
    masks2 = _query_mask_bytes(second)
    masks_equal = masks1 == masks2
    ok = files_equal and masks_equal
    _line(
        ok,
        "determinism",
        f"two seed-0 pipeline runs: {len(names1)} checkpoint files byte-identical"
        f"={files_equal}, {len(masks1)} query mask PNGs byte-identical={masks_equal}",
    )


def test_ablation_direction(pipeline):
    variants = {"full": [], "no_region": ["--no-region-loss"], "no_tracker": ["--no-tracker"]}
    psnr = {}
    for seed in (0, 1, 2):
        for name, extra in variants.items():
            out = os.path.join(pipeline["ds"], "..", f"abl_{name}_{seed}")
            if name == "full" and seed == 0 and ABLATION_ITERS == 3000:
                # same flags as the pipeline fixture and training is
                # deterministic (asserted separately), so reuse that run
                ckpt = pipeline["checkpoint"]
                os.makedirs(out, exist_ok=True)
            else:
                rc = cli.main(
                    ["train", "--manifest", pipeline["manifest"], "--out", out,
                     "--iterations", str(ABLATION_ITERS), "--seed", str(seed)] + extra
                )
                assert rc == 0
                ckpt = os.path.join(out, "checkpoint")
            report = os.path.join(out, "report.json")
            rc = cli.main(
                ["eval", "--checkpoint", ckpt,
                 "--manifest", pipeline["manifest"], "--out", report]
            )
            assert rc == 0
            psnr[(name, seed)] = json.loads(open(report).read())["psnr_mean"]
            print(f"ablation {name} seed {seed}: psnr {psnr[(name, seed)]:.2f} dB")

    per_seed = []
    for seed in (0, 1, 2):
        full = psnr[("full", seed)]
        per_seed.append(full >= psnr[("no_region", seed)] and full >= psnr[("no_tracker", seed)])
    ok = all(per_seed)
    detail = "; ".join(
        f"seed {s}: full {psnr[('full', s)]:.2f} vs no-region {psnr[('no_region', s)]:.2f} "
        f"vs no-tracker {psnr[('no_tracker', s)]:.2f}"
        for s in (0, 1, 2)
    )
    _line(ok, "ablation direction", f"{ABLATION_ITERS} iters, held-out psnr: {detail}")
