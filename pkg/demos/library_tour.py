#!/usr/bin/env python3
"""The same workflow as demos/quickstart.sh, but through the Python API:
generate, train, render, query and benchmark a tiny scene in-process.

Run from anywhere; writes into ./demo_out_py.
"""

import os

import numpy as np

from promptsplat.codec import load_codec
from promptsplat.dataio import export_image, load_dataset
from promptsplat.evalkit import bench_query, miou, psnr
from promptsplat.query import load_lexicon, query_frame
from promptsplat.rasterizer import render_scene
from promptsplat.scene import Camera
from promptsplat.synthetic import gen_synthetic
from promptsplat.trainer import TrainConfig, train_scene

OUT = "demo_out_py"


def main() -> None:
    # 1. a deterministic synthetic scene with exact labels and embeddings
    manifest = gen_synthetic(
        os.path.join(OUT, "dataset"), classes=3, frames=30, resolution=(64, 64), seed=0
    )
    print(f"dataset at {manifest}")

    # 2. codec: the CLI step compresses every frame; in-process we lean on it
    from promptsplat import cli

    assert cli.main(["codec-train", "--manifest", manifest, "--epochs", "10"]) == 0

    # 3. short training run
    dataset = load_dataset(manifest)
    config = TrainConfig(iterations=400, seed=0)
    ckpt, history = train_scene(dataset, config, out_dir=os.path.join(OUT, "run"))
    print(f"trained {ckpt.iteration} iters, {ckpt.cloud.n} splats")
    if history["psnr"]:
        print(f"eval psnr history: {[round(p, 2) for _, p in history['psnr']]}")

    # 4. render the trained camera and a novel look-at pose
    camera = Camera.from_dict(ckpt.scene["camera"])
    frame = render_scene(ckpt.cloud, camera, field=ckpt.field, t=0.5,
                         track_features=config.enable_tracker)
    export_image(os.path.join(OUT, "color.png"), frame.color)
    novel = Camera.look_at([0.9, 0.5, -2.2], [0, 0, 3], width=64, height=64)
    side = render_scene(ckpt.cloud, novel, field=ckpt.field, t=0.5,
                        track_features=config.enable_tracker)
    export_image(os.path.join(OUT, "novel_view.png"), side.color)

    # 5. query each prompt and score against the ground-truth labels
    codec = load_codec(dataset.codec_path)
    lexicon = load_lexicon(dataset.lexicon_path)
    test_frame = dataset.frames[dataset.test_indices[0]]
    pred, gt = {}, {}
    for prompt, label in dataset.extra["prompt_classes"].items():
        res = query_frame(ckpt, codec, lexicon, t=test_frame.timestamp, prompt=prompt)
        export_image(os.path.join(OUT, f"mask_{prompt}.png"), res.mask_u8())
        pred[prompt] = res.mask
        gt[prompt] = test_frame.labels == label
        print(f"{prompt}: scores {res.relevancy.min():.3f}..{res.relevancy.max():.3f}, "
              f"mask covers {100 * res.mask.mean():.1f}%")
    per_class, mean_iou, _ = miou(pred, gt)
    print("iou:", {k: round(v, 1) for k, v in per_class.items()}, f"mean {mean_iou:.1f}%")

    held_out = render_scene(ckpt.cloud, camera, field=ckpt.field,
                            t=test_frame.timestamp, track_features=config.enable_tracker)
    print(f"held-out psnr: {psnr(held_out.color, np.asarray(test_frame.color) / 255.0):.2f} dB")

    # 6. latency
    rep = bench_query(ckpt, codec, lexicon, list(pred), n_repeats=5)
    print(f"query latency: median {rep.median_ms:.1f} ms ({rep.fps:.2f} fps)")


if __name__ == "__main__":
    main()
