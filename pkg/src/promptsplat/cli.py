"""Command-line entry points.

Subcommands cover the full workflow: synthetic data generation, codec
training, scene optimization, rendering, language queries, evaluation,
gradient verification, and the HTTP service.

Exit codes: 0 on success, 1 for usage errors (bad flags or missing
required arguments), 2 for runtime failures.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_RUNTIME = 2


class UsageError(Exception):
    """Invocation problem: wrong flags, bad values, missing arguments."""


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 on usage errors; we reserve 2 for
    # runtime failures, so route them through UsageError instead
    def error(self, message):
        raise UsageError(message)


def _parse_resolution(text: str) -> tuple[int, int]:
    try:
        if "x" in text.lower():
            h, w = text.lower().split("x")
            return int(h), int(w)
        side = int(text)
        return side, side
    except ValueError:
        raise UsageError(f"--resolution expects SIZE or HxW, got {text!r}") from None


def _parse_vec3(text: str, flag: str) -> np.ndarray:
    parts = text.split(",")
    if len(parts) != 3:
        raise UsageError(f"{flag} expects three comma-separated numbers, got {text!r}")
    try:
        return np.array([float(p) for p in parts])
    except ValueError:
        raise UsageError(f"{flag} expects three comma-separated numbers, got {text!r}") from None


def _add_camera_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--eye", help="camera position as x,y,z (overrides the trained camera)")
    p.add_argument("--target", help="look-at point as x,y,z (requires --eye)")
    p.add_argument("--up", default="0,1,0", help="up hint as x,y,z")
    p.add_argument("--fov", type=float, default=60.0, help="vertical field of view in degrees")


def _camera_from_args(args, checkpoint):
    """Optional look-at override; None means the checkpoint camera."""
    from .scene import Camera

    if args.eye is None and args.target is None:
        return None
    if args.eye is None or args.target is None:
        raise UsageError("--eye and --target must be given together")
    h, w = checkpoint.scene["resolution"]
    return Camera.look_at(
        eye=_parse_vec3(args.eye, "--eye"),
        target=_parse_vec3(args.target, "--target"),
        up=_parse_vec3(args.up, "--up"),
        fov_deg=args.fov,
        width=int(w),
        height=int(h),
    )


def _load_manifest(path: str) -> tuple[dict, str]:
    path = os.path.abspath(path)
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh), os.path.dirname(path)


def _resolve_codec_lexicon(args):
    """Locate the codec and lexicon from --codec/--lexicon or --manifest."""
    from .codec import load_codec
    from .query import load_lexicon

    codec_path = getattr(args, "codec", None)
    lex_path = getattr(args, "lexicon", None)
    if getattr(args, "manifest", None) and not (codec_path and lex_path):
        man, root = _load_manifest(args.manifest)
        if codec_path is None:
            rel = man.get("codec")
            if not rel:
                raise RuntimeError(
                    "manifest has no trained codec; run codec-train first or pass --codec"
                )
            codec_path = os.path.join(root, rel)
        if lex_path is None:
            lex_path = os.path.join(root, man["lexicon"])
    if not (codec_path and lex_path):
        raise UsageError("either --manifest or both --codec and --lexicon are required")
    return load_codec(codec_path), load_lexicon(lex_path)


# ---------------------------------------------------------------------------
# subcommand handlers


def _cmd_gen_synthetic(args) -> int:
    from .synthetic import gen_synthetic

    h, w = _parse_resolution(args.resolution)
    path = gen_synthetic(
        out_dir=args.out,
        classes=args.classes,
        frames=args.frames,
        resolution=(h, w),
        seed=args.seed,
        feature_dim=args.feature_dim,
        d=args.d,
        objects=args.objects,
        noise=args.noise,
        fps=args.fps,
    )
    print(f"wrote {path}")
    return EXIT_OK


def _cmd_codec_train(args) -> int:
    from .codec import encode, save_codec, train_codec
    from .dataio import read_tensor, write_tensor

    man, root = _load_manifest(args.manifest)
    maps = []
    for i, fr in enumerate(man["frames"]):
        rel = fr.get("feature_full")
        if not rel:
            raise RuntimeError(f"frame {i} has no full-dimensional feature map")
        maps.append(read_tensor(os.path.join(root, rel)))
    feature_dim = maps[0].shape[-1]
    stacked = np.concatenate([m.reshape(-1, feature_dim) for m in maps])
    codec, history = train_codec(
        stacked,
        d=man["d"],
        epochs=args.epochs,
        lr=args.lr,
        batch_size=args.batch_size,
        seed=args.seed,
        max_samples=args.max_samples,
    )

    codec_rel = "codec/codec.json"
    os.makedirs(os.path.join(root, "codec"), exist_ok=True)
    save_codec(codec, os.path.join(root, codec_rel))

    for fr, full in zip(man["frames"], maps):
        h, w, _ = full.shape
        comp = encode(codec, full.reshape(-1, feature_dim)).reshape(h, w, -1)
        stem, ext = os.path.splitext(fr["feature_full"])
        if "feature_full" in stem:
            rel = stem.replace("feature_full", "feature_comp") + ext
        else:
            rel = stem + "_comp" + ext
        write_tensor(os.path.join(root, rel), comp.astype(np.float32))
        fr["feature_comp"] = rel.replace(os.sep, "/")
    man["codec"] = codec_rel
    man_path = os.path.join(root, "manifest.json")
    with open(man_path, "w", encoding="utf-8") as fh:
        json.dump(man, fh, indent=1)
    print(
        f"codec trained on {stacked.shape[0]} vectors "
        f"(final loss {history[-1]['loss']:.6f}); wrote {codec_rel} "
        f"and {len(maps)} compressed maps"
    )
    return EXIT_OK


def _cmd_train(args) -> int:
    from .dataio import load_dataset
    from .trainer import TrainConfig, train_scene

    dataset = load_dataset(args.manifest)
    missing = [i for i in dataset.train_indices if dataset.frames[i].feature_comp is None]
    if missing:
        raise RuntimeError(
            f"{len(missing)} training frames have no compressed feature maps; "
            "run codec-train first"
        )
    kwargs = dict(
        iterations=args.iterations,
        seed=args.seed,
        enable_tracker=not args.no_tracker,
        enable_region_loss=not args.no_region_loss,
        fdm_basis=args.fdm_basis,
        init_stride=args.init_stride,
        background_grid=args.background_grid,
        psnr_interval=args.psnr_interval,
        lr_decay=args.lr_decay,
    )
    if args.lr is not None:
        kwargs["learning_rate"] = args.lr
    config = TrainConfig(**kwargs)

    os.makedirs(args.out, exist_ok=True)
    log_path = args.log or os.path.join(args.out, "train_log.jsonl")
    with open(log_path, "w", encoding="utf-8") as lf:
        ckpt, history = train_scene(dataset, config, out_dir=args.out, log_file=lf)
    final_psnr = history["psnr"][-1][1] if history["psnr"] else float("nan")
    print(
        f"trained {ckpt.iteration} iterations, {ckpt.cloud.n} splats, "
        f"eval psnr {final_psnr:.2f} dB"
    )
    print(f"checkpoint: {os.path.join(args.out, 'checkpoint')}")
    return EXIT_OK


def _cmd_render(args) -> int:
    from .dataio import export_image
    from .evalkit import quantize_u8
    from .rasterizer import render_scene
    from .trainer import load_checkpoint

    ckpt = load_checkpoint(args.checkpoint)
    camera = _camera_from_args(args, ckpt)
    if camera is None:
        from .scene import Camera

        camera = Camera.from_dict(ckpt.scene["camera"])
    out = render_scene(
        ckpt.cloud,
        camera,
        field=ckpt.field,
        t=args.time,
        track_features=ckpt.config.enable_tracker,
    )
    if args.mode == "color":
        img = quantize_u8(out.color)
    elif args.mode == "depth":
        peak = max(float(out.depth.max()), 1e-12)
        img = quantize_u8(out.depth / peak)
    else:  # accum
        img = quantize_u8(out.accum_alpha)
    export_image(args.out, img)
    print(f"wrote {args.out}")
    return EXIT_OK


def _derived_heatmap_path(mask_path: str) -> str:
    stem, ext = os.path.splitext(mask_path)
    return stem + "-heatmap" + (ext or ".png")


def _cmd_query(args) -> int:
    from .dataio import export_image
    from .query import query_frame
    from .trainer import load_checkpoint

    if (args.prompt is None) == (args.embedding is None):
        raise UsageError("exactly one of --prompt or --embedding is required")
    if not 0.0 <= args.threshold <= 1.0:
        raise UsageError(f"--threshold must be in [0, 1], got {args.threshold}")
    embedding = None
    if args.embedding is not None:
        try:
            embedding = np.array([float(v) for v in args.embedding.split(",")])
        except ValueError:
            raise UsageError("--embedding expects comma-separated numbers") from None

    codec, lexicon = _resolve_codec_lexicon(args)
    ckpt = load_checkpoint(args.checkpoint)
    camera = _camera_from_args(args, ckpt)
    result = query_frame(
        ckpt,
        codec,
        lexicon,
        t=args.time,
        prompt=args.prompt,
        embedding=embedding,
        threshold=args.threshold,
        camera=camera,
    )
    export_image(args.out, result.mask_u8())
    heat_path = args.heatmap or _derived_heatmap_path(args.out)
    export_image(heat_path, result.heatmap_u8())
    scores = result.relevancy
    print(
        f"prompt {result.prompt!r} at t={args.time:g}: "
        f"scores min {scores.min():.4f} max {scores.max():.4f} "
        f"mean {scores.mean():.4f}, mask covers {100.0 * result.mask.mean():.1f}% "
        f"(threshold {result.threshold:g})"
    )
    print(f"wrote {args.out} and {heat_path}")
    return EXIT_OK


def _cmd_eval(args) -> int:
    from .dataio import load_dataset
    from .evalkit import bench_query, miou, psnr
    from .query import score_feature_map
    from .rasterizer import render_scene
    from .trainer import load_checkpoint

    dataset = load_dataset(args.manifest)
    ckpt = load_checkpoint(args.checkpoint)
    codec, lexicon = _resolve_codec_lexicon(args)
    idx = {"test": dataset.test_indices, "train": dataset.train_indices}.get(
        args.split, list(range(len(dataset.frames)))
    )
    if not idx:
        raise RuntimeError(f"dataset has no {args.split!r} frames")

    prompt_classes = dataset.extra.get("prompt_classes", {})
    pred = {name: [] for name in prompt_classes}
    gt = {name: [] for name in prompt_classes}
    psnrs = []
    for i in idx:
        frame = dataset.frames[i]
        camera = dataset.cameras[frame.camera_index]
        out = render_scene(
            ckpt.cloud,
            camera,
            field=ckpt.field,
            t=frame.timestamp,
            track_features=ckpt.config.enable_tracker,
        )
        psnrs.append(psnr(out.color, np.asarray(frame.color, dtype=np.float64) / 255.0))
        for name, label in prompt_classes.items():
            scores = score_feature_map(
                out.feature, codec, lexicon.embedding(name), lexicon.canonical_matrix
            )
            pred[name].append(scores >= np.float32(args.threshold))
            gt[name].append(frame.labels == label)

    per_class, mean_iou, skipped = miou(
        {k: np.concatenate(v) for k, v in pred.items()},
        {k: np.concatenate(v) for k, v in gt.items()},
    )
    report = {
        "split": args.split,
        "n_frames": len(idx),
        "threshold": args.threshold,
        "psnr_mean": float(np.mean(psnrs)),
        "psnr_per_frame": [float(p) for p in psnrs],
        "iou_per_class": per_class,
        "miou": mean_iou,
        "iou_skipped": skipped,
    }
    if args.bench:
        rep = bench_query(
            ckpt, codec, lexicon, prompts=list(prompt_classes), n_repeats=args.bench
        )
        report["bench"] = rep.to_dict()

    text = json.dumps(report, indent=2)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
        print(f"wrote {args.out}")
    else:
        print(text)
    print(f"psnr {report['psnr_mean']:.2f} dB over {len(idx)} {args.split} frames")
    for name in sorted(per_class):
        print(f"iou {name}: {per_class[name]:.1f}%")
    return EXIT_OK


def _cmd_grad_check(args) -> int:
    from .gradcheck import SUITES, format_report, run_all

    suites = None
    if args.suites:
        suites = [s.strip() for s in args.suites.split(",") if s.strip()]
        unknown = [s for s in suites if s not in SUITES]
        if unknown:
            raise UsageError(
                f"unknown suites {unknown}; available: {', '.join(SUITES)}"
            )
    results = run_all(seed=args.seed, n_configs=args.configs, suites=suites)
    print(format_report(results))
    return EXIT_OK if all(r.passed for r in results) else EXIT_RUNTIME


def _cmd_serve(args) -> int:
    from .service import ServeConfig, run_server

    codec_path = args.codec
    lex_path = args.lexicon
    if args.manifest and not (codec_path and lex_path):
        man, root = _load_manifest(args.manifest)
        if codec_path is None:
            rel = man.get("codec")
            if not rel:
                raise RuntimeError(
                    "manifest has no trained codec; run codec-train first or pass --codec"
                )
            codec_path = os.path.join(root, rel)
        if lex_path is None:
            lex_path = os.path.join(root, man["lexicon"])
    if not (codec_path and lex_path):
        raise UsageError("either --manifest or both --codec and --lexicon are required")
    config = ServeConfig(
        checkpoint=args.checkpoint,
        codec=codec_path,
        lexicon=lex_path,
        host=args.host,
        port=args.port,
        max_concurrent=args.max_concurrent,
        frontend=args.frontend,
    )
    run_server(config)
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser assembly


def _build_parser() -> _Parser:
    parser = _Parser(prog="promptsplat", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="cmd", metavar="COMMAND")

    p = sub.add_parser("gen-synthetic", help="write a synthetic labeled dataset")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.add_argument("--classes", type=int, default=3)
    p.add_argument("--frames", type=int, default=60)
    p.add_argument("--resolution", default="128x128", help="SIZE or HxW")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--feature-dim", type=int, default=16)
    p.add_argument("--d", type=int, default=3, help="compressed feature dimension")
    p.add_argument("--objects", type=int, default=None)
    p.add_argument("--noise", type=float, default=0.02)
    p.add_argument("--fps", type=float, default=30.0)
    p.set_defaults(func=_cmd_gen_synthetic)

    p = sub.add_parser("codec-train", help="train the feature codec and compress all frames")
    p.add_argument("--manifest", required=True, help="dataset manifest.json")
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--batch-size", type=int, default=1024)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-samples", type=int, default=120_000)
    p.set_defaults(func=_cmd_codec_train)

    p = sub.add_parser("train", help="optimize a dynamic scene on a dataset")
    p.add_argument("--manifest", required=True, help="dataset manifest.json")
    p.add_argument("--out", required=True, help="output directory for the checkpoint")
    p.add_argument("--iterations", type=int, default=3000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--lr-decay", type=float, default=1.0)
    p.add_argument("--no-tracker", action="store_true", help="disable feature refinement")
    p.add_argument("--no-region-loss", action="store_true", help="disable region smoothness")
    p.add_argument("--fdm-basis", type=int, default=16)
    p.add_argument("--init-stride", type=int, default=2)
    p.add_argument("--background-grid", type=int, default=24)
    p.add_argument("--psnr-interval", type=int, default=100)
    p.add_argument("--log", default=None, help="JSONL log path (default <out>/train_log.jsonl)")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("render", help="render a trained scene at a time value")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--time", type=float, default=0.0)
    p.add_argument("--out", required=True, help="output image path (.png)")
    p.add_argument("--mode", choices=["color", "depth", "accum"], default="color")
    _add_camera_flags(p)
    p.set_defaults(func=_cmd_render)

    p = sub.add_parser("query", help="language query against a trained scene")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--prompt", default=None)
    p.add_argument("--embedding", default=None, help="raw query vector, comma separated")
    p.add_argument("--time", type=float, required=True)
    p.add_argument("--out", required=True, help="output mask image path")
    p.add_argument("--heatmap", default=None, help="heatmap path (default <out>-heatmap)")
    p.add_argument("--threshold", type=float, default=0.4)
    p.add_argument("--manifest", default=None, help="dataset manifest (locates codec + lexicon)")
    p.add_argument("--codec", default=None)
    p.add_argument("--lexicon", default=None)
    _add_camera_flags(p)
    p.set_defaults(func=_cmd_query)

    p = sub.add_parser("eval", help="PSNR and query IoU on a dataset split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", default=None, help="write the JSON report here")
    p.add_argument("--threshold", type=float, default=0.4)
    p.add_argument("--split", choices=["test", "train", "all"], default="test")
    p.add_argument("--bench", type=int, default=0, help="also time N query calls")
    p.add_argument("--codec", default=None)
    p.add_argument("--lexicon", default=None)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("grad-check", help="finite-difference verification of all gradients")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--configs", type=int, default=100)
    p.add_argument("--suites", default=None, help="comma-separated subset of suite names")
    p.set_defaults(func=_cmd_grad_check)

    p = sub.add_parser("serve", help="run the HTTP query service")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", default=None, help="dataset manifest (locates codec + lexicon)")
    p.add_argument("--codec", default=None)
    p.add_argument("--lexicon", default=None)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--max-concurrent", type=int, default=4)
    p.add_argument("--frontend", default=None, help="static files directory to serve at /")
    p.set_defaults(func=_cmd_serve)

    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if getattr(args, "func", None) is None:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except KeyboardInterrupt:
        return EXIT_RUNTIME
    except Exception as exc:  # noqa: BLE001 - CLI boundary maps failures to exit 2
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
