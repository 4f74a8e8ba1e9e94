"""Synthetic deforming-scene generator with exact ground truth.

The scene is a set of soft 3D Gaussian-shaped blobs drifting along smooth
sinusoidal paths in front of an opaque plane. Color and depth come from
closed-form volumetric compositing along each pixel ray (absorption
1 - exp(-tau), tau Gaussian in the ray/center distance), so the renderer's
blend model can represent the data well. Labels mark the front-most blob
whose own absorption reaches 0.5; everything else is the background class.

Per-pixel semantic embeddings are unit vectors near mutually orthogonal
class axes in the full feature dimension. Class axes drift slowly with
time toward a paired auxiliary axis, so features are genuinely dynamic
(a static feature field cannot fit every frame). The emitted lexicon's
prompt embeddings equal the clean class axes, and the four canonical
entries cover the class axes plus the background axis.
"""

from __future__ import annotations

import json
import math
import os

import numpy as np

from . import dataio
from .scene import Camera

PROMPT_PALETTE = [
    "crimson", "emerald", "azure", "gold", "violet", "coral", "teal", "magenta",
]
CLASS_COLORS = np.array(
    [
        [0.86, 0.10, 0.26],
        [0.05, 0.78, 0.36],
        [0.12, 0.46, 0.96],
        [0.95, 0.78, 0.10],
        [0.58, 0.20, 0.80],
        [0.98, 0.48, 0.36],
        [0.05, 0.62, 0.62],
        [0.90, 0.20, 0.75],
    ]
)
CANONICAL_PHRASES = ("object", "things", "stuff", "texture")

ABSORPTION = 5.0     # peak optical depth through a blob center
BLOB_SIGMA = 0.19    # world-space blob width
PLANE_DEPTH = 4.0    # opaque background plane (camera z)
DRIFT_RATE = 0.5     # mean radians of class-axis rotation over the clip
MOD_AMP = 0.35       # within-object spread of the drift rate (radians)
MOD_FREQ = (2.0, 3.0)  # image-space cycles of the drift-rate modulation


def _orthonormal_axes(dim: int, count: int, rng: np.random.Generator) -> np.ndarray:
    q, r = np.linalg.qr(rng.normal(size=(dim, dim)))
    q *= np.sign(np.diag(r))  # fix signs so the factorization is unique
    return q.T[:count]


def _trajectory(j: int, n_objects: int, t: np.ndarray) -> np.ndarray:
    ang = 2.0 * math.pi * j / n_objects
    x = 0.25 * math.cos(ang) + 0.30 * np.sin(2.0 * math.pi * 0.6 * t + ang)
    y = 0.25 * math.sin(ang) + 0.22 * np.cos(2.0 * math.pi * 0.5 * t + ang + 0.7)
    z = 2.9 + 0.32 * np.sin(2.0 * math.pi * 0.35 * t + 1.3 * j) + 0.06 * j
    return np.stack([x, y, z], axis=-1)


def _background_image(h: int, w: int) -> np.ndarray:
    # smooth, low-frequency shading so TV and region terms see gradients
    ys, xs = np.meshgrid(np.linspace(-1, 1, h), np.linspace(-1, 1, w), indexing="ij")
    base = np.array([0.36, 0.31, 0.28])
    vign = 0.85 + 0.15 * np.exp(-(xs**2 + ys**2) / 0.9)
    img = base[None, None, :] * vign[:, :, None]
    img[:, :, 0] += 0.04 * xs
    img[:, :, 2] += 0.04 * ys
    return np.clip(img, 0.0, 1.0)


def gen_synthetic(
    out_dir: str,
    classes: int = 3,
    frames: int = 60,
    resolution: tuple[int, int] = (128, 128),
    seed: int = 0,
    feature_dim: int = 16,
    d: int = 3,
    objects: int | None = None,
    noise: float = 0.04,
    fps: float = 30.0,
) -> str:
    """Write a complete synthetic dataset; returns the manifest path.

    Deterministic for a fixed seed. Every i % 8 == 0 frame is held out as
    the test split.
    """
    if classes < 2:
        raise ValueError("classes must be >= 2")
    if frames < 2:
        raise ValueError("frames must be >= 2")
    h, w = resolution
    if h < 16 or w < 16:
        raise ValueError(f"resolution {h}x{w} below the 16x16 minimum")
    if feature_dim < 2 * classes + 2:
        raise ValueError(
            f"feature_dim {feature_dim} too small for {classes} classes "
            f"(needs >= {2 * classes + 2} for class, auxiliary and background axes)"
        )
    n_objects = objects if objects is not None else classes
    if n_objects < classes:
        raise ValueError("objects must be >= classes")

    rng = np.random.default_rng(seed)
    # axis layout: classes | background | auxiliary drift targets | spares
    axes = _orthonormal_axes(feature_dim, 2 * classes + 2, rng)
    class_axes = axes[:classes]
    bg_axis = axes[classes]
    aux_axes = axes[classes + 1 : 2 * classes + 1]
    spare_axis = axes[2 * classes + 1]

    camera = Camera(
        fx=0.9 * w,
        fy=0.9 * w,
        cx=(w - 1) / 2.0,
        cy=(h - 1) / 2.0,
        width=w,
        height=h,
        world_to_camera=np.eye(4),
        near=0.1,
        far=100.0,
    )

    # unit pixel rays (camera frame == world frame)
    us, vs = np.meshgrid(np.arange(w, dtype=np.float64), np.arange(h, dtype=np.float64))
    rays = np.stack([(us - camera.cx) / camera.fx, (vs - camera.cy) / camera.fy, np.ones_like(us)], axis=-1)
    rays /= np.linalg.norm(rays, axis=-1, keepdims=True)

    t_norm = np.arange(frames, dtype=np.float64) / (frames - 1)
    centers = np.stack([_trajectory(j, n_objects, t_norm) for j in range(n_objects)])  # J x F x 3
    obj_class = np.array([j % classes for j in range(n_objects)])
    bg_img = _background_image(h, w)
    bg_label = classes + 1

    # rows indexed by label-1: classes then background
    base_table = np.concatenate([class_axes, bg_axis[None]], axis=0)
    aux_table = np.concatenate([aux_axes, np.zeros((1, feature_dim))], axis=0)
    mod_phase = 2.0 * np.pi * (MOD_FREQ[0] * us / w + MOD_FREQ[1] * vs / h)
    phase_off = 2.399963 * np.arange(classes + 1)  # golden-angle spacing

    os.makedirs(os.path.join(out_dir, "frames"), exist_ok=True)
    frame_entries = []
    for i in range(frames):
        t = t_norm[i]
        alpha = np.empty((n_objects, h, w))
        zmap = np.empty((n_objects, h, w))
        shade = np.empty((n_objects, h, w))
        for j in range(n_objects):
            c = centers[j, i]
            tstar = rays @ c
            b2 = np.maximum(float(c @ c) - tstar * tstar, 0.0)
            g = np.exp(-b2 / (2.0 * BLOB_SIGMA**2))
            alpha[j] = 1.0 - np.exp(-ABSORPTION * g)
            zmap[j] = tstar * rays[:, :, 2]
            shade[j] = 0.80 + 0.20 * g

        order = np.argsort(zmap, axis=0, kind="stable")
        color = np.zeros((h, w, 3))
        depth = np.zeros((h, w))
        trans = np.ones((h, w))
        labels = np.full((h, w), bg_label, dtype=np.uint16)
        assigned = np.zeros((h, w), dtype=bool)
        for rank in range(n_objects):
            sel = order[rank]
            a = np.take_along_axis(alpha, sel[None], axis=0)[0]
            z = np.take_along_axis(zmap, sel[None], axis=0)[0]
            sh = np.take_along_axis(shade, sel[None], axis=0)[0]
            base = CLASS_COLORS[obj_class[sel] % len(CLASS_COLORS)]  # H x W x 3
            wgt = a * trans
            color += wgt[:, :, None] * (base * sh[:, :, None])
            depth += wgt * z
            trans *= 1.0 - a
            hit = (~assigned) & (a >= 0.5)
            labels[hit] = (obj_class[sel][hit] + 1).astype(np.uint16)
            assigned |= hit
        color += trans[:, :, None] * bg_img
        depth += trans * PLANE_DEPTH

        # each class axis rotates toward its auxiliary axis at a rate that
        # varies smoothly across the image, so features inside one object
        # change over time with real spatial structure; background is static
        ang = t * (DRIFT_RATE + MOD_AMP * np.sin(mod_phase + phase_off[labels - 1]))
        ang[labels == bg_label] = 0.0
        clean = (
            np.cos(ang)[:, :, None] * base_table[labels - 1]
            + np.sin(ang)[:, :, None] * aux_table[labels - 1]
        )
        feats = clean + rng.normal(0.0, noise, (h, w, feature_dim))
        feats /= np.linalg.norm(feats, axis=-1, keepdims=True)

        if i == 0:
            cos = np.einsum("hwf,hwf->hw", feats, clean)
            if cos.min() < 0.95:
                raise RuntimeError(
                    f"generator self-check failed: min embedding cosine {cos.min():.4f} < 0.95"
                )

        color_u8 = np.clip(np.round(color * 255.0), 0, 255).astype(np.uint8)
        names = {}
        for key, arr in (
            ("color", color_u8),
            ("depth", depth.astype(np.float32)),
            ("labels", labels),
            ("feature_full", feats.astype(np.float32)),
        ):
            rel = f"frames/{i:05d}_{key}.stpg"
            dataio.write_tensor(os.path.join(out_dir, rel), arr)
            names[key] = rel
        frame_entries.append(
            {
                "time": i / fps,
                "camera": 0,
                "split": "test" if i % 8 == 0 else "train",
                **names,
            }
        )

    prompts = {PROMPT_PALETTE[k]: class_axes[k] for k in range(classes)}
    # the 4 canonical slots hold up to three class axes plus the background
    # axis, so every on-class score pins at exactly 0.5 and background stays
    # below threshold; with >3 classes the extra classes go uncovered
    canon_pool = list(class_axes[:3]) + [bg_axis, spare_axis]
    canonical = {CANONICAL_PHRASES[i]: canon_pool[i] for i in range(4)}
    lexicon = {
        "canonical": {k: v.tolist() for k, v in canonical.items()},
        "prompts": {k: v.tolist() for k, v in prompts.items()},
    }
    with open(os.path.join(out_dir, "lexicon.json"), "w") as f:
        json.dump(lexicon, f)

    manifest = {
        "format": "promptsplat-dataset",
        "version": 1,
        "d": d,
        "feature_dim": feature_dim,
        "classes": [PROMPT_PALETTE[k] for k in range(classes)],
        "prompt_classes": {PROMPT_PALETTE[k]: k + 1 for k in range(classes)},
        "background_label": bg_label,
        "cameras": [camera.to_dict()],
        "lexicon": "lexicon.json",
        "codec": None,
        "frames": frame_entries,
    }
    manifest_path = os.path.join(out_dir, "manifest.json")
    with open(manifest_path, "w") as f:
        json.dump(manifest, f, indent=1)
    return manifest_path
