"""Training loop: per-iteration frame sampling, differentiable render,
composite loss, Adam update, post-step projections (sigma floor, unit
quaternions), checkpointing, and line-delimited loss logging.

Determinism contract: a fixed seed fixes the frame order and every update,
so two runs produce bit-identical checkpoints.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
from dataclasses import dataclass, field as dc_field

import numpy as np

from . import dataio
from .deform import (
    SIGMA_FLOOR,
    DeformationField,
    FdmParams,
    SemanticTracker,
    init_deformation,
)
from .losses import LossWeights, total_loss
from .optim import AdamState, adam_step
from .rasterizer import render_scene, render_scene_backward
from .scene import SH_C0, Camera, GaussianCloud, init_from_depth, quat_normalize

CHECKPOINT_FORMAT = "promptsplat-checkpoint"
CHECKPOINT_VERSION = 1

DEFAULT_LR_GROUPS = {
    "opacity_logits": 20.0,
    "log_scales": 3.0,
    "theta": 0.1,
    "sigma": 0.1,
}


class TrainingDivergedError(RuntimeError):
    def __init__(self, iteration: int, value: float, checkpoint_path: str | None):
        self.iteration = iteration
        self.value = value
        self.checkpoint_path = checkpoint_path
        where = f"; diagnostic checkpoint at {checkpoint_path}" if checkpoint_path else ""
        super().__init__(f"non-finite loss ({value}) at iteration {iteration}{where}")


class CheckpointError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    learning_rate: float = 1.6e-3
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-15
    iterations: int = 3000
    weights: LossWeights = dc_field(default_factory=LossWeights)
    seed: int = 0
    # multipliers applied on top of learning_rate, keyed by parameter name
    # or by its last path component (e.g. "theta" covers every bank)
    lr_groups: dict = dc_field(default_factory=lambda: dict(DEFAULT_LR_GROUPS))
    enable_tracker: bool = True
    enable_region_loss: bool = True
    fdm_basis: int = 16
    init_stride: int = 2
    background_grid: int = 24  # 0 disables the far-canvas splats
    psnr_interval: int = 100
    lr_decay: float = 1.0  # final lr as a fraction of the initial (1.0 = constant)

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")

    def to_dict(self) -> dict:
        return {
            "learning_rate": self.learning_rate,
            "betas": list(self.betas),
            "eps": self.eps,
            "iterations": self.iterations,
            "weights": {
                "lam": self.weights.lam,
                "region_min_pixels": self.weights.region_min_pixels,
                "depth_epsilon": self.weights.depth_epsilon,
            },
            "seed": self.seed,
            "lr_groups": dict(self.lr_groups),
            "enable_tracker": self.enable_tracker,
            "enable_region_loss": self.enable_region_loss,
            "fdm_basis": self.fdm_basis,
            "init_stride": self.init_stride,
            "background_grid": self.background_grid,
            "psnr_interval": self.psnr_interval,
            "lr_decay": self.lr_decay,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        w = d.get("weights", {})
        return cls(
            learning_rate=d["learning_rate"],
            betas=tuple(d["betas"]),
            eps=d["eps"],
            iterations=d["iterations"],
            weights=LossWeights(
                lam=w.get("lam", 0.01),
                region_min_pixels=w.get("region_min_pixels", 1000),
                depth_epsilon=w.get("depth_epsilon", 1e-3),
            ),
            seed=d["seed"],
            lr_groups=dict(d.get("lr_groups", DEFAULT_LR_GROUPS)),
            enable_tracker=d.get("enable_tracker", True),
            enable_region_loss=d.get("enable_region_loss", True),
            fdm_basis=d.get("fdm_basis", 16),
            init_stride=d.get("init_stride", 2),
            background_grid=d.get("background_grid", 24),
            psnr_interval=d.get("psnr_interval", 100),
            lr_decay=d.get("lr_decay", 1.0),
        )

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class Checkpoint:
    cloud: GaussianCloud
    field: DeformationField
    adam: AdamState
    iteration: int
    config: TrainConfig
    scene: dict  # camera, frame count, raw time range, resolution

    @property
    def config_hash(self) -> str:
        return self.config.hash()


# ---------------------------------------------------------------------------
# initialization


def _background_canvas(
    frame, camera: Camera, grid: int, d: int, sh_bands: int = 1
) -> GaussianCloud | None:
    """Coarse far-plane canvas behind the observed depth range.

    Catches disocclusions: rays that miss every surface splat land on the
    canvas instead of the background color. Placed at 1.05x the deepest
    observed depth with the median color/feature of the far quintile.
    """
    depth = np.asarray(frame.depth, dtype=np.float64)
    valid = depth > 0
    if grid < 2 or not valid.any():
        return None
    z_far = float(depth[valid].max()) * 1.05
    q80 = np.quantile(depth[valid], 0.8)
    far_mask = valid & (depth >= q80)
    color = np.asarray(frame.color, dtype=np.float64) / 255.0
    med_color = np.median(color[far_mask].reshape(-1, 3), axis=0)
    if frame.feature_comp is not None:
        med_feat = np.median(np.asarray(frame.feature_comp)[far_mask].reshape(-1, d), axis=0)
    else:
        med_feat = np.zeros(d)

    h, w = depth.shape
    us = np.linspace(0, w - 1, grid)
    vs = np.linspace(0, h - 1, grid)
    uu, vv = np.meshgrid(us, vs)
    uu, vv = uu.ravel(), vv.ravel()
    x = (uu - camera.cx) / camera.fx * z_far
    y = (vv - camera.cy) / camera.fy * z_far
    pc = np.stack([x, y, np.full_like(x, z_far)], axis=1)
    world = (pc - camera.t) @ camera.R
    n = world.shape[0]
    spacing = z_far * (w / grid) / camera.fx
    sh = np.zeros((n, 3, sh_bands))
    sh[:, :, 0] = (med_color - 0.5) / SH_C0
    cloud = GaussianCloud(
        means=world,
        rotations=np.tile(np.array([1.0, 0.0, 0.0, 0.0]), (n, 1)),
        log_scales=np.full((n, 3), math.log(spacing)),
        opacity_logits=np.full(n, math.log(0.1 / 0.9)),
        sh_coeffs=sh,
        features=np.tile(med_feat[None, :], (n, 1)),
    )
    return cloud


def _concat_clouds(a: GaussianCloud, b: GaussianCloud) -> GaussianCloud:
    return GaussianCloud(
        means=np.concatenate([a.means, b.means]),
        rotations=np.concatenate([a.rotations, b.rotations]),
        log_scales=np.concatenate([a.log_scales, b.log_scales]),
        opacity_logits=np.concatenate([a.opacity_logits, b.opacity_logits]),
        sh_coeffs=np.concatenate([a.sh_coeffs, b.sh_coeffs]),
        features=np.concatenate([a.features, b.features]),
    )


def init_scene(dataset, config: TrainConfig):
    """Cloud from the first training frame's depth plus the far canvas,
    and a fresh deformation field sized to it."""
    idx = dataset.train_indices[0]
    frame = dataset.frames[idx]
    camera = dataset.cameras[frame.camera_index]
    cloud = init_from_depth(frame, camera, stride=config.init_stride, d=dataset.d)
    canvas = _background_canvas(
        frame, camera, config.background_grid, dataset.d,
        sh_bands=cloud.sh_coeffs.shape[2],
    )
    if canvas is not None:
        cloud = _concat_clouds(cloud, canvas)
    field = init_deformation(cloud.n, dataset.d, basis=config.fdm_basis, seed=config.seed)
    return cloud, field


# ---------------------------------------------------------------------------
# parameter plumbing


def gather_params(cloud: GaussianCloud, field: DeformationField, enable_tracker: bool) -> dict:
    params = {
        "means": cloud.means,
        "rotations": cloud.rotations,
        "log_scales": cloud.log_scales,
        "opacity_logits": cloud.opacity_logits,
        "sh_coeffs": cloud.sh_coeffs,
        "features": cloud.features,
    }
    for bank_name in ("mu", "rot", "scale", "gate"):
        bank: FdmParams = getattr(field, bank_name)
        params[f"fdm_{bank_name}.omega"] = bank.omega
        params[f"fdm_{bank_name}.theta"] = bank.theta
        params[f"fdm_{bank_name}.sigma"] = bank.sigma
    if enable_tracker:
        for name, arr in field.tracker.params().items():
            params[f"tracker.{name}"] = arr
    return params


def expand_lr_groups(param_names, groups: dict) -> dict:
    scales = {}
    for name in param_names:
        if name in groups:
            scales[name] = float(groups[name])
            continue
        tail = name.split(".")[-1]
        scales[name] = float(groups.get(tail, 1.0))
    return scales


def _project_state(cloud: GaussianCloud, field: DeformationField):
    # post-step constraints: positive kernel widths, unit quaternions
    for bank_name in ("mu", "rot", "scale", "gate"):
        bank: FdmParams = getattr(field, bank_name)
        np.maximum(bank.sigma, SIGMA_FLOOR, out=bank.sigma)
    cloud.rotations[:] = quat_normalize(cloud.rotations)


def _psnr(a: np.ndarray, b: np.ndarray) -> float:
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return float("inf")
    return 10.0 * math.log10(1.0 / mse)


# ---------------------------------------------------------------------------
# training


def train_scene(dataset, config: TrainConfig, out_dir: str | None = None, log_file=None):
    """Optimize a scene on the dataset's training split.

    Returns (Checkpoint, history). history: {"loss": [...], "parts": [...],
    "psnr": [(iteration, value), ...]}. On a non-finite loss a diagnostic
    checkpoint is written (when out_dir is given) and TrainingDivergedError
    is raised.
    """
    rng = np.random.default_rng(config.seed)
    cloud, field = init_scene(dataset, config)
    params = gather_params(cloud, field, config.enable_tracker)
    lr_scales = expand_lr_groups(params.keys(), config.lr_groups)
    adam = AdamState()

    train_idx = dataset.train_indices
    test_idx = dataset.test_indices
    eval_idx = test_idx[0] if test_idx else train_idx[0]
    eval_frame = dataset.frames[eval_idx]
    eval_camera = dataset.cameras[eval_frame.camera_index]
    eval_gt = np.asarray(eval_frame.color, dtype=np.float64) / 255.0

    scene_info = _scene_info(dataset)
    history = {"loss": [], "parts": [], "psnr": []}

    def write_log(record):
        if log_file is not None:
            log_file.write(json.dumps(record) + "\n")

    it = 0
    for it in range(1, config.iterations + 1):
        fi = train_idx[int(rng.integers(len(train_idx)))]
        frame = dataset.frames[fi]
        camera = dataset.cameras[frame.camera_index]
        out, cache = render_scene(
            cloud,
            camera,
            field=field,
            t=frame.timestamp,
            need_cache=True,
            track_features=config.enable_tracker,
        )
        loss, lgrads, parts = total_loss(
            out, frame, config.weights, include_region=config.enable_region_loss
        )
        if not np.isfinite(loss):
            path = None
            if out_dir is not None:
                path = os.path.join(out_dir, "diverged-checkpoint")
                save_checkpoint(
                    Checkpoint(cloud, field, adam, it - 1, config, scene_info), path
                )
            raise TrainingDivergedError(it, loss, path)
        grads = render_scene_backward(
            cache, lgrads["color"], lgrads["depth"], lgrads["feature"]
        )
        if config.lr_decay != 1.0 and config.iterations > 1:
            frac = (it - 1) / (config.iterations - 1)
            lr = config.learning_rate * (config.lr_decay ** frac)
        else:
            lr = config.learning_rate
        adam_step(params, grads, adam, lr, config.betas, config.eps, lr_scales)
        _project_state(cloud, field)

        history["loss"].append(loss)
        history["parts"].append(parts)
        record = {"iter": it, **{k: float(v) for k, v in parts.items()}}
        if it % config.psnr_interval == 0 or it == config.iterations:
            r = render_scene(
                cloud,
                eval_camera,
                field=field,
                t=eval_frame.timestamp,
                track_features=config.enable_tracker,
            )
            p = _psnr(r.color, eval_gt)
            history["psnr"].append((it, p))
            record["psnr"] = p
        write_log(record)

    ckpt = Checkpoint(cloud, field, adam, it, config, scene_info)
    if out_dir is not None:
        save_checkpoint(ckpt, os.path.join(out_dir, "checkpoint"))
    return ckpt, history


def _scene_info(dataset) -> dict:
    cam = dataset.cameras[0]
    raw = [f.raw_time for f in dataset.frames]
    return {
        "camera": cam.to_dict(),
        "n_frames": len(dataset.frames),
        "time_range": [float(min(raw)), float(max(raw))],
        "resolution": [cam.height, cam.width],
        "d": dataset.d,
        "feature_dim": dataset.feature_dim,
    }


# ---------------------------------------------------------------------------
# checkpoint container


def _field_tensors(field: DeformationField) -> dict:
    out = {}
    for bank_name in ("mu", "rot", "scale", "gate"):
        bank: FdmParams = getattr(field, bank_name)
        out[f"fdm_{bank_name}.omega"] = bank.omega
        out[f"fdm_{bank_name}.theta"] = bank.theta
        out[f"fdm_{bank_name}.sigma"] = bank.sigma
    for name, arr in field.tracker.params().items():
        out[f"tracker.{name}"] = arr
    return out


def save_checkpoint(ckpt: Checkpoint, path: str) -> None:
    """Write a checkpoint directory: manifest.json plus one tensor container
    per array (cloud attributes, bank parameters, tracker weights, Adam
    moments). Round-trips bit-exactly."""
    os.makedirs(path, exist_ok=True)
    tensors = {}
    tensors.update(ckpt.cloud.to_tensors())
    tensors.update(_field_tensors(ckpt.field))
    for name, arr in ckpt.adam.m.items():
        tensors[f"adam_m.{name}"] = arr
    for name, arr in ckpt.adam.v.items():
        tensors[f"adam_v.{name}"] = arr
    entries = {}
    for name, arr in tensors.items():
        fname = name.replace(".", "_") + ".stpg"
        dataio.write_tensor(os.path.join(path, fname), np.asarray(arr))
        entries[name] = fname
    manifest = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "iteration": ckpt.iteration,
        "adam_step": ckpt.adam.step,
        "config": ckpt.config.to_dict(),
        "config_hash": ckpt.config_hash,
        "scene": ckpt.scene,
        "tracker_delta": ckpt.field.tracker.delta,
        "tensors": entries,
    }
    with open(os.path.join(path, "manifest.json"), "w") as f:
        json.dump(manifest, f, indent=1, sort_keys=True)


def _load_tensor(path: str, name: str, entries: dict) -> np.ndarray:
    if name not in entries:
        raise CheckpointError(f"checkpoint is missing tensor '{name}'")
    try:
        return dataio.read_tensor(os.path.join(path, entries[name]))
    except (OSError, dataio.ContainerError) as e:
        raise CheckpointError(f"tensor '{name}': {e}") from e


def load_checkpoint(path: str) -> Checkpoint:
    mpath = os.path.join(path, "manifest.json")
    try:
        with open(mpath) as f:
            manifest = json.load(f)
    except OSError as e:
        raise CheckpointError(f"cannot read manifest: {e}") from e
    except json.JSONDecodeError as e:
        raise CheckpointError(f"manifest is not valid JSON: {e}") from e
    if manifest.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"field 'format': expected {CHECKPOINT_FORMAT!r}")
    if manifest.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"field 'version': unsupported value {manifest.get('version')!r}"
        )
    for key in ("iteration", "config", "scene", "tensors"):
        if key not in manifest:
            raise CheckpointError(f"field '{key}': missing")
    entries = manifest["tensors"]

    def t(name):
        return _load_tensor(path, name, entries)

    cloud = GaussianCloud(
        means=t("means"),
        rotations=t("rotations"),
        log_scales=t("log_scales"),
        opacity_logits=t("opacity_logits"),
        sh_coeffs=t("sh_coeffs"),
        features=t("features"),
    )
    banks = {}
    for bank_name in ("mu", "rot", "scale", "gate"):
        banks[bank_name] = FdmParams(
            omega=t(f"fdm_{bank_name}.omega"),
            theta=t(f"fdm_{bank_name}.theta"),
            sigma=t(f"fdm_{bank_name}.sigma"),
        )
    tracker = SemanticTracker(
        conv1_w=t("tracker.conv1_w"),
        conv1_b=t("tracker.conv1_b"),
        conv2_w=t("tracker.conv2_w"),
        conv2_b=t("tracker.conv2_b"),
        head_w=t("tracker.head_w"),
        head_b=t("tracker.head_b"),
        delta=manifest.get("tracker_delta", 2.5),
    )
    field = DeformationField(
        mu=banks["mu"], rot=banks["rot"], scale=banks["scale"], gate=banks["gate"], tracker=tracker
    )
    adam = AdamState()
    adam.step = int(manifest.get("adam_step", 0))
    for name in entries:
        if name.startswith("adam_m."):
            adam.m[name[len("adam_m."):]] = t(name)
        elif name.startswith("adam_v."):
            adam.v[name[len("adam_v."):]] = t(name)
    config = TrainConfig.from_dict(manifest["config"])
    ckpt = Checkpoint(
        cloud=cloud,
        field=field,
        adam=adam,
        iteration=int(manifest["iteration"]),
        config=config,
        scene=manifest["scene"],
    )
    if manifest.get("config_hash") not in (None, ckpt.config_hash):
        raise CheckpointError("field 'config_hash': does not match the stored config")
    return ckpt
