"""Differentiable splat rasterization.

Projection maps deformed 3D Gaussians to screen-space splats via the local
affine (EWA) approximation; blending composites color, expected view depth
and semantic features front to back, tile by tile. A brute-force oracle
with identical per-pixel semantics cross-checks the tiled path, and every
stage has an analytic backward.

Conventions shared by the tiled and oracle paths: alpha clamped at 0.99,
contributions below 1/255 skipped, positive exponents skipped, blending
stops once transmittance drops below 1e-4, depth sort ties broken by
source index. The tile binning radius is derived from the exact skip
threshold, so the two paths agree to the last bit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .deform import (
    DeformationField,
    deform_feature,
    deform_feature_backward,
    deform_gaussian,
    deform_gaussian_backward,
)
from .scene import Camera, GaussianCloud, quat_normalize, quat_to_rotmat, sh_basis, sh_basis_grad

TILE = 16
COV_LOWPASS = 0.3
ALPHA_SKIP = _kernels.ALPHA_SKIP


@dataclass
class Splat2D:
    center: np.ndarray       # (2,) pixel coordinates
    cov2d: np.ndarray        # 2x2
    view_depth: float
    rgb: np.ndarray
    alpha_base: float
    feature: np.ndarray
    source_index: int


@dataclass
class SplatBatch:
    """Projected splats, struct-of-arrays; order is arbitrary (sorting is
    internal to the rasterizer)."""

    center: np.ndarray        # M x 2
    cov: np.ndarray           # M x 3 packed (a, b, c)
    conic: np.ndarray         # M x 3 packed inverse
    depth: np.ndarray         # M
    rgb: np.ndarray           # M x 3
    alpha_base: np.ndarray    # M
    feature: np.ndarray       # M x d
    source_index: np.ndarray  # M
    radius: np.ndarray        # M binning radius in pixels

    @property
    def m(self) -> int:
        return self.center.shape[0]

    @property
    def d(self) -> int:
        return self.feature.shape[1]


@dataclass
class RenderOutput:
    color: np.ndarray        # H x W x 3
    depth: np.ndarray        # H x W
    feature: np.ndarray      # H x W x d
    accum_alpha: np.ndarray  # H x W


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


# ---------------------------------------------------------------------------
# projection


@dataclass
class ProjectionCache:
    keep: np.ndarray       # indices into the cloud for surviving splats
    n_total: int
    cam_pts: np.ndarray    # M x 3
    txc: np.ndarray
    tyc: np.ndarray
    gate_x: np.ndarray
    gate_y: np.ndarray
    J: np.ndarray          # M x 2 x 3
    Rm: np.ndarray         # M x 3 x 3
    Dexp: np.ndarray       # M x 3
    Sigma_cam: np.ndarray  # M x 3 x 3
    quat_unit: np.ndarray  # M x 4
    basis: np.ndarray      # M x m
    sh: np.ndarray         # M x 3 x m
    gate_rgb: np.ndarray   # M x 3 bool
    dirs: np.ndarray       # M x 3
    dir_norm: np.ndarray   # M
    ab: np.ndarray         # M
    camera: Camera


def project_cloud(
    means: np.ndarray,
    rotations_unit: np.ndarray,
    log_scales: np.ndarray,
    opacity_logits: np.ndarray,
    sh_coeffs: np.ndarray,
    features: np.ndarray,
    camera: Camera,
) -> tuple[SplatBatch, ProjectionCache]:
    """Project every Gaussian; cull outside (near, far) or off-image by 3 sigma."""
    n = means.shape[0]
    V = camera.R
    cam = means @ V.T + camera.t
    tz = cam[:, 2]
    vis = (tz > camera.near) & (tz < camera.far)
    idx = np.nonzero(vis)[0]

    cam = cam[idx]
    tx, ty, tz = cam[:, 0], cam[:, 1], cam[:, 2]
    limx = 1.3 * camera.tan_fovx
    limy = 1.3 * camera.tan_fovy
    rx, ry = tx / tz, ty / tz
    gate_x = np.abs(rx) <= limx
    gate_y = np.abs(ry) <= limy
    txc = np.clip(rx, -limx, limx) * tz
    tyc = np.clip(ry, -limy, limy) * tz

    m = idx.shape[0]
    J = np.zeros((m, 2, 3))
    J[:, 0, 0] = camera.fx / tz
    J[:, 0, 2] = -camera.fx * txc / (tz * tz)
    J[:, 1, 1] = camera.fy / tz
    J[:, 1, 2] = -camera.fy * tyc / (tz * tz)

    quat = rotations_unit[idx]
    Rm = quat_to_rotmat(quat)
    Dexp = np.exp(log_scales[idx])
    Mmat = Rm * Dexp[:, None, :]
    Sigma_w = Mmat @ Mmat.transpose(0, 2, 1)
    Sigma_cam = np.einsum("ij,njk,lk->nil", V, Sigma_w, V)
    cov = np.einsum("nij,njk,nlk->nil", J, Sigma_cam, J)
    cov[:, 0, 0] += COV_LOWPASS
    cov[:, 1, 1] += COV_LOWPASS

    a, b, c = cov[:, 0, 0], cov[:, 0, 1], cov[:, 1, 1]
    det = a * c - b * b
    conic = np.stack([c / det, -b / det, a / det], axis=1)
    lam_max = 0.5 * (a + c) + np.sqrt(np.maximum(0.25 * (a - c) ** 2 + b * b, 0.0))

    u = camera.fx * tx / tz + camera.cx
    v = camera.fy * ty / tz + camera.cy
    r3 = 3.0 * np.sqrt(lam_max)
    on_img = (
        (u + r3 >= -0.5)
        & (u - r3 <= camera.width - 0.5)
        & (v + r3 >= -0.5)
        & (v - r3 <= camera.height - 0.5)
    )

    ab = _sigmoid(opacity_logits[idx])
    arg = 255.0 * ab
    r_bin = np.where(arg > 1.0, np.sqrt(2.0 * lam_max * np.log(np.maximum(arg, 1.0 + 1e-12))), 0.0)

    # second cull pass
    sub = np.nonzero(on_img)[0]
    keep = idx[sub]

    dirs_raw = means[keep] - camera.center
    dir_norm = np.linalg.norm(dirs_raw, axis=1)
    dir_norm = np.maximum(dir_norm, 1e-12)
    dirs = dirs_raw / dir_norm[:, None]
    degree = int(round(np.sqrt(sh_coeffs.shape[2]))) - 1
    basis = sh_basis(dirs, degree)
    sh = sh_coeffs[keep]
    pre = np.einsum("ncm,nm->nc", sh, basis) + 0.5
    rgb = np.clip(pre, 0.0, 1.0)
    gate_rgb = (pre > 0.0) & (pre < 1.0)

    batch = SplatBatch(
        center=np.stack([u[sub], v[sub]], axis=1),
        cov=np.stack([a[sub], b[sub], c[sub]], axis=1),
        conic=conic[sub],
        depth=tz[sub].copy(),
        rgb=rgb,
        alpha_base=ab[sub],
        feature=np.asarray(features)[keep].astype(np.float64),
        source_index=keep.astype(np.int64),
        radius=r_bin[sub],
    )
    cache = ProjectionCache(
        keep=keep,
        n_total=n,
        cam_pts=cam[sub],
        txc=txc[sub],
        tyc=tyc[sub],
        gate_x=gate_x[sub],
        gate_y=gate_y[sub],
        J=J[sub],
        Rm=Rm[sub],
        Dexp=Dexp[sub],
        Sigma_cam=Sigma_cam[sub],
        quat_unit=quat[sub],
        basis=basis,
        sh=sh,
        gate_rgb=gate_rgb,
        dirs=dirs,
        dir_norm=dir_norm,
        ab=ab[sub],
        camera=camera,
    )
    return batch, cache


def project_gaussian(
    mean,
    rotation,
    log_scale,
    camera: Camera,
    rgb=None,
    alpha_base: float = 1.0,
    feature=None,
    source_index: int = 0,
) -> Splat2D | None:
    """Single-Gaussian projection; returns None when culled.

    Opacity and appearance are carried through unchanged (the logit of the
    requested alpha_base is used so the batch path applies its sigmoid).
    """
    eps = 1e-12
    ab = min(max(float(alpha_base), eps), 1.0 - eps)
    logit = np.log(ab / (1.0 - ab))
    feat = np.zeros(1) if feature is None else np.asarray(feature, dtype=np.float64)
    color = np.zeros(3) if rgb is None else np.asarray(rgb, dtype=np.float64)
    sh = np.zeros((1, 3, 1))
    sh[0, :, 0] = (color - 0.5) / 0.28209479177387814
    batch, _ = project_cloud(
        np.asarray(mean, dtype=np.float64)[None],
        quat_normalize(np.asarray(rotation, dtype=np.float64))[None],
        np.asarray(log_scale, dtype=np.float64)[None],
        np.array([logit]),
        sh,
        feat[None],
        camera,
    )
    if batch.m == 0:
        return None
    a, b, c = batch.cov[0]
    return Splat2D(
        center=batch.center[0],
        cov2d=np.array([[a, b], [b, c]]),
        view_depth=float(batch.depth[0]),
        rgb=batch.rgb[0],
        alpha_base=float(batch.alpha_base[0]),
        feature=batch.feature[0],
        source_index=source_index,
    )


# ---------------------------------------------------------------------------
# tiled rasterization


def _sorted_view(batch: SplatBatch):
    order = np.lexsort((batch.source_index, batch.depth))
    return order


def _build_tiles(batch: SplatBatch, order, height: int, width: int, tile: int):
    """Tile lists over depth-sorted splats. Returns (offsets, tile_splats)."""
    u = batch.center[order, 0]
    v = batch.center[order, 1]
    r = batch.radius[order]
    tiles_x = (width + tile - 1) // tile
    tiles_y = (height + tile - 1) // tile

    x0 = np.clip(np.floor(u - r), 0, width - 1).astype(np.int64)
    x1 = np.clip(np.ceil(u + r), 0, width - 1).astype(np.int64)
    y0 = np.clip(np.floor(v - r), 0, height - 1).astype(np.int64)
    y1 = np.clip(np.ceil(v + r), 0, height - 1).astype(np.int64)
    active = (
        (r > 0.0)
        & (u + r >= -0.5)
        & (u - r <= width - 0.5)
        & (v + r >= -0.5)
        & (v - r <= height - 0.5)
    )
    tx0, tx1 = x0 // tile, x1 // tile
    ty0, ty1 = y0 // tile, y1 // tile
    counts = np.where(active, (tx1 - tx0 + 1) * (ty1 - ty0 + 1), 0)
    total = int(counts.sum())
    tile_ids = np.empty(total, dtype=np.int64)
    splat_ids = np.empty(total, dtype=np.int64)
    if total:
        _kernels.fill_tile_pairs(tx0, tx1, ty0, ty1, active, tiles_x, tile_ids, splat_ids)
        perm = np.argsort(tile_ids, kind="stable")
        tile_ids = tile_ids[perm]
        splat_ids = splat_ids[perm]
    offsets = np.searchsorted(tile_ids, np.arange(tiles_x * tiles_y + 1))
    return offsets.astype(np.int64), splat_ids


def _bg(bg_color, bg_feature, bg_depth, d):
    c = np.zeros(3) if bg_color is None else np.asarray(bg_color, dtype=np.float64)
    f = np.zeros(d) if bg_feature is None else np.asarray(bg_feature, dtype=np.float64)
    return c, f, float(bg_depth)


def rasterize_forward(
    batch: SplatBatch,
    height: int,
    width: int,
    bg_color=None,
    bg_feature=None,
    bg_depth: float = 0.0,
    tile: int = TILE,
) -> RenderOutput:
    d = batch.d
    bc, bf, bd = _bg(bg_color, bg_feature, bg_depth, d)
    color = np.zeros((height, width, 3))
    depth = np.zeros((height, width))
    feat = np.zeros((height, width, d))
    accum = np.zeros((height, width))
    if batch.m == 0:
        color[:] = bc
        depth[:] = bd
        feat[:] = bf
        return RenderOutput(color, depth, feat, accum)
    order = _sorted_view(batch)
    offsets, tile_splats = _build_tiles(batch, order, height, width, tile)
    _kernels.blend_forward(
        height,
        width,
        tile,
        offsets,
        tile_splats,
        np.ascontiguousarray(batch.center[order]),
        np.ascontiguousarray(batch.conic[order]),
        np.ascontiguousarray(batch.depth[order]),
        np.ascontiguousarray(batch.rgb[order]),
        np.ascontiguousarray(batch.alpha_base[order]),
        np.ascontiguousarray(batch.feature[order]),
        bc,
        bf,
        bd,
        color,
        depth,
        feat,
        accum,
    )
    return RenderOutput(color, depth, feat, accum)


def rasterize_backward(
    batch: SplatBatch,
    height: int,
    width: int,
    d_color: np.ndarray,
    d_depth: np.ndarray,
    d_feature: np.ndarray,
    bg_color=None,
    bg_feature=None,
    bg_depth: float = 0.0,
    tile: int = TILE,
    d_accum: np.ndarray | None = None,
) -> dict:
    """Per-splat gradients in batch order.

    Returns center (M,2), cov (M,2,2), alpha_base (M,), rgb (M,3),
    depth (M,), feature (M,d). The blend is replayed per pixel, so no
    forward state is required beyond the batch itself.
    """
    d = batch.d
    bc, bf, bd = _bg(bg_color, bg_feature, bg_depth, d)
    m = batch.m
    out = {
        "center": np.zeros((m, 2)),
        "cov": np.zeros((m, 2, 2)),
        "alpha_base": np.zeros(m),
        "rgb": np.zeros((m, 3)),
        "depth": np.zeros(m),
        "feature": np.zeros((m, d)),
    }
    if m == 0:
        return out
    if d_accum is None:
        d_accum = np.zeros((height, width))
    order = _sorted_view(batch)
    offsets, tile_splats = _build_tiles(batch, order, height, width, tile)
    g_center = np.zeros((m, 2))
    g_conic = np.zeros((m, 3))
    g_ab = np.zeros(m)
    g_rgb = np.zeros((m, 3))
    g_depth = np.zeros(m)
    g_feat = np.zeros((m, d))
    conic_sorted = np.ascontiguousarray(batch.conic[order])
    _kernels.blend_backward(
        height,
        width,
        tile,
        offsets,
        tile_splats,
        np.ascontiguousarray(batch.center[order]),
        conic_sorted,
        np.ascontiguousarray(batch.depth[order]),
        np.ascontiguousarray(batch.rgb[order]),
        np.ascontiguousarray(batch.alpha_base[order]),
        np.ascontiguousarray(batch.feature[order]),
        bc,
        bf,
        bd,
        np.ascontiguousarray(d_color, dtype=np.float64),
        np.ascontiguousarray(d_depth, dtype=np.float64),
        np.ascontiguousarray(d_feature, dtype=np.float64),
        np.ascontiguousarray(d_accum, dtype=np.float64),
        g_center,
        g_conic,
        g_ab,
        g_rgb,
        g_depth,
        g_feat,
    )
    # conic -> covariance chain: dCov = -Conic dConic Conic (all symmetric)
    conic_full = np.empty((m, 2, 2))
    conic_full[:, 0, 0] = conic_sorted[:, 0]
    conic_full[:, 0, 1] = conic_full[:, 1, 0] = conic_sorted[:, 1]
    conic_full[:, 1, 1] = conic_sorted[:, 2]
    g_conic_full = np.empty((m, 2, 2))
    g_conic_full[:, 0, 0] = g_conic[:, 0]
    g_conic_full[:, 0, 1] = g_conic_full[:, 1, 0] = 0.5 * g_conic[:, 1]
    g_conic_full[:, 1, 1] = g_conic[:, 2]
    g_cov = -np.einsum("nij,njk,nkl->nil", conic_full, g_conic_full, conic_full)

    inv = np.empty_like(order)
    inv[order] = np.arange(m)
    out["center"] = g_center[inv]
    out["cov"] = g_cov[inv]
    out["alpha_base"] = g_ab[inv]
    out["rgb"] = g_rgb[inv]
    out["depth"] = g_depth[inv]
    out["feature"] = g_feat[inv]
    return out


def rasterize_oracle(
    batch: SplatBatch,
    height: int,
    width: int,
    bg_color=None,
    bg_feature=None,
    bg_depth: float = 0.0,
) -> RenderOutput:
    """Brute force reference: global depth sort, per-pixel exhaustive loop,
    no tiling; semantics identical to rasterize_forward."""
    d = batch.d
    bc, bf, bd = _bg(bg_color, bg_feature, bg_depth, d)
    color = np.zeros((height, width, 3))
    depth = np.zeros((height, width))
    feat = np.zeros((height, width, d))
    T = np.ones((height, width))
    xs = np.arange(width, dtype=np.float64)[None, :]
    ys = np.arange(height, dtype=np.float64)[:, None]
    order = _sorted_view(batch)
    for j in order:
        dx = batch.center[j, 0] - xs
        dy = batch.center[j, 1] - ys
        a, b, c = batch.conic[j]
        power = -0.5 * (a * dx * dx + c * dy * dy) - b * dx * dy
        alpha = batch.alpha_base[j] * np.exp(power)
        np.minimum(alpha, _kernels.ALPHA_CLAMP, out=alpha)
        ok = (power <= 0.0) & (alpha >= _kernels.ALPHA_SKIP) & (T >= _kernels.EARLY_STOP_T)
        w = np.where(ok, alpha * T, 0.0)
        color += w[:, :, None] * batch.rgb[j]
        depth += w * batch.depth[j]
        feat += w[:, :, None] * batch.feature[j]
        T = np.where(ok, T * (1.0 - alpha), T)
    color += T[:, :, None] * bc
    depth += T * bd
    feat += T[:, :, None] * bf
    return RenderOutput(color, depth, feat, 1.0 - T)


# ---------------------------------------------------------------------------
# projection backward


def project_backward(cache: ProjectionCache, g: dict) -> dict:
    """Chain per-splat gradients to the projection inputs.

    Input g comes from rasterize_backward (batch order equals cache order).
    Returns dense gradients over the full cloud: means (through the center,
    the Jacobian, the view depth and the SH view direction), unit rotations,
    log scales, opacity logits, SH coefficients and features.
    """
    cam = cache.camera
    keep = cache.keep
    m = keep.shape[0]
    n = cache.n_total
    tx, ty, tz = cache.cam_pts[:, 0], cache.cam_pts[:, 1], cache.cam_pts[:, 2]

    d_cov = g["cov"]
    d_scam = np.einsum("nji,njk,nkl->nil", cache.J, d_cov, cache.J)
    d_J = 2.0 * np.einsum("nij,njk,nkl->nil", d_cov, cache.J, cache.Sigma_cam)
    V = cam.R
    d_sw = np.einsum("ji,njk,kl->nil", V, d_scam, V)

    Mmat = cache.Rm * cache.Dexp[:, None, :]
    d_M = 2.0 * np.einsum("nij,njk->nik", d_sw, Mmat)
    d_Rm = d_M * cache.Dexp[:, None, :]
    d_s = cache.Dexp * np.einsum("nik,nik->nk", cache.Rm, d_M)

    q = cache.quat_unit
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    G = d_Rm
    d_quat = np.empty_like(q)
    d_quat[:, 0] = 2.0 * (
        x * (G[:, 2, 1] - G[:, 1, 2])
        + y * (G[:, 0, 2] - G[:, 2, 0])
        + z * (G[:, 1, 0] - G[:, 0, 1])
    )
    d_quat[:, 1] = 2.0 * (
        -2.0 * x * (G[:, 1, 1] + G[:, 2, 2])
        + y * (G[:, 0, 1] + G[:, 1, 0])
        + z * (G[:, 0, 2] + G[:, 2, 0])
        + w * (G[:, 2, 1] - G[:, 1, 2])
    )
    d_quat[:, 2] = 2.0 * (
        x * (G[:, 0, 1] + G[:, 1, 0])
        - 2.0 * y * (G[:, 0, 0] + G[:, 2, 2])
        + z * (G[:, 1, 2] + G[:, 2, 1])
        + w * (G[:, 0, 2] - G[:, 2, 0])
    )
    d_quat[:, 3] = 2.0 * (
        x * (G[:, 0, 2] + G[:, 2, 0])
        + y * (G[:, 1, 2] + G[:, 2, 1])
        - 2.0 * z * (G[:, 0, 0] + G[:, 1, 1])
        + w * (G[:, 1, 0] - G[:, 0, 1])
    )

    tz2 = tz * tz
    tz3 = tz2 * tz
    d_tx = np.zeros(m)
    d_ty = np.zeros(m)
    d_tz = np.zeros(m)
    # J entries (clamped-ratio convention: tz dependence of a clamped
    # coordinate is carried only by the explicit tz factors)
    d_tz += (
        -cam.fx / tz2 * d_J[:, 0, 0]
        - cam.fy / tz2 * d_J[:, 1, 1]
        + 2.0 * cam.fx * cache.txc / tz3 * d_J[:, 0, 2]
        + 2.0 * cam.fy * cache.tyc / tz3 * d_J[:, 1, 2]
    )
    d_tx += np.where(cache.gate_x, -cam.fx / tz2 * d_J[:, 0, 2], 0.0)
    d_ty += np.where(cache.gate_y, -cam.fy / tz2 * d_J[:, 1, 2], 0.0)
    # screen center
    du, dv = g["center"][:, 0], g["center"][:, 1]
    d_tx += du * cam.fx / tz
    d_ty += dv * cam.fy / tz
    d_tz += -du * cam.fx * tx / tz2 - dv * cam.fy * ty / tz2
    # blended view depth
    d_tz += g["depth"]

    d_cam_pt = np.stack([d_tx, d_ty, d_tz], axis=1)
    d_mu = d_cam_pt @ V

    # SH color: clamp gate, then coefficients and the view direction
    d_pre = g["rgb"] * cache.gate_rgb
    d_sh = np.einsum("nc,nm->ncm", d_pre, cache.basis)
    degree = int(round(np.sqrt(cache.sh.shape[2]))) - 1
    gbasis = sh_basis_grad(cache.dirs, degree)
    d_dir = np.einsum("nc,ncm,nmj->nj", d_pre, cache.sh, gbasis)
    dot = np.sum(d_dir * cache.dirs, axis=1, keepdims=True)
    d_mu += (d_dir - cache.dirs * dot) / cache.dir_norm[:, None]

    d_logit = cache.ab * (1.0 - cache.ab) * g["alpha_base"]

    sh_m = cache.sh.shape[2]
    dgd = g["feature"].shape[1]
    out = {
        "means": np.zeros((n, 3)),
        "rotations_unit": np.zeros((n, 4)),
        "log_scales": np.zeros((n, 3)),
        "opacity_logits": np.zeros(n),
        "sh_coeffs": np.zeros((n, 3, sh_m)),
        "features": np.zeros((n, dgd)),
    }
    out["means"][keep] = d_mu
    out["rotations_unit"][keep] = d_quat
    out["log_scales"][keep] = d_s
    out["opacity_logits"][keep] = d_logit
    out["sh_coeffs"][keep] = d_sh
    out["features"][keep] = g["feature"]
    return out


# ---------------------------------------------------------------------------
# scene-level rendering


@dataclass
class RenderCache:
    batch: SplatBatch
    pcache: ProjectionCache
    cloud: GaussianCloud
    field: DeformationField | None
    t: float
    gcache: tuple | None
    fcache: tuple | None
    static_rot: tuple | None
    height: int
    width: int
    bg_color: np.ndarray
    bg_feature: np.ndarray
    bg_depth: float
    tile: int


def render_scene(
    cloud: GaussianCloud,
    camera: Camera,
    field: DeformationField | None = None,
    t: float = 0.0,
    bg_color=None,
    bg_feature=None,
    bg_depth: float = 0.0,
    tile: int = TILE,
    oracle: bool = False,
    need_cache: bool = False,
    track_features: bool = True,
):
    """Render the cloud at time t (deformed when a field is given).

    The static path and the zero-deformation path perform identical
    arithmetic, so an identity field reproduces the static render exactly.
    track_features=False keeps features time-invariant (tracking ablation).
    """
    if field is None:
        mu = cloud.means
        norms = np.linalg.norm(cloud.rotations, axis=1, keepdims=True)
        rot_unit = cloud.rotations / norms
        s = cloud.log_scales
        feats = cloud.features
        gcache = fcache = None
        static_rot = (cloud.rotations, norms, rot_unit)
    else:
        mu, rot_unit, s, gcache = deform_gaussian(cloud, field, t)
        if track_features:
            feats, fcache = deform_feature(cloud, field, t)
        else:
            feats, fcache = cloud.features, None
        static_rot = None
    batch, pcache = project_cloud(
        mu, rot_unit, s, cloud.opacity_logits, cloud.sh_coeffs, feats, camera
    )
    fn = rasterize_oracle if oracle else rasterize_forward
    kwargs = {} if oracle else {"tile": tile}
    out = fn(
        batch,
        camera.height,
        camera.width,
        bg_color=bg_color,
        bg_feature=bg_feature,
        bg_depth=bg_depth,
        **kwargs,
    )
    if not need_cache:
        return out
    bc, bf, bd = _bg(bg_color, bg_feature, bg_depth, batch.d)
    cache = RenderCache(
        batch=batch,
        pcache=pcache,
        cloud=cloud,
        field=field,
        t=t,
        gcache=gcache,
        fcache=fcache,
        static_rot=static_rot,
        height=camera.height,
        width=camera.width,
        bg_color=bc,
        bg_feature=bf,
        bg_depth=bd,
        tile=tile,
    )
    return out, cache


def render_scene_backward(
    cache: RenderCache,
    d_color: np.ndarray,
    d_depth: np.ndarray,
    d_feature: np.ndarray,
    d_accum: np.ndarray | None = None,
) -> dict:
    """Full-chain gradients: blending -> projection -> deformation -> cloud.

    Returns a flat dict: cloud attribute names, plus fdm_<bank>.<param> and
    tracker.<param> entries when the render was deformed.
    """
    splat_g = rasterize_backward(
        cache.batch,
        cache.height,
        cache.width,
        d_color,
        d_depth,
        d_feature,
        bg_color=cache.bg_color,
        bg_feature=cache.bg_feature,
        bg_depth=cache.bg_depth,
        tile=cache.tile,
        d_accum=d_accum,
    )
    pg = project_backward(cache.pcache, splat_g)
    grads: dict = {
        "opacity_logits": pg["opacity_logits"],
        "sh_coeffs": pg["sh_coeffs"],
    }
    if cache.field is None:
        raw, norms, unit = cache.static_rot
        dot = np.sum(pg["rotations_unit"] * unit, axis=1, keepdims=True)
        grads["rotations"] = (pg["rotations_unit"] - unit * dot) / norms
        grads["means"] = pg["means"]
        grads["log_scales"] = pg["log_scales"]
        grads["features"] = pg["features"]
        return grads

    dg = deform_gaussian_backward(
        cache.cloud,
        cache.field,
        cache.t,
        cache.gcache,
        pg["means"],
        pg["rotations_unit"],
        pg["log_scales"],
    )
    grads["means"] = dg["means"]
    grads["rotations"] = dg["rotations"]
    grads["log_scales"] = dg["log_scales"]
    for bank_name, key in (("fdm_mu", "fdm_mu"), ("fdm_rot", "fdm_rot"), ("fdm_scale", "fdm_scale")):
        for p, arr in dg[key].items():
            grads[f"{bank_name}.{p}"] = arr
    if cache.fcache is None:
        grads["features"] = pg["features"]
        return grads
    df = deform_feature_backward(cache.cloud, cache.field, cache.t, cache.fcache, pg["features"])
    grads["features"] = df["features"]
    for p, arr in df["fdm_gate"].items():
        grads[f"fdm_gate.{p}"] = arr
    for p, arr in df["tracker"].items():
        grads[f"tracker.{p}"] = arr
    return grads
