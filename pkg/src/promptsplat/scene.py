"""Canonical Gaussian scene representation.

A scene is a cloud of anisotropic 3D Gaussians, each carrying position,
rotation, log-scale, opacity logit, spherical-harmonic color coefficients
and a compressed semantic feature vector. Scales and opacities are stored
unconstrained (log / logit) and activated at use sites.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

# real spherical harmonic constants, bands 0..3
SH_C0 = 0.28209479177387814
SH_C1 = 0.4886025119029199
SH_C2 = (
    1.0925484305920792,
    -1.0925484305920792,
    0.31539156525252005,
    -1.0925484305920792,
    0.5462742152960396,
)
SH_C3 = (
    -0.5900435899266435,
    2.890611442640554,
    -0.4570457994644658,
    0.3731763325901154,
    -0.4570457994644658,
    1.445305721320277,
    -0.5900435899266435,
)

IDENTITY_QUAT = np.array([1.0, 0.0, 0.0, 0.0])


class DegreeError(ValueError):
    """Spherical-harmonic degree outside the supported range 0..3."""


class EmptyCloudError(ValueError):
    """Depth initialization found no valid depth samples."""


class DegenerateRotationError(ValueError):
    """A quaternion with near-zero norm cannot be renormalized."""


@dataclass
class Camera:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    world_to_camera: np.ndarray  # 4x4
    near: float = 0.01
    far: float = 100.0

    def __post_init__(self):
        self.world_to_camera = np.asarray(self.world_to_camera, dtype=np.float64)
        if self.world_to_camera.shape != (4, 4):
            raise ValueError("world_to_camera must be 4x4")
        R = self.world_to_camera[:3, :3]
        if not np.allclose(R @ R.T, np.eye(3), atol=1e-6):
            raise ValueError("world_to_camera rotation block is not orthonormal")
        if not (0.0 < self.near < self.far):
            raise ValueError(f"need 0 < near < far, got near={self.near} far={self.far}")

    @property
    def R(self) -> np.ndarray:
        return self.world_to_camera[:3, :3]

    @property
    def t(self) -> np.ndarray:
        return self.world_to_camera[:3, 3]

    @property
    def center(self) -> np.ndarray:
        """Camera position in world coordinates."""
        return -self.R.T @ self.t

    @property
    def tan_fovx(self) -> float:
        return self.width / (2.0 * self.fx)

    @property
    def tan_fovy(self) -> float:
        return self.height / (2.0 * self.fy)

    def to_dict(self) -> dict:
        return {
            "fx": self.fx,
            "fy": self.fy,
            "cx": self.cx,
            "cy": self.cy,
            "width": self.width,
            "height": self.height,
            "world_to_camera": self.world_to_camera.tolist(),
            "near": self.near,
            "far": self.far,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Camera":
        return cls(
            fx=float(d["fx"]),
            fy=float(d["fy"]),
            cx=float(d["cx"]),
            cy=float(d["cy"]),
            width=int(d["width"]),
            height=int(d["height"]),
            world_to_camera=np.asarray(d["world_to_camera"], dtype=np.float64),
            near=float(d.get("near", 0.01)),
            far=float(d.get("far", 100.0)),
        )

    @classmethod
    def look_at(
        cls,
        eye,
        target,
        up=(0.0, 1.0, 0.0),
        fov_deg: float = 60.0,
        width: int = 128,
        height: int = 128,
        near: float = 0.01,
        far: float = 100.0,
    ) -> "Camera":
        """Build a camera from look-at parameters; +z is the view direction."""
        eye = np.asarray(eye, dtype=np.float64)
        target = np.asarray(target, dtype=np.float64)
        up = np.asarray(up, dtype=np.float64)
        fwd = target - eye
        n = np.linalg.norm(fwd)
        if n < 1e-12:
            raise ValueError("look_at: eye and target coincide")
        fwd = fwd / n
        x_c = np.cross(up, fwd)
        n = np.linalg.norm(x_c)
        if n < 1e-12:
            raise ValueError("look_at: up is parallel to the view direction")
        x_c = x_c / n
        y_c = np.cross(fwd, x_c)
        R = np.stack([x_c, y_c, fwd])
        w2c = np.eye(4)
        w2c[:3, :3] = R
        w2c[:3, 3] = -R @ eye
        fx = width / (2.0 * math.tan(math.radians(fov_deg) / 2.0))
        return cls(
            fx=fx,
            fy=fx,
            cx=(width - 1) / 2.0,
            cy=(height - 1) / 2.0,
            width=width,
            height=height,
            world_to_camera=w2c,
            near=near,
            far=far,
        )


@dataclass
class GaussianCloud:
    means: np.ndarray           # N x 3
    rotations: np.ndarray       # N x 4 quaternions (w, x, y, z)
    log_scales: np.ndarray      # N x 3
    opacity_logits: np.ndarray  # N
    sh_coeffs: np.ndarray       # N x 3 x (L+1)^2
    features: np.ndarray        # N x d

    def __post_init__(self):
        self.means = np.asarray(self.means, dtype=np.float64)
        self.rotations = np.asarray(self.rotations, dtype=np.float64)
        self.log_scales = np.asarray(self.log_scales, dtype=np.float64)
        self.opacity_logits = np.asarray(self.opacity_logits, dtype=np.float64).reshape(-1)
        self.sh_coeffs = np.asarray(self.sh_coeffs, dtype=np.float64)
        self.features = np.asarray(self.features, dtype=np.float64)
        n = self.means.shape[0]
        for name in ("rotations", "log_scales", "opacity_logits", "sh_coeffs", "features"):
            if getattr(self, name).shape[0] != n:
                raise ValueError(f"{name} leading dimension != N={n}")
        m = self.sh_coeffs.shape[2]
        if int(round(math.sqrt(m))) ** 2 != m:
            raise ValueError(f"sh coefficient count {m} is not a square")

    @property
    def n(self) -> int:
        return self.means.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    @property
    def degree(self) -> int:
        return int(round(math.sqrt(self.sh_coeffs.shape[2]))) - 1

    def copy(self) -> "GaussianCloud":
        return GaussianCloud(
            self.means.copy(),
            self.rotations.copy(),
            self.log_scales.copy(),
            self.opacity_logits.copy(),
            self.sh_coeffs.copy(),
            self.features.copy(),
        )

    def to_tensors(self) -> dict:
        return {
            "means": self.means,
            "rotations": self.rotations,
            "log_scales": self.log_scales,
            "opacity_logits": self.opacity_logits,
            "sh_coeffs": self.sh_coeffs,
            "features": self.features,
        }

    @classmethod
    def from_tensors(cls, tensors: dict) -> "GaussianCloud":
        return cls(
            tensors["means"],
            tensors["rotations"],
            tensors["log_scales"],
            tensors["opacity_logits"],
            tensors["sh_coeffs"],
            tensors["features"],
        )


def quat_normalize(q: np.ndarray, eps: float = 1e-12) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    norms = np.linalg.norm(q, axis=-1, keepdims=True)
    if np.any(norms < 1e-8):
        raise DegenerateRotationError("quaternion norm below 1e-8, rotation undefined")
    return q / norms


def quat_to_rotmat(q: np.ndarray) -> np.ndarray:
    """Unit quaternions (..., 4) in (w, x, y, z) order to rotation matrices."""
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    R = np.empty(q.shape[:-1] + (3, 3), dtype=np.float64)
    R[..., 0, 0] = 1 - 2 * (y * y + z * z)
    R[..., 0, 1] = 2 * (x * y - w * z)
    R[..., 0, 2] = 2 * (x * z + w * y)
    R[..., 1, 0] = 2 * (x * y + w * z)
    R[..., 1, 1] = 1 - 2 * (x * x + z * z)
    R[..., 1, 2] = 2 * (y * z - w * x)
    R[..., 2, 0] = 2 * (x * z - w * y)
    R[..., 2, 1] = 2 * (y * z + w * x)
    R[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return R


def sh_band_count(degree: int) -> int:
    if degree not in (0, 1, 2, 3):
        raise DegreeError(f"degree {degree} outside supported range 0..3")
    return (degree + 1) ** 2


def sh_basis(dirs: np.ndarray, degree: int) -> np.ndarray:
    """Evaluate the real SH basis at unit directions (..., 3) -> (..., (L+1)^2)."""
    m = sh_band_count(degree)
    dirs = np.asarray(dirs, dtype=np.float64)
    x, y, z = dirs[..., 0], dirs[..., 1], dirs[..., 2]
    out = np.empty(dirs.shape[:-1] + (m,), dtype=np.float64)
    out[..., 0] = SH_C0
    if degree >= 1:
        out[..., 1] = -SH_C1 * y
        out[..., 2] = SH_C1 * z
        out[..., 3] = -SH_C1 * x
    if degree >= 2:
        xx, yy, zz = x * x, y * y, z * z
        out[..., 4] = SH_C2[0] * x * y
        out[..., 5] = SH_C2[1] * y * z
        out[..., 6] = SH_C2[2] * (2.0 * zz - xx - yy)
        out[..., 7] = SH_C2[3] * x * z
        out[..., 8] = SH_C2[4] * (xx - yy)
    if degree >= 3:
        xx, yy, zz = x * x, y * y, z * z
        out[..., 9] = SH_C3[0] * y * (3.0 * xx - yy)
        out[..., 10] = SH_C3[1] * x * y * z
        out[..., 11] = SH_C3[2] * y * (4.0 * zz - xx - yy)
        out[..., 12] = SH_C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy)
        out[..., 13] = SH_C3[4] * x * (4.0 * zz - xx - yy)
        out[..., 14] = SH_C3[5] * z * (xx - yy)
        out[..., 15] = SH_C3[6] * x * (xx - 3.0 * yy)
    return out


def sh_basis_grad(dirs: np.ndarray, degree: int) -> np.ndarray:
    """d(basis)/d(direction) at unit directions: (..., (L+1)^2, 3)."""
    m = sh_band_count(degree)
    dirs = np.asarray(dirs, dtype=np.float64)
    x, y, z = dirs[..., 0], dirs[..., 1], dirs[..., 2]
    g = np.zeros(dirs.shape[:-1] + (m, 3), dtype=np.float64)
    if degree >= 1:
        g[..., 1, 1] = -SH_C1
        g[..., 2, 2] = SH_C1
        g[..., 3, 0] = -SH_C1
    if degree >= 2:
        g[..., 4, 0] = SH_C2[0] * y
        g[..., 4, 1] = SH_C2[0] * x
        g[..., 5, 1] = SH_C2[1] * z
        g[..., 5, 2] = SH_C2[1] * y
        g[..., 6, 0] = SH_C2[2] * (-2.0 * x)
        g[..., 6, 1] = SH_C2[2] * (-2.0 * y)
        g[..., 6, 2] = SH_C2[2] * (4.0 * z)
        g[..., 7, 0] = SH_C2[3] * z
        g[..., 7, 2] = SH_C2[3] * x
        g[..., 8, 0] = SH_C2[4] * (2.0 * x)
        g[..., 8, 1] = SH_C2[4] * (-2.0 * y)
    if degree >= 3:
        g[..., 9, 0] = SH_C3[0] * 6.0 * x * y
        g[..., 9, 1] = SH_C3[0] * (3.0 * x * x - 3.0 * y * y)
        g[..., 10, 0] = SH_C3[1] * y * z
        g[..., 10, 1] = SH_C3[1] * x * z
        g[..., 10, 2] = SH_C3[1] * x * y
        g[..., 11, 0] = SH_C3[2] * (-2.0 * x * y)
        g[..., 11, 1] = SH_C3[2] * (4.0 * z * z - x * x - 3.0 * y * y)
        g[..., 11, 2] = SH_C3[2] * 8.0 * y * z
        g[..., 12, 0] = SH_C3[3] * (-6.0 * x * z)
        g[..., 12, 1] = SH_C3[3] * (-6.0 * y * z)
        g[..., 12, 2] = SH_C3[3] * (6.0 * z * z - 3.0 * x * x - 3.0 * y * y)
        g[..., 13, 0] = SH_C3[4] * (4.0 * z * z - 3.0 * x * x - y * y)
        g[..., 13, 1] = SH_C3[4] * (-2.0 * x * y)
        g[..., 13, 2] = SH_C3[4] * 8.0 * x * z
        g[..., 14, 0] = SH_C3[5] * 2.0 * x * z
        g[..., 14, 1] = SH_C3[5] * (-2.0 * y * z)
        g[..., 14, 2] = SH_C3[5] * (x * x - y * y)
        g[..., 15, 0] = SH_C3[6] * (3.0 * x * x - 3.0 * y * y)
        g[..., 15, 1] = SH_C3[6] * (-6.0 * x * y)
    return g


def evaluate_sh(sh_coeffs: np.ndarray, view_dir: np.ndarray) -> np.ndarray:
    """SH color at a unit view direction, shifted by +0.5 and clamped to [0,1].

    Accepts a single (3, m) coefficient block with a (3,) direction, or
    batched (N, 3, m) with (N, 3).
    """
    sh_coeffs = np.asarray(sh_coeffs, dtype=np.float64)
    view_dir = np.asarray(view_dir, dtype=np.float64)
    single = sh_coeffs.ndim == 2
    if single:
        sh_coeffs = sh_coeffs[None]
        view_dir = view_dir[None]
    m = sh_coeffs.shape[2]
    degree = int(round(math.sqrt(m))) - 1
    sh_band_count(degree)
    basis = sh_basis(view_dir, degree)
    rgb = np.einsum("ncm,nm->nc", sh_coeffs, basis) + 0.5
    rgb = np.clip(rgb, 0.0, 1.0)
    return rgb[0] if single else rgb


def init_from_depth(
    frame,
    camera: Camera,
    stride: int = 1,
    degree: int = 1,
    d: int | None = None,
) -> GaussianCloud:
    """Back-project a frame's valid depth samples into a fresh cloud.

    One Gaussian per sampled pixel with valid depth: position from the
    pixel ray, DC color from the pixel, feature from the compressed
    feature map when present, isotropic scale from the pixel footprint
    depth*stride/fx, opacity logit(0.1), identity rotation.
    """
    if stride < 1:
        raise ValueError("stride must be >= 1")
    m = sh_band_count(degree)
    depth = np.asarray(frame.depth, dtype=np.float64)
    h, w = depth.shape
    vs, us = np.meshgrid(
        np.arange(0, h, stride), np.arange(0, w, stride), indexing="ij"
    )
    vs, us = vs.ravel(), us.ravel()
    z = depth[vs, us]
    keep = z > 0
    if not np.any(keep):
        raise EmptyCloudError("no valid depth samples to initialize from")
    vs, us, z = vs[keep], us[keep], z[keep]
    n = z.shape[0]

    xc = (us - camera.cx) / camera.fx * z
    yc = (vs - camera.cy) / camera.fy * z
    pc = np.stack([xc, yc, z], axis=1)
    world = (pc - camera.t) @ camera.R  # R^T (p - t), row-vector form

    rgb = np.asarray(frame.color, dtype=np.float64)[vs, us] / 255.0
    sh = np.zeros((n, 3, m), dtype=np.float64)
    sh[:, :, 0] = (rgb - 0.5) / SH_C0

    if frame.feature_comp is not None:
        feats = np.asarray(frame.feature_comp, dtype=np.float64)[vs, us]
        if d is not None and feats.shape[1] != d:
            raise ValueError(f"frame features have d={feats.shape[1]}, requested {d}")
    else:
        feats = np.zeros((n, d if d is not None else 3), dtype=np.float64)

    log_scales = np.log(z * stride / camera.fx)[:, None].repeat(3, axis=1)
    return GaussianCloud(
        means=world,
        rotations=np.tile(IDENTITY_QUAT, (n, 1)),
        log_scales=log_scales,
        opacity_logits=np.full(n, math.log(0.1 / 0.9)),
        sh_coeffs=sh,
        features=feats,
    )


def validate_cloud(cloud: GaussianCloud) -> dict:
    """Diagnostics: non-finite counts, out-of-range opacities, bad quaternions."""
    report = {"non_finite": {}, "out_of_range_opacity": 0, "denormalized_quaternions": 0}
    for name, arr in cloud.to_tensors().items():
        bad = int(np.size(arr) - np.isfinite(arr).sum())
        report["non_finite"][name] = bad
    with np.errstate(over="ignore"):
        op = 1.0 / (1.0 + np.exp(-cloud.opacity_logits))
    report["out_of_range_opacity"] = int(np.sum(~((op > 0.0) & (op < 1.0))))
    norms = np.linalg.norm(cloud.rotations, axis=1)
    report["denormalized_quaternions"] = int(np.sum(np.abs(norms - 1.0) > 1e-6))
    report["total_violations"] = (
        sum(report["non_finite"].values())
        + report["out_of_range_opacity"]
        + report["denormalized_quaternions"]
    )
    report["ok"] = report["total_violations"] == 0
    return report
