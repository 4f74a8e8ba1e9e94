"""Rasterizer: projection against a scalar reference, tiled blending against
the brute-force path, culling rules, and the blending constants."""

import numpy as np
import pytest

from promptsplat import _kernels
from promptsplat.deform import init_deformation
from promptsplat.rasterizer import (
    COV_LOWPASS,
    RenderOutput,
    _sorted_view,
    project_cloud,
    project_gaussian,
    rasterize_forward,
    rasterize_oracle,
    render_scene,
    render_scene_backward,
)
from promptsplat.scene import Camera, GaussianCloud, quat_normalize, quat_to_rotmat, sh_basis


def _camera(w=48, h=48):
    return Camera.look_at([0.0, 0.0, 0.0], [0.0, 0.0, 1.0], width=w, height=h, fov_deg=60.0)


def _random_cloud(rng, n, d=3, spread=0.35):
    z = rng.uniform(2.0, 4.0, size=n)
    xy = rng.uniform(-spread, spread, size=(n, 2)) * z[:, None]
    means = np.column_stack([xy, z])
    q = rng.normal(size=(n, 4))
    sh = np.zeros((n, 3, 4))
    sh[:, :, 0] = rng.normal(size=(n, 3)) * 0.3
    sh[:, :, 1:] = rng.normal(size=(n, 3, 3)) * 0.1
    return GaussianCloud(
        means=means,
        rotations=q,
        log_scales=np.log(rng.uniform(0.02, 0.12, size=(n, 3))),
        opacity_logits=rng.normal(size=n),
        sh_coeffs=sh,
        features=rng.normal(size=(n, d)),
    )


def _project_oracle_one(mean, quat_unit, log_scale, logit, sh_row, camera):
    """Scalar EWA projection of one splat, no culling assumed."""
    pc = camera.R @ mean + camera.t
    tx, ty, tz = pc
    limx, limy = 1.3 * camera.tan_fovx, 1.3 * camera.tan_fovy
    txc = min(max(tx / tz, -limx), limx) * tz
    tyc = min(max(ty / tz, -limy), limy) * tz
    J = np.array(
        [
            [camera.fx / tz, 0.0, -camera.fx * txc / tz ** 2],
            [0.0, camera.fy / tz, -camera.fy * tyc / tz ** 2],
        ]
    )
    Rm = quat_to_rotmat(quat_unit)
    M = Rm * np.exp(log_scale)[None, :]
    sigma_cam = camera.R @ (M @ M.T) @ camera.R.T
    cov = J @ sigma_cam @ J.T + COV_LOWPASS * np.eye(2)
    a, b, c = cov[0, 0], cov[0, 1], cov[1, 1]
    det = a * c - b * b
    conic = np.array([c / det, -b / det, a / det])
    lam = 0.5 * (a + c) + np.sqrt(0.25 * (a - c) ** 2 + b * b)
    center = np.array(
        [camera.fx * tx / tz + camera.cx, camera.fy * ty / tz + camera.cy]
    )
    ab = 1.0 / (1.0 + np.exp(-logit))
    r_bin = np.sqrt(2.0 * lam * np.log(255.0 * ab)) if 255.0 * ab > 1.0 else 0.0
    view = mean - camera.center
    view = view / np.linalg.norm(view)
    pre = sh_row @ sh_basis(view, int(round(np.sqrt(sh_row.shape[1]))) - 1) + 0.5
    rgb = np.clip(pre, 0.0, 1.0)
    return center, np.array([a, b, c]), conic, tz, rgb, ab, r_bin


def test_projection_matches_scalar_oracle():
    rng = np.random.default_rng(30)
    cam = _camera()
    for _ in range(15):
        cloud = _random_cloud(rng, 12)
        # keep every splat safely inside the frustum for this comparison
        cloud.means[:, :2] *= 0.4
        q = quat_normalize(cloud.rotations)
        batch, cache = project_cloud(
            cloud.means, q, cloud.log_scales, cloud.opacity_logits,
            cloud.sh_coeffs, cloud.features, cam,
        )
        assert batch.m == 12
        for k in range(batch.m):
            src = batch.source_index[k]
            center, cov, conic, depth, rgb, ab, r_bin = _project_oracle_one(
                cloud.means[src], q[src], cloud.log_scales[src],
                cloud.opacity_logits[src], cloud.sh_coeffs[src], cam,
            )
            assert np.allclose(batch.center[k], center, atol=1e-10)
            assert np.allclose(batch.cov[k], cov, rtol=1e-12)
            assert np.allclose(batch.conic[k], conic, rtol=1e-10)
            assert np.isclose(batch.depth[k], depth)
            assert np.allclose(batch.rgb[k], rgb, atol=1e-12)
            assert np.isclose(batch.alpha_base[k], ab)
            assert np.isclose(batch.radius[k], r_bin, atol=1e-10)


def test_projection_culls():
    cam = _camera()
    means = np.array(
        [
            [0.0, 0.0, 3.0],     # visible
            [0.0, 0.0, -2.0],    # behind the camera
            [0.0, 0.0, 0.001],   # inside the near plane
            [50.0, 0.0, 3.0],    # far off image
            [0.0, 0.0, 500.0],   # beyond the far plane
        ]
    )
    n = means.shape[0]
    batch, cache = project_cloud(
        means,
        np.tile([1.0, 0, 0, 0], (n, 1)),
        np.full((n, 3), np.log(0.05)),
        np.zeros(n),
        np.zeros((n, 3, 1)),
        np.zeros((n, 2)),
        cam,
    )
    assert list(batch.source_index) == [0]
    assert cache.n_total == n


def test_binning_radius_zero_hides_splat():
    # 255 * alpha <= 1 gives a zero preprocessing radius: nothing rendered
    cam = _camera(24, 24)
    cloud = GaussianCloud(
        means=np.array([[0.0, 0.0, 3.0]]),
        rotations=np.array([[1.0, 0, 0, 0]]),
        log_scales=np.full((1, 3), np.log(0.4)),
        opacity_logits=np.array([np.log(0.003 / 0.997)]),
        sh_coeffs=np.full((1, 3, 1), 2.0),
        features=np.ones((1, 2)),
    )
    out = render_scene(cloud, cam, bg_color=(0.2, 0.2, 0.2))
    assert np.allclose(out.color, 0.2)
    assert np.all(out.accum_alpha == 0.0)


def test_single_splat_center_blend():
    cam = _camera(25, 25)
    splat = project_gaussian(
        [0.0, 0.0, 3.0], [1.0, 0, 0, 0], np.log([0.5, 0.5, 0.5]), cam,
        rgb=[1.0, 0.0, 0.0], alpha_base=0.7, feature=[2.0, -1.0],
    )
    assert splat is not None
    cloud = GaussianCloud(
        means=np.array([[0.0, 0.0, 3.0]]),
        rotations=np.array([[1.0, 0, 0, 0]]),
        log_scales=np.log(np.full((1, 3), 0.5)),
        opacity_logits=np.array([np.log(0.7 / 0.3)]),
        sh_coeffs=np.zeros((1, 3, 1)),
        features=np.array([[2.0, -1.0]]),
    )
    cloud.sh_coeffs[0, :, 0] = (np.array([1.0, 0, 0]) - 0.5) / 0.28209479177387814
    out = render_scene(cloud, cam, bg_color=(0.0, 0.0, 0.5), bg_depth=10.0)
    cy, cx = 12, 12  # principal point lands on this pixel
    alpha = 0.7  # exp(0) at the exact center
    assert np.allclose(out.color[cy, cx], alpha * np.array([1, 0, 0]) + (1 - alpha) * np.array([0, 0, 0.5]), atol=1e-9)
    assert np.isclose(out.depth[cy, cx], alpha * 3.0 + (1 - alpha) * 10.0, atol=1e-9)
    assert np.allclose(out.feature[cy, cx], alpha * np.array([2.0, -1.0]), atol=1e-9)
    assert np.isclose(out.accum_alpha[cy, cx], alpha, atol=1e-12)


def test_alpha_clamped_at_099():
    cam = _camera(25, 25)
    cloud = GaussianCloud(
        means=np.array([[0.0, 0.0, 3.0]]),
        rotations=np.array([[1.0, 0, 0, 0]]),
        log_scales=np.log(np.full((1, 3), 1.0)),
        opacity_logits=np.array([80.0]),  # sigmoid saturates to 1
        sh_coeffs=np.zeros((1, 3, 1)),
        features=np.ones((1, 1)),
    )
    out = render_scene(cloud, cam, bg_color=(1.0, 1.0, 1.0))
    assert np.isclose(out.accum_alpha[12, 12], 0.99, atol=1e-12)
    assert np.isclose(out.color[12, 12, 0], 0.99 * 0.5 + 0.01 * 1.0, atol=1e-9)


def test_tiled_equals_oracle_random_scenes():
    rng = np.random.default_rng(31)
    cam = _camera(48, 48)
    for _ in range(10):
        cloud = _random_cloud(rng, int(rng.integers(5, 80)))
        q = quat_normalize(cloud.rotations)
        batch, _ = project_cloud(
            cloud.means, q, cloud.log_scales, cloud.opacity_logits,
            cloud.sh_coeffs, cloud.features, cam,
        )
        bg = rng.uniform(0, 1, size=3)
        fast = rasterize_forward(batch, 48, 48, bg_color=bg, bg_depth=1.5)
        slow = rasterize_oracle(batch, 48, 48, bg_color=bg, bg_depth=1.5)
        for name in ("color", "depth", "feature", "accum_alpha"):
            diff = np.abs(getattr(fast, name) - getattr(slow, name)).max()
            assert diff < 1e-9, (name, diff)


def test_early_termination_consistent():
    # sixty near-opaque layers: transmittance crosses 1e-4 after a handful
    cam = _camera(16, 16)
    n = 60
    cloud = GaussianCloud(
        means=np.column_stack([np.zeros(n), np.zeros(n), np.linspace(2, 4, n)]),
        rotations=np.tile([1.0, 0, 0, 0], (n, 1)),
        log_scales=np.log(np.full((n, 3), 2.0)),
        opacity_logits=np.full(n, np.log(0.9 / 0.1)),
        sh_coeffs=np.zeros((n, 3, 1)),
        features=np.ones((n, 1)),
    )
    fast = render_scene(cloud, cam)
    slow = render_scene(cloud, cam, oracle=True)
    assert np.allclose(fast.color, slow.color, atol=1e-12)
    assert np.allclose(fast.accum_alpha, slow.accum_alpha, atol=1e-12)
    assert np.all(fast.accum_alpha < 1.0)
    assert fast.accum_alpha.max() > 1.0 - 1e-3


def test_sort_by_depth_then_source():
    class Batch:
        depth = np.array([2.0, 2.0, 1.0, 3.0])
        source_index = np.array([1, 0, 5, 2])

    order = _sorted_view(Batch())
    assert list(order) == [2, 1, 0, 3]


def test_front_splat_dominates():
    cam = _camera(21, 21)
    cloud = GaussianCloud(
        means=np.array([[0.0, 0.0, 2.0], [0.0, 0.0, 3.0]]),
        rotations=np.tile([1.0, 0, 0, 0], (2, 1)),
        log_scales=np.log(np.full((2, 3), 1.0)),
        opacity_logits=np.full(2, np.log(0.8 / 0.2)),
        sh_coeffs=np.zeros((2, 3, 1)),
        features=np.array([[1.0], [0.0]]),
    )
    cloud.sh_coeffs[0, :, 0] = (np.array([1.0, 0, 0]) - 0.5) / 0.28209479177387814
    cloud.sh_coeffs[1, :, 0] = (np.array([0.0, 0, 1.0]) - 0.5) / 0.28209479177387814
    out = render_scene(cloud, cam)
    c = out.color[10, 10]
    # 0.8 red over 0.8 blue over black background
    assert np.allclose(c, [0.8, 0.0, 0.2 * 0.8], atol=1e-9)


def test_empty_scene_is_background():
    cam = _camera(20, 20)
    cloud = GaussianCloud(
        means=np.array([[0.0, 0.0, -5.0]]),  # behind the camera
        rotations=np.array([[1.0, 0, 0, 0]]),
        log_scales=np.zeros((1, 3)),
        opacity_logits=np.zeros(1),
        sh_coeffs=np.zeros((1, 3, 1)),
        features=np.zeros((1, 3)),
    )
    out = render_scene(cloud, cam, bg_color=(0.1, 0.2, 0.3), bg_feature=np.array([1.0, 2.0, 3.0]), bg_depth=7.0)
    assert isinstance(out, RenderOutput)
    assert np.allclose(out.color, [0.1, 0.2, 0.3])
    assert np.allclose(out.depth, 7.0)
    assert np.allclose(out.feature, [1.0, 2.0, 3.0])
    assert np.all(out.accum_alpha == 0.0)


def test_identity_field_render_bit_exact():
    rng = np.random.default_rng(32)
    cam = _camera(32, 32)
    cloud = _random_cloud(rng, 25)
    field = init_deformation(cloud.n, cloud.d, basis=6, seed=0)
    static = render_scene(cloud, cam)
    for t in rng.uniform(0, 1, size=4):
        moved = render_scene(cloud, cam, field=field, t=float(t))
        assert np.array_equal(moved.color, static.color)
        assert np.array_equal(moved.depth, static.depth)
        assert np.array_equal(moved.feature, static.feature)
        assert np.array_equal(moved.accum_alpha, static.accum_alpha)


def test_backward_gradient_keys():
    rng = np.random.default_rng(33)
    cam = _camera(24, 24)
    cloud = _random_cloud(rng, 8)
    out, cache = render_scene(cloud, cam, need_cache=True)
    grads = render_scene_backward(
        cache,
        np.ones_like(out.color),
        np.ones_like(out.depth),
        np.ones_like(out.feature),
        d_accum=np.ones_like(out.accum_alpha),
    )
    assert set(grads) == {
        "means", "rotations", "log_scales", "opacity_logits", "sh_coeffs", "features",
    }
    for name, arr in grads.items():
        assert arr.shape == getattr(cloud, name).shape
        assert np.all(np.isfinite(arr))

    field = init_deformation(cloud.n, cloud.d, basis=4, seed=1)
    out2, cache2 = render_scene(cloud, cam, field=field, t=0.5, need_cache=True)
    grads2 = render_scene_backward(
        cache2, np.ones_like(out2.color), np.ones_like(out2.depth), np.ones_like(out2.feature)
    )
    assert "fdm_mu.omega" in grads2 and "tracker.conv1_w" in grads2
    assert grads2["means"].shape == cloud.means.shape


def test_blending_constants():
    assert _kernels.ALPHA_CLAMP == 0.99
    assert _kernels.ALPHA_SKIP == pytest.approx(1.0 / 255.0)
    assert _kernels.EARLY_STOP_T == 1e-4
