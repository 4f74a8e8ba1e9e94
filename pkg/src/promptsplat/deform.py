"""Time deformation of the Gaussian cloud.

Each attribute offset is a weighted sum of Gaussian radial basis functions
of normalized time: psi(t) = sum_j omega_j * exp(-(t - theta_j)^2 / (2 sigma_j^2)).
Weights are per-Gaussian and per-channel; basis centers and widths are
shared across the cloud within a bank and trained jointly.

Semantic features deform through a shared lightweight network gated by a
sloped sigmoid of a per-Gaussian scalar bank output:
beta = sigmoid(delta * psi_f), f' = f + g([f, t]) * beta.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .scene import DegenerateRotationError, GaussianCloud

DELTA_SLOPE = 2.5
SIGMA_FLOOR = 1e-6


@dataclass
class FdmParams:
    omega: np.ndarray  # N x C x B
    theta: np.ndarray  # B
    sigma: np.ndarray  # B

    def __post_init__(self):
        self.omega = np.asarray(self.omega, dtype=np.float64)
        self.theta = np.asarray(self.theta, dtype=np.float64).reshape(-1)
        self.sigma = np.asarray(self.sigma, dtype=np.float64).reshape(-1)
        if self.omega.ndim != 3:
            raise ValueError("omega must be N x channels x B")
        b = self.omega.shape[2]
        if self.theta.shape[0] != b or self.sigma.shape[0] != b:
            raise ValueError("theta/sigma length must equal basis count B")

    @property
    def basis_count(self) -> int:
        return self.omega.shape[2]


def init_fdm(n: int, channels: int, basis: int = 16) -> FdmParams:
    """Zero-weight bank: identity deformation at initialization."""
    theta = np.linspace(0.0, 1.0, basis) if basis > 1 else np.array([0.5])
    return FdmParams(
        omega=np.zeros((n, channels, basis)),
        theta=theta,
        sigma=np.full(basis, 1.0 / basis),
    )


def fdm_basis(params: FdmParams, t: float) -> np.ndarray:
    diff = t - params.theta
    return np.exp(-(diff * diff) / (2.0 * params.sigma * params.sigma))


def fdm_eval(params: FdmParams, t: float) -> np.ndarray:
    """psi(t) for every Gaussian and channel: N x C."""
    return params.omega @ fdm_basis(params, t)


def fdm_backward(params: FdmParams, t: float, d_psi: np.ndarray) -> dict:
    """Gradients w.r.t. omega, theta, sigma given upstream d_psi (N x C)."""
    b = fdm_basis(params, t)
    diff = t - params.theta
    d_omega = d_psi[:, :, None] * b[None, None, :]
    # common factor: sum over gaussians and channels of d_psi * omega per basis
    s = np.einsum("nc,ncj->j", d_psi, params.omega)
    d_theta = s * b * diff / (params.sigma ** 2)
    d_sigma = s * b * diff * diff / (params.sigma ** 3)
    return {"omega": d_omega, "theta": d_theta, "sigma": d_sigma}


# ---------------------------------------------------------------------------
# semantic tracker


@dataclass
class SemanticTracker:
    conv1_w: np.ndarray  # 16 x 1 x 3
    conv1_b: np.ndarray  # 16
    conv2_w: np.ndarray  # 16 x 16 x 3
    conv2_b: np.ndarray  # 16
    head_w: np.ndarray   # d x 16*(d+1)
    head_b: np.ndarray   # d
    delta: float = DELTA_SLOPE

    def __post_init__(self):
        for name in ("conv1_w", "conv1_b", "conv2_w", "conv2_b", "head_w", "head_b"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=np.float64))

    @property
    def d(self) -> int:
        return self.head_w.shape[0]

    def params(self) -> dict:
        return {
            "conv1_w": self.conv1_w,
            "conv1_b": self.conv1_b,
            "conv2_w": self.conv2_w,
            "conv2_b": self.conv2_b,
            "head_w": self.head_w,
            "head_b": self.head_b,
        }


def init_tracker(d: int, rng: np.random.Generator, hidden: int = 16) -> SemanticTracker:
    """He-initialized convolutions, zero head: g is exactly zero at start."""
    seq = d + 1
    return SemanticTracker(
        conv1_w=rng.normal(0.0, np.sqrt(2.0 / 3.0), (hidden, 1, 3)),
        conv1_b=np.zeros(hidden),
        conv2_w=rng.normal(0.0, np.sqrt(2.0 / (hidden * 3.0)), (hidden, hidden, 3)),
        conv2_b=np.zeros(hidden),
        head_w=np.zeros((d, hidden * seq)),
        head_b=np.zeros(d),
    )


def _conv1d_same(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """x: N x C_in x S, w: C_out x C_in x 3, zero-padded 'same' convolution."""
    n, _, s = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1)))
    # loop over the 3 taps, einsum over everything else
    out = np.empty((n, w.shape[0], s), dtype=np.float64)
    out[:] = b[None, :, None]
    for k in range(3):
        out += np.einsum("ncs,oc->nos", xp[:, :, k : k + s], w[:, :, k])
    return out


def _conv1d_same_backward(x: np.ndarray, w: np.ndarray, d_out: np.ndarray):
    """Returns (d_x, d_w, d_b) for the 'same' convolution above."""
    n, _, s = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1)))
    d_xp = np.zeros_like(xp)
    d_w = np.zeros_like(w)
    for k in range(3):
        d_w[:, :, k] = np.einsum("nos,ncs->oc", d_out, xp[:, :, k : k + s])
        d_xp[:, :, k : k + s] += np.einsum("nos,oc->ncs", d_out, w[:, :, k])
    d_b = d_out.sum(axis=(0, 2))
    return d_xp[:, :, 1:-1], d_w, d_b


def tracker_forward(tracker: SemanticTracker, feats: np.ndarray, t: float):
    """g([f, t]) for all Gaussians: returns (N x d, cache)."""
    n, d = feats.shape
    x0 = np.concatenate([feats, np.full((n, 1), t)], axis=1)[:, None, :]  # N x 1 x (d+1)
    p1 = _conv1d_same(x0, tracker.conv1_w, tracker.conv1_b)
    a1 = np.maximum(p1, 0.0)
    p2 = _conv1d_same(a1, tracker.conv2_w, tracker.conv2_b)
    flat = p2.reshape(n, -1)
    g = flat @ tracker.head_w.T + tracker.head_b
    cache = (x0, p1, a1, flat)
    return g, cache


def tracker_backward(tracker: SemanticTracker, cache, d_g: np.ndarray):
    """Gradients for all tracker parameters plus the input features."""
    x0, p1, a1, flat = cache
    n = x0.shape[0]
    d_head_w = d_g.T @ flat
    d_head_b = d_g.sum(axis=0)
    d_flat = d_g @ tracker.head_w
    d_p2 = d_flat.reshape(n, tracker.conv2_w.shape[0], -1)
    d_a1, d_w2, d_b2 = _conv1d_same_backward(a1, tracker.conv2_w, d_p2)
    d_p1 = d_a1 * (p1 > 0.0)
    d_x0, d_w1, d_b1 = _conv1d_same_backward(x0, tracker.conv1_w, d_p1)
    d_feats = d_x0[:, 0, :-1]  # the t slot is data, not a parameter
    grads = {
        "conv1_w": d_w1,
        "conv1_b": d_b1,
        "conv2_w": d_w2,
        "conv2_b": d_b2,
        "head_w": d_head_w,
        "head_b": d_head_b,
    }
    return grads, d_feats


# ---------------------------------------------------------------------------
# deformation field = four banks + tracker


@dataclass
class DeformationField:
    mu: FdmParams
    rot: FdmParams
    scale: FdmParams
    gate: FdmParams
    tracker: SemanticTracker

    @property
    def basis_count(self) -> int:
        return self.mu.basis_count


def init_deformation(n: int, d: int, basis: int = 16, seed: int = 0) -> DeformationField:
    rng = np.random.default_rng(seed)
    return DeformationField(
        mu=init_fdm(n, 3, basis),
        rot=init_fdm(n, 4, basis),
        scale=init_fdm(n, 3, basis),
        gate=init_fdm(n, 1, basis),
        tracker=init_tracker(d, rng),
    )


def deform_gaussian(cloud: GaussianCloud, field: DeformationField, t: float):
    """Deformed (mu', unit r', s') plus a cache for the backward pass."""
    mu_p = cloud.means + fdm_eval(field.mu, t)
    rot_raw = cloud.rotations + fdm_eval(field.rot, t)
    norms = np.linalg.norm(rot_raw, axis=1, keepdims=True)
    if np.any(norms < 1e-8):
        raise DegenerateRotationError("deformed quaternion collapsed to zero norm")
    rot_unit = rot_raw / norms
    s_p = cloud.log_scales + fdm_eval(field.scale, t)
    cache = (rot_raw, norms, rot_unit)
    return mu_p, rot_unit, s_p, cache


def deform_gaussian_backward(
    cloud: GaussianCloud,
    field: DeformationField,
    t: float,
    cache,
    d_mu_p: np.ndarray,
    d_rot_unit: np.ndarray,
    d_s_p: np.ndarray,
):
    """Chain gradients back to cloud attributes and all three banks."""
    rot_raw, norms, rot_unit = cache
    # through the normalization: (I - u u^T)/|r| applied to the upstream
    dot = np.sum(d_rot_unit * rot_unit, axis=1, keepdims=True)
    d_rot_raw = (d_rot_unit - rot_unit * dot) / norms
    return {
        "means": d_mu_p,
        "rotations": d_rot_raw,
        "log_scales": d_s_p,
        "fdm_mu": fdm_backward(field.mu, t, d_mu_p),
        "fdm_rot": fdm_backward(field.rot, t, d_rot_raw),
        "fdm_scale": fdm_backward(field.scale, t, d_s_p),
    }


def deform_feature(cloud: GaussianCloud, field: DeformationField, t: float):
    """f' = f + g([f, t]) * sigmoid(delta * psi_gate), with cache."""
    psi = fdm_eval(field.gate, t)  # N x 1
    beta = 1.0 / (1.0 + np.exp(-field.tracker.delta * psi))
    g, tr_cache = tracker_forward(field.tracker, cloud.features, t)
    f_p = cloud.features + g * beta
    cache = (psi, beta, g, tr_cache)
    return f_p, cache


def deform_feature_backward(
    cloud: GaussianCloud, field: DeformationField, t: float, cache, d_f_p: np.ndarray
):
    psi, beta, g, tr_cache = cache
    d_g = d_f_p * beta
    d_beta = np.sum(d_f_p * g, axis=1, keepdims=True)
    d_psi = d_beta * field.tracker.delta * beta * (1.0 - beta)
    tracker_grads, d_feats_tr = tracker_backward(field.tracker, tr_cache, d_g)
    return {
        "features": d_f_p + d_feats_tr,
        "tracker": tracker_grads,
        "fdm_gate": fdm_backward(field.gate, t, d_psi),
    }
