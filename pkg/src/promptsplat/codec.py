"""Feature codec: compresses full-dimension vision-language embeddings to a
small per-Gaussian dimension and decodes rendered features back to embedding
space for querying.

Encoder pyramid D_f -> 256 -> 128 -> 64 -> 16 -> d with ReLU between layers,
mirrored decoder. Decoded vectors are L2-normalized (zero maps to zero) so
downstream dot products act as cosine similarities.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from . import dataio
from .optim import AdamState, adam_step

HIDDEN = (256, 128, 64, 16)


class DivergenceError(RuntimeError):
    def __init__(self, iteration: int, value: float):
        super().__init__(f"non-finite training loss at iteration {iteration}: {value}")
        self.iteration = iteration


@dataclass
class FeatureCodec:
    enc_w: list
    enc_b: list
    dec_w: list
    dec_b: list
    feature_dim: int
    d: int

    def params(self) -> dict:
        out = {}
        for i, (w, b) in enumerate(zip(self.enc_w, self.enc_b)):
            out[f"enc_w{i}"] = w
            out[f"enc_b{i}"] = b
        for i, (w, b) in enumerate(zip(self.dec_w, self.dec_b)):
            out[f"dec_w{i}"] = w
            out[f"dec_b{i}"] = b
        return out


def init_codec(feature_dim: int, d: int, rng: np.random.Generator) -> FeatureCodec:
    enc_dims = (feature_dim, *HIDDEN, d)
    dec_dims = (d, *HIDDEN[::-1], feature_dim)
    enc_w, enc_b, dec_w, dec_b = [], [], [], []
    for a, b in zip(enc_dims[:-1], enc_dims[1:]):
        enc_w.append(rng.normal(0.0, np.sqrt(2.0 / a), (b, a)))
        enc_b.append(np.zeros(b))
    for a, b in zip(dec_dims[:-1], dec_dims[1:]):
        dec_w.append(rng.normal(0.0, np.sqrt(2.0 / a), (b, a)))
        dec_b.append(np.zeros(b))
    return FeatureCodec(enc_w, enc_b, dec_w, dec_b, feature_dim, d)


def _check_dim(x: np.ndarray, dim: int, what: str) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None]
    if x.ndim != 2 or x.shape[1] != dim:
        raise ValueError(f"{what} expects rows of length {dim}, got shape {x.shape}")
    return x


def _mlp_forward(x: np.ndarray, ws, bs):
    """Linear/ReLU stack, no activation after the last layer; returns cache."""
    acts = [x]
    pre = []
    h = x
    for i, (w, b) in enumerate(zip(ws, bs)):
        p = h @ w.T + b
        pre.append(p)
        h = np.maximum(p, 0.0) if i < len(ws) - 1 else p
        acts.append(h)
    return h, (acts, pre)


def _mlp_backward(cache, ws, d_out):
    acts, pre = cache
    d_ws, d_bs = [], []
    d_h = d_out
    for i in reversed(range(len(ws))):
        d_p = d_h if i == len(ws) - 1 else d_h * (pre[i] > 0.0)
        d_ws.append(d_p.T @ acts[i])
        d_bs.append(d_p.sum(axis=0))
        d_h = d_p @ ws[i]
    return d_ws[::-1], d_bs[::-1], d_h


def encode(codec: FeatureCodec, features: np.ndarray) -> np.ndarray:
    """Row-wise compression D_f -> d."""
    x = _check_dim(features, codec.feature_dim, "encode")
    single = np.asarray(features).ndim == 1
    out, _ = _mlp_forward(x, codec.enc_w, codec.enc_b)
    return out[0] if single else out


def decode(codec: FeatureCodec, compressed: np.ndarray) -> np.ndarray:
    """Row-wise decompression d -> D_f, L2-normalized; zero maps to zero."""
    z = _check_dim(compressed, codec.d, "decode")
    single = np.asarray(compressed).ndim == 1
    raw, _ = _mlp_forward(z, codec.dec_w, codec.dec_b)
    norms = np.linalg.norm(raw, axis=1, keepdims=True)
    out = np.divide(raw, norms, out=np.zeros_like(raw), where=norms > 0)
    return out[0] if single else out


def reconstruction_loss(codec: FeatureCodec, x: np.ndarray):
    """Mean squared error plus mean (1 - cosine); returns loss, grads, parts."""
    m = x.shape[0]
    z, enc_cache = _mlp_forward(x, codec.enc_w, codec.enc_b)
    y, dec_cache = _mlp_forward(z, codec.dec_w, codec.dec_b)

    diff = y - x
    l2 = np.mean(diff * diff)
    d_y = 2.0 * diff / diff.size

    ny = np.linalg.norm(y, axis=1, keepdims=True)
    nx = np.linalg.norm(x, axis=1, keepdims=True)
    denom = np.maximum(ny * nx, 1e-12)
    dots = np.sum(x * y, axis=1, keepdims=True)
    cos = dots / denom
    cos_loss = np.mean(1.0 - cos)
    # d(1-cos)/dy = -(x/denom - y * dots / (ny^2 * denom))
    d_y += -(x / denom - y * dots / (np.maximum(ny * ny, 1e-12) * denom)) / m

    d_dw, d_db, d_z = _mlp_backward(dec_cache, codec.dec_w, d_y)
    d_ew, d_eb, _ = _mlp_backward(enc_cache, codec.enc_w, d_z)

    grads = {}
    for i in range(len(codec.enc_w)):
        grads[f"enc_w{i}"] = d_ew[i]
        grads[f"enc_b{i}"] = d_eb[i]
    for i in range(len(codec.dec_w)):
        grads[f"dec_w{i}"] = d_dw[i]
        grads[f"dec_b{i}"] = d_db[i]
    return l2 + cos_loss, grads, {"l2": float(l2), "cosine": float(cos_loss)}


def train_codec(
    features: np.ndarray,
    d: int = 3,
    epochs: int = 30,
    lr: float = 1e-3,
    batch_size: int = 1024,
    seed: int = 0,
    max_samples: int | None = 120_000,
) -> tuple[FeatureCodec, list]:
    """Fit the codec to a feature dataset with Adam; deterministic per seed."""
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError("features must be M x D_f")
    if x.shape[0] < 2:
        raise ValueError("need at least 2 feature samples")
    rng = np.random.default_rng(seed)
    if max_samples is not None and x.shape[0] > max_samples:
        pick = rng.choice(x.shape[0], size=max_samples, replace=False)
        x = x[pick]
    m = x.shape[0]
    codec = init_codec(x.shape[1], d, rng)
    params = codec.params()
    state = AdamState()
    history = []
    it = 0
    for _ in range(epochs):
        order = rng.permutation(m)
        for start in range(0, m, batch_size):
            batch = x[order[start : start + batch_size]]
            if batch.shape[0] < 2:
                continue
            loss, grads, parts = reconstruction_loss(codec, batch)
            if not np.isfinite(loss):
                raise DivergenceError(it, float(loss))
            adam_step(params, grads, state, lr)
            it += 1
        history.append({"iter": it, "loss": float(loss), **parts})
    return codec, history


# ---------------------------------------------------------------------------
# serialization


def save_codec(codec: FeatureCodec, manifest_path: str | os.PathLike) -> None:
    manifest_path = os.fspath(manifest_path)
    root = os.path.dirname(os.path.abspath(manifest_path))
    os.makedirs(root, exist_ok=True)
    tensors = {}
    for name, arr in codec.params().items():
        rel = f"codec_{name}.stpg"
        dataio.write_tensor(os.path.join(root, rel), arr)
        tensors[name] = rel
    with open(manifest_path, "w") as fh:
        json.dump(
            {
                "format": "promptsplat-codec",
                "version": 1,
                "feature_dim": codec.feature_dim,
                "d": codec.d,
                "hidden": list(HIDDEN),
                "tensors": tensors,
            },
            fh,
            indent=1,
        )


def load_codec(manifest_path: str | os.PathLike) -> FeatureCodec:
    manifest_path = os.fspath(manifest_path)
    with open(manifest_path) as fh:
        man = json.load(fh)
    if man.get("format") != "promptsplat-codec":
        raise ValueError(f"{manifest_path}: not a codec manifest")
    root = os.path.dirname(os.path.abspath(manifest_path))
    feature_dim, d = int(man["feature_dim"]), int(man["d"])
    n_layers = len(HIDDEN) + 1
    enc_w, enc_b, dec_w, dec_b = [], [], [], []
    for i in range(n_layers):
        enc_w.append(dataio.read_tensor(os.path.join(root, man["tensors"][f"enc_w{i}"])))
        enc_b.append(dataio.read_tensor(os.path.join(root, man["tensors"][f"enc_b{i}"])))
        dec_w.append(dataio.read_tensor(os.path.join(root, man["tensors"][f"dec_w{i}"])))
        dec_b.append(dataio.read_tensor(os.path.join(root, man["tensors"][f"dec_b{i}"])))
    return FeatureCodec(enc_w, enc_b, dec_w, dec_b, feature_dim, d)
