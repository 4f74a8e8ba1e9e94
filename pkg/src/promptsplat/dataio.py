"""Dataset and tensor container IO.

The on-disk tensor container is a small self-describing binary format:

    magic "STPG" | version u16 LE | dtype u8 | ndim u8 | ndim x u64 LE dims
    | row-major little-endian payload | u32 LE CRC32 of the payload

Scene datasets are a JSON manifest referencing one container file per map
(color, depth, labels, features) plus camera parameters, a lexicon and an
optional feature codec.
"""

from __future__ import annotations

import io
import json
import os
import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

MAGIC = b"STPG"
FORMAT_VERSION = 1

_DTYPE_CODES = {1: "<f4", 2: "<f8", 3: "u1", 4: "<u2"}
_CODE_FOR_KIND = {
    ("f", 4): 1,
    ("f", 8): 2,
    ("u", 1): 3,
    ("u", 2): 4,
}

_CHUNK = 1 << 20


class ContainerError(Exception):
    """Base class for tensor container load/store failures."""


class BadMagicError(ContainerError):
    pass


class UnsupportedVersionError(ContainerError):
    pass


class UnsupportedDtypeError(ContainerError):
    pass


class TruncatedError(ContainerError):
    """File ends before the declared header or payload is complete."""


class PayloadLengthError(ContainerError):
    """Payload byte count disagrees with the declared dims and dtype."""


class CrcMismatchError(ContainerError):
    pass


class DatasetError(Exception):
    """Manifest or frame-level validation failure."""


def _dtype_code(arr: np.ndarray) -> int:
    kind = (arr.dtype.kind, arr.dtype.itemsize)
    if kind not in _CODE_FOR_KIND:
        raise UnsupportedDtypeError(
            f"dtype {arr.dtype} not storable; supported: f32, f64, u8, u16"
        )
    return _CODE_FOR_KIND[kind]


def write_tensor(path: str | os.PathLike, data: np.ndarray) -> None:
    """Write an array to the container format, streaming the payload.

    The CRC32 of the payload is computed on the fly and appended after the
    last chunk, so arbitrarily large tensors never need a second pass.
    """
    arr = np.asarray(data)
    code = _dtype_code(arr)
    # astype rather than ascontiguousarray: the latter promotes 0-d to 1-d
    arr = arr.astype(_DTYPE_CODES[code], order="C", copy=False)
    header = MAGIC + struct.pack("<HBB", FORMAT_VERSION, code, arr.ndim)
    header += struct.pack(f"<{arr.ndim}Q", *arr.shape) if arr.ndim else b""
    raw = arr.tobytes(order="C")
    crc = 0
    with open(path, "wb") as fh:
        fh.write(header)
        for off in range(0, len(raw), _CHUNK):
            chunk = raw[off : off + _CHUNK]
            crc = zlib.crc32(chunk, crc)
            fh.write(chunk)
        if not raw:
            crc = zlib.crc32(b"", 0)
        fh.write(struct.pack("<I", crc))


def read_tensor(path: str | os.PathLike) -> np.ndarray:
    with open(path, "rb") as fh:
        blob = fh.read()
    return read_tensor_bytes(blob, name=str(path))


def read_tensor_bytes(blob: bytes, name: str = "<bytes>") -> np.ndarray:
    """Parse a container blob; every corruption mode raises a typed error."""
    if len(blob) < 4:
        raise TruncatedError(f"{name}: {len(blob)} bytes, header incomplete")
    if blob[:4] != MAGIC:
        raise BadMagicError(f"{name}: magic {blob[:4]!r} != {MAGIC!r}")
    if len(blob) < 8:
        raise TruncatedError(f"{name}: fixed header incomplete")
    version, code, ndim = struct.unpack_from("<HBB", blob, 4)
    if version != FORMAT_VERSION:
        raise UnsupportedVersionError(f"{name}: version {version}, expected {FORMAT_VERSION}")
    if code not in _DTYPE_CODES:
        raise UnsupportedDtypeError(f"{name}: unknown dtype code {code}")
    dims_end = 8 + 8 * ndim
    if len(blob) < dims_end:
        raise TruncatedError(f"{name}: dim table incomplete ({ndim} dims declared)")
    dims = struct.unpack_from(f"<{ndim}Q", blob, 8) if ndim else ()
    dtype = np.dtype(_DTYPE_CODES[code])
    expected = int(np.prod(dims, dtype=np.uint64)) * dtype.itemsize if ndim else dtype.itemsize
    if ndim == 0:
        expected = dtype.itemsize
    body = blob[dims_end:]
    if len(body) < 4:
        raise TruncatedError(f"{name}: missing CRC trailer")
    payload, (crc_stored,) = body[:-4], struct.unpack("<I", body[-4:])
    if len(payload) != expected:
        raise PayloadLengthError(
            f"{name}: payload {len(payload)} bytes, dims {tuple(dims)} "
            f"x {dtype} require {expected}"
        )
    if zlib.crc32(payload) != crc_stored:
        raise CrcMismatchError(f"{name}: payload CRC mismatch")
    arr = np.frombuffer(payload, dtype=dtype).reshape(dims)
    return arr.copy()


def export_image(path: str | os.PathLike, array: np.ndarray) -> None:
    """Export an image map as an 8-bit PNG for inspection.

    Float inputs are treated as [0,1] and quantized; u8 passes through.
    """
    from PIL import Image

    arr = np.asarray(array)
    if arr.dtype.kind == "f":
        arr = np.clip(np.round(arr * 255.0), 0, 255).astype(np.uint8)
    elif arr.dtype != np.uint8:
        arr = arr.astype(np.uint8)
    Image.fromarray(arr).save(path, format="PNG")


def encode_png_bytes(array: np.ndarray) -> bytes:
    from PIL import Image

    arr = np.asarray(array)
    if arr.dtype.kind == "f":
        arr = np.clip(np.round(arr * 255.0), 0, 255).astype(np.uint8)
    buf = io.BytesIO()
    Image.fromarray(arr).save(buf, format="PNG")
    return buf.getvalue()


# ---------------------------------------------------------------------------
# scene manifests


@dataclass
class FrameSample:
    """One supervised time step of a scene."""

    color: np.ndarray          # H x W x 3 u8
    depth: np.ndarray          # H x W f32, 0 = invalid
    labels: np.ndarray         # H x W u16 region ids, 0 = unlabeled
    timestamp: float           # normalized to [0,1] at load
    camera_index: int = 0
    feature_full: np.ndarray | None = None   # H x W x D_f f32
    feature_comp: np.ndarray | None = None   # H x W x d f32
    split: str = "train"
    raw_time: float = 0.0


@dataclass
class Dataset:
    frames: list[FrameSample]
    cameras: list
    d: int
    feature_dim: int
    classes: list[str]
    lexicon_path: str
    codec_path: str | None
    root: str
    resolution: tuple[int, int]
    extra: dict = field(default_factory=dict)

    @property
    def train_indices(self) -> list[int]:
        return [i for i, f in enumerate(self.frames) if f.split != "test"]

    @property
    def test_indices(self) -> list[int]:
        return [i for i, f in enumerate(self.frames) if f.split == "test"]


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise DatasetError(msg)


def _load_map(root: str, rel: str, what: str, frame_id: int) -> np.ndarray:
    path = os.path.join(root, rel)
    if not os.path.exists(path):
        raise DatasetError(f"frame {frame_id}: missing {what} file {rel!r}")
    try:
        return read_tensor(path)
    except ContainerError as exc:
        raise DatasetError(f"frame {frame_id}: unreadable {what} file {rel!r}: {exc}") from exc


def load_dataset(manifest_path: str | os.PathLike) -> Dataset:
    """Load, validate and time-normalize a scene dataset.

    Raises DatasetError naming the offending frame for any missing file,
    shape mismatch, or dimension disagreement with the codec.
    """
    from .scene import Camera

    manifest_path = os.fspath(manifest_path)
    with open(manifest_path) as fh:
        man = json.load(fh)
    root = os.path.dirname(os.path.abspath(manifest_path))

    _require(isinstance(man.get("frames"), list), "manifest has no frame list")
    _require(len(man["frames"]) > 0, "empty dataset: manifest lists no frames")
    _require(isinstance(man.get("cameras"), list) and man["cameras"], "manifest has no cameras")

    d = int(man.get("d", 3))
    feature_dim = int(man.get("feature_dim", 16))
    cameras = [Camera.from_dict(c) for c in man["cameras"]]

    codec_rel = man.get("codec")
    codec_path = None
    if codec_rel:
        codec_path = os.path.join(root, codec_rel)
        _require(os.path.exists(codec_path), f"codec file {codec_rel!r} does not exist")
        with open(codec_path) as fh:
            codec_man = json.load(fh)
        _require(
            int(codec_man.get("d", -1)) == d,
            f"codec d={codec_man.get('d')} disagrees with manifest d={d}",
        )
        _require(
            int(codec_man.get("feature_dim", -1)) == feature_dim,
            f"codec feature_dim={codec_man.get('feature_dim')} disagrees with "
            f"manifest feature_dim={feature_dim}",
        )

    lexicon_rel = man.get("lexicon")
    _require(bool(lexicon_rel), "manifest has no lexicon path")
    lexicon_path = os.path.join(root, lexicon_rel)
    _require(os.path.exists(lexicon_path), f"lexicon file {lexicon_rel!r} does not exist")

    raw_times = [float(fr["time"]) for fr in man["frames"]]
    t_min, t_max = min(raw_times), max(raw_times)
    span = t_max - t_min

    frames: list[FrameSample] = []
    for i, fr in enumerate(man["frames"]):
        color = _load_map(root, fr["color"], "color", i)
        depth = _load_map(root, fr["depth"], "depth", i)
        labels = _load_map(root, fr["labels"], "labels", i)
        _require(color.ndim == 3 and color.shape[2] == 3, f"frame {i}: color must be HxWx3")
        hw = color.shape[:2]
        _require(
            depth.shape == hw,
            f"frame {i}: depth shape {depth.shape} != color shape {hw}",
        )
        _require(
            labels.shape == hw,
            f"frame {i}: labels shape {labels.shape} != color shape {hw}",
        )
        feature_full = None
        if fr.get("feature_full"):
            feature_full = _load_map(root, fr["feature_full"], "feature_full", i)
            _require(
                feature_full.shape == (*hw, feature_dim),
                f"frame {i}: feature_full shape {feature_full.shape} != {(*hw, feature_dim)}",
            )
        feature_comp = None
        if fr.get("feature_comp"):
            feature_comp = _load_map(root, fr["feature_comp"], "feature_comp", i)
            _require(
                feature_comp.shape == (*hw, d),
                f"frame {i}: feature_comp shape {feature_comp.shape} != {(*hw, d)}",
            )
        cam_idx = int(fr.get("camera", 0))
        _require(0 <= cam_idx < len(cameras), f"frame {i}: camera index {cam_idx} out of range")
        t_norm = 0.0 if span == 0.0 else (raw_times[i] - t_min) / span
        split = fr.get("split") or ("test" if i % 8 == 0 else "train")
        frames.append(
            FrameSample(
                color=color,
                depth=depth.astype(np.float32),
                labels=labels.astype(np.uint16),
                timestamp=t_norm,
                camera_index=cam_idx,
                feature_full=feature_full,
                feature_comp=feature_comp,
                split=split,
                raw_time=raw_times[i],
            )
        )

    res = frames[0].color.shape[:2]
    for i, f in enumerate(frames):
        _require(
            f.color.shape[:2] == res,
            f"frame {i}: resolution {f.color.shape[:2]} differs from frame 0 {res}",
        )

    return Dataset(
        frames=frames,
        cameras=cameras,
        d=d,
        feature_dim=feature_dim,
        classes=list(man.get("classes", [])),
        lexicon_path=lexicon_path,
        codec_path=codec_path,
        root=root,
        resolution=(int(res[0]), int(res[1])),
        extra={k: man[k] for k in man if k not in {"frames", "cameras"}},
    )
