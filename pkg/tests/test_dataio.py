"""Tensor container format, image export and dataset loading."""

import io
import json
import struct

import numpy as np
import pytest

from promptsplat.dataio import (
    MAGIC,
    BadMagicError,
    CrcMismatchError,
    DatasetError,
    PayloadLengthError,
    TruncatedError,
    UnsupportedDtypeError,
    UnsupportedVersionError,
    encode_png_bytes,
    export_image,
    load_dataset,
    read_tensor,
    read_tensor_bytes,
    write_tensor,
)
from promptsplat.scene import Camera


@pytest.mark.parametrize(
    "dtype,shape",
    [
        (np.float32, (5, 7, 3)),
        (np.float64, (4,)),
        (np.uint8, (2, 3)),
        (np.uint16, (6, 6)),
    ],
)
def test_tensor_round_trip(tmp_path, dtype, shape):
    rng = np.random.default_rng(7)
    if np.issubdtype(dtype, np.floating):
        arr = rng.normal(size=shape).astype(dtype)
    else:
        arr = rng.integers(0, np.iinfo(dtype).max, size=shape).astype(dtype)
    path = tmp_path / "t.bin"
    write_tensor(path, arr)
    back = read_tensor(path)
    assert back.dtype == arr.dtype
    assert back.shape == arr.shape
    assert np.array_equal(back, arr)


def test_tensor_empty_and_scalar(tmp_path):
    empty = np.zeros((0, 3), dtype=np.float32)
    write_tensor(tmp_path / "e.bin", empty)
    back = read_tensor(tmp_path / "e.bin")
    assert back.shape == (0, 3) and back.dtype == np.float32

    scalar = np.float64(2.5)
    write_tensor(tmp_path / "s.bin", scalar)
    back = read_tensor(tmp_path / "s.bin")
    assert back.shape == () and back == 2.5


def test_tensor_rejects_unsupported_dtype(tmp_path):
    with pytest.raises(UnsupportedDtypeError):
        write_tensor(tmp_path / "x.bin", np.zeros(3, dtype=np.int64))


def _make_blob(tmp_path, arr):
    p = tmp_path / "b.bin"
    write_tensor(p, arr)
    return bytearray(p.read_bytes())


def test_corruption_modes_each_raise_typed_error(tmp_path):
    arr = np.arange(24, dtype=np.float32).reshape(4, 6)
    good = _make_blob(tmp_path, arr)

    bad = bytearray(good)
    bad[:4] = b"NOPE"
    with pytest.raises(BadMagicError):
        read_tensor_bytes(bytes(bad))

    bad = bytearray(good)
    bad[4] = 99  # version LE low byte
    with pytest.raises(UnsupportedVersionError):
        read_tensor_bytes(bytes(bad))

    bad = bytearray(good)
    bad[6] = 200  # dtype code
    with pytest.raises(UnsupportedDtypeError):
        read_tensor_bytes(bytes(bad))

    with pytest.raises(TruncatedError):
        read_tensor_bytes(bytes(good[:3]))
    with pytest.raises(TruncatedError):
        read_tensor_bytes(bytes(good[:6]))
    with pytest.raises(TruncatedError):
        read_tensor_bytes(bytes(good[:12]))  # inside the dim table
    with pytest.raises(TruncatedError):
        read_tensor_bytes(bytes(good[: 8 + 16 + 2]))  # CRC trailer missing

    # drop one payload byte but keep a 4-byte trailer
    bad = good[:-5] + good[-4:]
    with pytest.raises(PayloadLengthError):
        read_tensor_bytes(bytes(bad))

    bad = bytearray(good)
    bad[30] ^= 0xFF  # flip a payload byte
    with pytest.raises(CrcMismatchError):
        read_tensor_bytes(bytes(bad))


def test_header_layout_is_stable(tmp_path):
    arr = np.zeros((2, 3), dtype=np.uint8)
    blob = bytes(_make_blob(tmp_path, arr))
    assert blob[:4] == MAGIC
    version, code, ndim = struct.unpack_from("<HBB", blob, 4)
    assert (version, code, ndim) == (1, 3, 2)
    assert struct.unpack_from("<2Q", blob, 8) == (2, 3)


def test_export_image_quantizes_floats(tmp_path):
    from PIL import Image

    img = np.linspace(0, 1, 12, dtype=np.float64).reshape(2, 2, 3)
    p = tmp_path / "i.png"
    export_image(p, img)
    back = np.asarray(Image.open(p))
    want = np.clip(np.round(img * 255.0), 0, 255).astype(np.uint8)
    assert np.array_equal(back, want)

    u8 = np.array([[0, 128], [255, 7]], dtype=np.uint8)
    export_image(p, u8)
    assert np.array_equal(np.asarray(Image.open(p)), u8)


def test_encode_png_bytes_deterministic():
    rng = np.random.default_rng(8)
    img = rng.integers(0, 256, size=(9, 11, 3)).astype(np.uint8)
    a = encode_png_bytes(img)
    b = encode_png_bytes(img.copy())
    assert a == b
    from PIL import Image

    assert np.array_equal(np.asarray(Image.open(io.BytesIO(a))), img)


# ---------------------------------------------------------------------------
# dataset manifests


def _micro_dataset(root, n_frames=3, times=None, mutate=None):
    """Minimal valid dataset; `mutate(man)` tampers before writing."""
    root.mkdir(parents=True, exist_ok=True)
    h, w = 4, 5
    cam = Camera.look_at([0, 0, -2], [0, 0, 1], width=w, height=h)
    times = times if times is not None else list(range(n_frames))
    rng = np.random.default_rng(9)
    frames = []
    for i in range(n_frames):
        color = rng.integers(0, 256, size=(h, w, 3)).astype(np.uint8)
        depth = rng.uniform(1, 3, size=(h, w)).astype(np.float32)
        labels = rng.integers(0, 3, size=(h, w)).astype(np.uint16)
        write_tensor(root / f"color_{i}.bin", color)
        write_tensor(root / f"depth_{i}.bin", depth)
        write_tensor(root / f"labels_{i}.bin", labels)
        frames.append(
            {
                "color": f"color_{i}.bin",
                "depth": f"depth_{i}.bin",
                "labels": f"labels_{i}.bin",
                "time": times[i],
            }
        )
    (root / "lexicon.json").write_text("{}")
    man = {
        "frames": frames,
        "cameras": [cam.to_dict()],
        "d": 3,
        "feature_dim": 16,
        "classes": ["a", "b"],
        "lexicon": "lexicon.json",
        "note": "kept",
    }
    if mutate:
        mutate(man)
    path = root / "manifest.json"
    path.write_text(json.dumps(man))
    return path


def test_load_micro_dataset(tmp_path):
    path = _micro_dataset(tmp_path / "ds", n_frames=3, times=[5.0, 7.0, 9.0])
    ds = load_dataset(path)
    assert len(ds.frames) == 3
    assert [f.timestamp for f in ds.frames] == [0.0, 0.5, 1.0]
    assert [f.raw_time for f in ds.frames] == [5.0, 7.0, 9.0]
    assert ds.resolution == (4, 5)
    assert ds.d == 3 and ds.feature_dim == 16
    assert ds.classes == ["a", "b"]
    assert ds.codec_path is None
    assert "note" in ds.extra
    assert "frames" not in ds.extra and "cameras" not in ds.extra
    assert ds.frames[0].depth.dtype == np.float32
    assert ds.frames[0].labels.dtype == np.uint16


def test_default_split_every_eighth_frame(tmp_path):
    path = _micro_dataset(tmp_path / "ds", n_frames=9)
    ds = load_dataset(path)
    assert ds.test_indices == [0, 8]
    assert ds.train_indices == [1, 2, 3, 4, 5, 6, 7]
    assert all(ds.frames[i].split == "test" for i in ds.test_indices)


def test_explicit_split_overrides_rule(tmp_path):
    def keep_first_in_train(man):
        man["frames"][0]["split"] = "train"

    path = _micro_dataset(tmp_path / "ds", n_frames=3, mutate=keep_first_in_train)
    ds = load_dataset(path)
    assert ds.frames[0].split == "train"
    assert ds.test_indices == []


def test_constant_time_normalizes_to_zero(tmp_path):
    path = _micro_dataset(tmp_path / "ds", n_frames=2, times=[4.0, 4.0])
    ds = load_dataset(path)
    assert [f.timestamp for f in ds.frames] == [0.0, 0.0]


def test_dataset_errors_name_the_frame(tmp_path):
    path = _micro_dataset(tmp_path / "a")
    (tmp_path / "a" / "color_1.bin").unlink()
    with pytest.raises(DatasetError, match="frame 1.*color"):
        load_dataset(path)

    path = _micro_dataset(tmp_path / "b")
    write_tensor(tmp_path / "b" / "depth_2.bin", np.zeros((9, 9), dtype=np.float32))
    with pytest.raises(DatasetError, match="frame 2.*depth"):
        load_dataset(path)

    path = _micro_dataset(tmp_path / "c")
    (tmp_path / "c" / "labels_0.bin").write_bytes(b"JUNKJUNKJUNK")
    with pytest.raises(DatasetError, match="frame 0.*labels"):
        load_dataset(path)


def test_manifest_level_validation(tmp_path):
    def no_frames(man):
        man["frames"] = []

    with pytest.raises(DatasetError, match="no frames"):
        load_dataset(_micro_dataset(tmp_path / "a", mutate=no_frames))

    def no_cameras(man):
        man["cameras"] = []

    with pytest.raises(DatasetError, match="cameras"):
        load_dataset(_micro_dataset(tmp_path / "b", mutate=no_cameras))

    def no_lexicon(man):
        del man["lexicon"]

    with pytest.raises(DatasetError, match="lexicon"):
        load_dataset(_micro_dataset(tmp_path / "c", mutate=no_lexicon))

    def bad_camera_index(man):
        man["frames"][1]["camera"] = 5

    with pytest.raises(DatasetError, match="frame 1.*camera index"):
        load_dataset(_micro_dataset(tmp_path / "d", mutate=bad_camera_index))


def test_codec_dimension_agreement(tmp_path):
    def with_codec(man):
        man["codec"] = "codec.json"

    root = tmp_path / "ds"

    def write_codec(d, feature_dim):
        (root / "codec.json").write_text(
            json.dumps({"format": "promptsplat-codec", "d": d, "feature_dim": feature_dim})
        )

    path = _micro_dataset(root, mutate=with_codec)
    write_codec(2, 16)
    with pytest.raises(DatasetError, match="codec d=2"):
        load_dataset(path)
    write_codec(3, 8)
    with pytest.raises(DatasetError, match="feature_dim=8"):
        load_dataset(path)


def test_real_dataset_fixture(tiny_dataset):
    ds = load_dataset(tiny_dataset)
    assert len(ds.frames) == 12
    assert ds.test_indices == [0, 8]
    assert ds.codec_path is not None
    ts = [f.timestamp for f in ds.frames]
    assert min(ts) == 0.0 and max(ts) == 1.0
    assert all(0.0 <= t <= 1.0 for t in ts)
    for i in ds.train_indices:
        assert ds.frames[i].feature_comp is not None
        assert ds.frames[i].feature_comp.shape == (*ds.resolution, ds.d)
    assert "prompt_classes" in ds.extra
