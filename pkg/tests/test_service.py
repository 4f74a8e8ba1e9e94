"""HTTP service contracts: endpoints, errors, determinism, concurrency."""

import base64
import io

import numpy as np
import pytest
from fastapi.testclient import TestClient

from promptsplat.service import ServeConfig, create_app


@pytest.fixture(scope="module")
def client(tiny_run):
    config = ServeConfig(
        checkpoint=str(tiny_run["checkpoint"]),
        codec=str(tiny_run["codec"]),
        lexicon=str(tiny_run["lexicon"]),
        max_concurrent=2,
    )
    app = create_app(config)
    with TestClient(app) as c:
        c.prompts = tiny_run["prompts"]
        yield c


def test_healthz(client):
    r = client.get("/healthz")
    assert r.status_code == 200
    assert r.text == "ok"


def test_meta(client):
    r = client.get("/meta")
    assert r.status_code == 200
    meta = r.json()
    assert meta["resolution"] == [40, 40]
    assert meta["prompts"] == sorted(client.prompts)
    assert meta["n_frames"] == 12
    assert meta["d"] == 3 and meta["feature_dim"] == 16
    assert 0.0 <= meta["default_threshold"] <= 1.0
    assert meta["iteration"] == 80
    assert isinstance(meta["tracker_enabled"], bool)


def test_render_returns_png_and_is_deterministic(client):
    r1 = client.post("/render", json={"time": 0.5})
    r2 = client.post("/render", json={"time": 0.5})
    assert r1.status_code == 200
    assert r1.headers["content-type"] == "image/png"
    assert r1.content[:8] == b"\x89PNG\r\n\x1a\n"
    assert r1.content == r2.content
    r3 = client.post("/render", json={"time": 0.9})
    assert r3.content != r1.content


def test_render_modes_and_camera_override(client):
    base = client.post("/render", json={"time": 0.0}).content
    for mode in ("depth", "accum"):
        r = client.post("/render", json={"time": 0.0, "mode": mode})
        assert r.status_code == 200 and r.content != base
    cam = {"eye": [0.6, 0.3, -2.4], "target": [0, 0, 3]}
    r = client.post("/render", json={"time": 0.0, "camera": cam})
    assert r.status_code == 200 and r.content != base


def test_render_validation(client):
    r = client.post("/render", json={"time": 1.5})
    assert r.status_code == 400 and "body.time" in r.json()["detail"]
    r = client.post("/render", json={"time": 0.5, "mode": "xray"})
    assert r.status_code == 400 and "body.mode" in r.json()["detail"]
    r = client.post("/render", json={"time": "noon"})
    assert r.status_code == 400 and "time" in r.json()["detail"]
    r = client.post("/render", json={"time": 0.5, "camera": {"eye": [0, 0], "target": [0, 0, 1]}})
    assert r.status_code == 400 and "body.camera.eye" in r.json()["detail"]
    # eye == target: degenerate look-at direction
    r = client.post("/render", json={"time": 0.5, "camera": {"eye": [1, 1, 1], "target": [1, 1, 1]}})
    assert r.status_code == 400 and "body.camera" in r.json()["detail"]
    r = client.post(
        "/render",
        json={"time": 0.5, "camera": {"eye": [0, 0, -2], "target": [0, 0, 1], "fov": 200}},
    )
    assert r.status_code == 400 and "fov" in r.json()["detail"]


def test_query_payload_contract(client):
    name = client.prompts[0]
    r = client.post("/query", json={"prompt": name, "time": 0.5})
    assert r.status_code == 200
    doc = r.json()
    assert doc["prompt"] == name
    assert doc["shape"] == [40, 40]
    assert 0.0 <= doc["stats"]["min"] <= doc["stats"]["mean"] <= doc["stats"]["max"] <= 1.0
    assert 0.0 <= doc["stats"]["coverage"] <= 1.0
    from PIL import Image

    mask = np.asarray(Image.open(io.BytesIO(base64.b64decode(doc["mask_png"]))))
    heat = np.asarray(Image.open(io.BytesIO(base64.b64decode(doc["heatmap_png"]))))
    assert mask.shape == (40, 40) and heat.shape == (40, 40)
    assert set(np.unique(mask)).issubset({0, 255})


def test_client_side_threshold_matches_server_mask(client):
    # raw float32 scores let a client re-threshold with pixel-exact agreement
    name = client.prompts[0]
    r = client.post("/query", json={"prompt": name, "time": 0.25, "threshold": 0.45})
    doc = r.json()
    scores = np.frombuffer(base64.b64decode(doc["scores_f32_le"]), dtype="<f4")
    scores = scores.reshape(doc["shape"])
    from PIL import Image
    import io as _io

    mask = np.asarray(Image.open(_io.BytesIO(base64.b64decode(doc["mask_png"])))) > 0
    client_mask = scores >= np.float32(doc["threshold"])
    assert np.array_equal(client_mask, mask)
    assert doc["stats"]["coverage"] == pytest.approx(float(mask.mean()))


def test_query_determinism(client):
    name = client.prompts[1]
    a = client.post("/query", json={"prompt": name, "time": 0.75}).content
    b = client.post("/query", json={"prompt": name, "time": 0.75}).content
    assert a == b


def test_query_embedding_path(client):
    rng = np.random.default_rng(3)
    emb = rng.normal(size=16).tolist()
    r = client.post("/query", json={"embedding": emb, "time": 0.5})
    assert r.status_code == 200
    assert r.json()["prompt"] == "<embedding>"
    r = client.post("/query", json={"embedding": emb[:4], "time": 0.5})
    assert r.status_code == 400 and "body.embedding" in r.json()["detail"]
    r = client.post("/query", json={"embedding": [0.0] * 16, "time": 0.5})
    assert r.status_code == 400 and "nonzero" in r.json()["detail"]


def test_query_validation(client):
    name = client.prompts[0]
    r = client.post("/query", json={"time": 0.5})
    assert r.status_code == 400 and "exactly one" in r.json()["detail"]
    r = client.post("/query", json={"prompt": name, "embedding": [1.0] * 16, "time": 0.5})
    assert r.status_code == 400
    r = client.post("/query", json={"prompt": name, "time": 0.5, "threshold": 1.5})
    assert r.status_code == 400 and "body.threshold" in r.json()["detail"]


def test_query_unknown_prompt_404_with_suggestions(client):
    want = client.prompts[0]
    r = client.post("/query", json={"prompt": want[:-1] + "?", "time": 0.5})
    assert r.status_code == 404
    detail = r.json()["detail"]
    assert "suggestions" in detail
    assert detail["suggestions"][0] == want


def test_concurrency_limit_429(client):
    # exhaust the semaphore, then verify rejection and recovery
    sem = client.app.state.limiter
    assert sem.acquire(blocking=False)
    assert sem.acquire(blocking=False)
    try:
        r = client.post("/render", json={"time": 0.5})
        assert r.status_code == 429
        assert "concurrency" in r.json()["detail"]
    finally:
        sem.release()
        sem.release()
    assert client.post("/render", json={"time": 0.5}).status_code == 200


def test_startup_rejects_mismatched_codec(tiny_run):
    import json

    doc = json.loads(open(tiny_run["codec"]).read())
    doc["d"] = doc["d"] + 1
    # weight files resolve relative to the manifest, so tamper in place
    bad = tiny_run["codec"].parent / "bad_codec.json"
    bad.write_text(json.dumps(doc))
    config = ServeConfig(
        checkpoint=str(tiny_run["checkpoint"]),
        codec=str(bad),
        lexicon=str(tiny_run["lexicon"]),
    )
    with pytest.raises(ValueError, match="dimension"):
        create_app(config)
