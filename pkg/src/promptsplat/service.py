"""HTTP service exposing a trained scene for rendering and language queries.

Every referenced artifact (checkpoint, codec, lexicon) is loaded before the
listener starts, so a running server always answers from a consistent,
immutable snapshot. Responses are deterministic: identical requests produce
byte-identical bodies.

Endpoints:
  GET  /healthz   liveness probe, plain "ok"
  GET  /meta      scene description: frames, time range, resolution, prompts
  POST /render    {time, camera?, mode?} -> PNG image
  POST /query     {prompt|embedding, time, threshold?, camera?} -> JSON with
                  score statistics, a heatmap PNG, a mask PNG, and the raw
                  float32 score map (all base64), so clients can re-threshold
                  locally with pixel-exact agreement

Error contract: 400 for invalid input (detail names the offending field
path), 404 for unknown prompts (with suggestions), 429 when the concurrency
limit is exceeded.
"""

from __future__ import annotations

import base64
import threading
from dataclasses import dataclass

import numpy as np
from fastapi import FastAPI, HTTPException
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse, PlainTextResponse, Response
from pydantic import BaseModel

from .codec import load_codec
from .dataio import encode_png_bytes
from .query import DEFAULT_THRESHOLD, UnknownPromptError, load_lexicon, query_frame
from .rasterizer import render_scene
from .scene import Camera
from .trainer import load_checkpoint


@dataclass
class ServeConfig:
    checkpoint: str
    codec: str
    lexicon: str
    host: str = "127.0.0.1"
    port: int = 8000
    max_concurrent: int = 4
    frontend: str | None = None


class CameraSpec(BaseModel):
    eye: list[float]
    target: list[float]
    up: list[float] = [0.0, 1.0, 0.0]
    fov: float = 60.0


class RenderRequest(BaseModel):
    time: float
    camera: CameraSpec | None = None
    mode: str = "color"


class QueryRequest(BaseModel):
    prompt: str | None = None
    embedding: list[float] | None = None
    time: float
    threshold: float = DEFAULT_THRESHOLD
    camera: CameraSpec | None = None


def _bad(field: str, message: str) -> HTTPException:
    return HTTPException(status_code=400, detail=f"{field}: {message}")


def _b64(data: bytes) -> str:
    return base64.b64encode(data).decode("ascii")


def create_app(config: ServeConfig) -> FastAPI:
    # load everything up front: a listener only starts on a valid snapshot
    ckpt = load_checkpoint(config.checkpoint)
    codec = load_codec(config.codec)
    lexicon = load_lexicon(config.lexicon)
    # prompts live in the full feature space; the scene carries compressed maps
    if codec.feature_dim != lexicon.feature_dim:
        raise ValueError(
            f"codec feature dimension {codec.feature_dim} != lexicon embedding "
            f"dimension {lexicon.feature_dim}"
        )
    if codec.d != ckpt.cloud.d:
        raise ValueError(
            f"codec compressed dimension {codec.d} != scene feature dimension {ckpt.cloud.d}"
        )

    default_camera = Camera.from_dict(ckpt.scene["camera"])
    height, width = (int(v) for v in ckpt.scene["resolution"])
    limiter = threading.Semaphore(config.max_concurrent)

    app = FastAPI(title="promptsplat", docs_url=None, redoc_url=None)
    app.state.limiter = limiter
    app.state.checkpoint = ckpt

    @app.exception_handler(RequestValidationError)
    def _validation_handler(request, exc):
        first = exc.errors()[0]
        path = ".".join(str(p) for p in first.get("loc", ()))
        return JSONResponse(
            status_code=400,
            content={"detail": f"{path}: {first.get('msg', 'invalid value')}"},
        )

    def _resolve_camera(spec: CameraSpec | None, field: str) -> Camera:
        if spec is None:
            return default_camera
        for name in ("eye", "target", "up"):
            if len(getattr(spec, name)) != 3:
                raise _bad(f"{field}.{name}", "expected exactly 3 numbers")
        if not 0.0 < spec.fov < 180.0:
            raise _bad(f"{field}.fov", "must be within (0, 180) degrees")
        try:
            return Camera.look_at(
                eye=spec.eye,
                target=spec.target,
                up=spec.up,
                fov_deg=spec.fov,
                width=width,
                height=height,
            )
        except ValueError as exc:
            raise _bad(field, str(exc)) from None

    def _check_time(t: float) -> None:
        if not np.isfinite(t) or not 0.0 <= t <= 1.0:
            raise _bad("body.time", "must be within [0.0, 1.0]")

    def _acquire():
        if not limiter.acquire(blocking=False):
            raise HTTPException(
                status_code=429,
                detail=f"server is at its concurrency limit ({config.max_concurrent})",
            )

    @app.get("/healthz", response_class=PlainTextResponse)
    def healthz() -> str:
        return "ok"

    @app.get("/meta")
    def meta() -> dict:
        return {
            "n_frames": ckpt.scene["n_frames"],
            "time_range": ckpt.scene["time_range"],
            "resolution": [height, width],
            "d": ckpt.scene["d"],
            "feature_dim": ckpt.scene["feature_dim"],
            "prompts": sorted(lexicon.prompts),
            "default_threshold": DEFAULT_THRESHOLD,
            "iteration": ckpt.iteration,
            "tracker_enabled": ckpt.config.enable_tracker,
        }

    @app.post("/render")
    def render(body: RenderRequest) -> Response:
        _check_time(body.time)
        if body.mode not in ("color", "depth", "accum"):
            raise _bad("body.mode", "must be one of color, depth, accum")
        camera = _resolve_camera(body.camera, "body.camera")
        _acquire()
        try:
            out = render_scene(
                ckpt.cloud,
                camera,
                field=ckpt.field,
                t=body.time,
                track_features=ckpt.config.enable_tracker,
            )
            if body.mode == "color":
                img = out.color
            elif body.mode == "depth":
                img = out.depth / max(float(out.depth.max()), 1e-12)
            else:
                img = out.accum_alpha
            png = encode_png_bytes(img)
        finally:
            limiter.release()
        return Response(content=png, media_type="image/png")

    @app.post("/query")
    def query(body: QueryRequest) -> JSONResponse:
        _check_time(body.time)
        if not 0.0 <= body.threshold <= 1.0:
            raise _bad("body.threshold", "must be within [0.0, 1.0]")
        if (body.prompt is None) == (body.embedding is None):
            raise _bad("body", "exactly one of prompt or embedding is required")
        embedding = None
        if body.prompt is not None:
            if body.prompt not in lexicon.prompts:
                raise HTTPException(
                    status_code=404,
                    detail={
                        "error": f"unknown prompt {body.prompt!r}",
                        "suggestions": lexicon.suggestions(body.prompt),
                    },
                )
        else:
            if len(body.embedding) != lexicon.feature_dim:
                raise _bad(
                    "body.embedding", f"expected {lexicon.feature_dim} numbers"
                )
            embedding = np.asarray(body.embedding, dtype=np.float64)
            if float(np.linalg.norm(embedding)) < 1e-12:
                raise _bad("body.embedding", "must have a nonzero norm")
        camera = _resolve_camera(body.camera, "body.camera")
        _acquire()
        try:
            result = query_frame(
                ckpt,
                codec,
                lexicon,
                t=body.time,
                prompt=body.prompt,
                embedding=embedding,
                threshold=body.threshold,
                camera=camera,
            )
        except UnknownPromptError as exc:  # race-free even if the lexicon changes
            raise HTTPException(
                status_code=404,
                detail={"error": str(exc), "suggestions": exc.suggestions},
            ) from None
        finally:
            limiter.release()
        scores = np.ascontiguousarray(result.relevancy, dtype="<f4")
        payload = {
            "prompt": result.prompt,
            "time": body.time,
            "threshold": result.threshold,
            "shape": list(scores.shape),
            "stats": {
                "min": float(scores.min()),
                "max": float(scores.max()),
                "mean": float(scores.mean()),
                "coverage": float(result.mask.mean()),
            },
            "heatmap_png": _b64(encode_png_bytes(result.heatmap_u8())),
            "mask_png": _b64(encode_png_bytes(result.mask_u8())),
            "scores_f32_le": _b64(scores.tobytes()),
        }
        return JSONResponse(content=payload)

    if config.frontend:
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=config.frontend, html=True), name="ui")

    return app


def run_server(config: ServeConfig) -> None:
    import uvicorn

    app = create_app(config)
    uvicorn.run(app, host=config.host, port=config.port, log_level="warning")
