"""FastAPI application exposing the model endpoints.

Wire contracts (shared with the augmentation pipeline's clients):

    GET  /info                          -> {d, normalized, endpoints, model}
    POST /embed     (raw image bytes)   -> {"embedding": [f32; d]}
    POST /caption   (chat-completion)   -> {"choices": [{"message": {...}}]}
    POST /generate  {prompt, width,...} -> PNG bytes

Errors: 415 for undecodable images, 503 when the model is not loaded, 404
with a JSON body for disabled endpoints, 401 when a static token is
configured and missing.
"""

from __future__ import annotations

import base64
import threading
from dataclasses import dataclass

from fastapi import FastAPI, Request, Response
from fastapi.responses import JSONResponse

from .models import ModelError, ToyCaptioner, ToyGenerator, UndecodableImage, build_embedder


@dataclass
class ServeConfig:
    host: str = "127.0.0.1"
    port: int = 8731
    embed_model: str = "toy"
    dim: int = 512
    device: str = "cpu"
    max_batch: int = 8
    enable: tuple[str, ...] = ("embed", "caption", "generate")
    token: str | None = None


def create_app(config: ServeConfig | None = None) -> FastAPI:
    config = config or ServeConfig()
    app = FastAPI(title="modelserve", version="0.1.0")

    try:
        embedder = build_embedder(config.embed_model, config.dim, config.device)
    except ModelError:
        embedder = None
    captioner = ToyCaptioner() if "caption" in config.enable else None
    generator = ToyGenerator() if "generate" in config.enable else None
    # bounded concurrency for model calls; results do not depend on batching
    gate = threading.Semaphore(max(1, config.max_batch))

    def _unauthorized(request: Request) -> JSONResponse | None:
        if not config.token:
            return None
        header = request.headers.get("authorization", "")
        if header == f"Bearer {config.token}":
            return None
        return JSONResponse({"error": "invalid or missing token"}, status_code=401)

    def _disabled(name: str) -> JSONResponse:
        return JSONResponse({"error": f"endpoint {name!r} is disabled"}, status_code=404)

    @app.get("/info")
    def info():
        endpoints = []
        if "embed" in config.enable:
            endpoints.append("embed")
        if captioner is not None:
            endpoints.append("caption")
        if generator is not None:
            endpoints.append("generate")
        return {
            "d": embedder.dim if embedder is not None else config.dim,
            "normalized": bool(embedder.normalized) if embedder is not None else True,
            "endpoints": endpoints,
            "model": embedder.name if embedder is not None else "not-loaded",
        }

    @app.post("/embed")
    async def embed(request: Request):
        if (resp := _unauthorized(request)) is not None:
            return resp
        if "embed" not in config.enable:
            return _disabled("embed")
        if embedder is None:
            return JSONResponse({"error": "embedding model not loaded"}, status_code=503)
        data = await request.body()
        try:
            with gate:
                vec = embedder.embed(data)
        except UndecodableImage as exc:
            return JSONResponse({"error": str(exc)}, status_code=415)
        return {"embedding": [float(x) for x in vec]}

    @app.post("/caption")
    async def caption(request: Request):
        if (resp := _unauthorized(request)) is not None:
            return resp
        if captioner is None:
            return _disabled("caption")
        body = await request.json()
        image_bytes = _image_from_chat(body)
        if image_bytes is None:
            return JSONResponse({"error": "no image attached"}, status_code=422)
        try:
            with gate:
                text = captioner.caption(image_bytes)
        except UndecodableImage as exc:
            return JSONResponse({"error": str(exc)}, status_code=415)
        return {"choices": [{"message": {"role": "assistant", "content": text}}]}

    @app.post("/generate")
    async def generate(request: Request):
        if (resp := _unauthorized(request)) is not None:
            return resp
        if generator is None:
            return _disabled("generate")
        body = await request.json()
        prompt = body.get("prompt", "")
        if not prompt:
            return JSONResponse({"error": "prompt required"}, status_code=422)
        width = int(body.get("width", 512))
        height = int(body.get("height", 512))
        steps = int(body.get("steps", 4))
        seed = int(body.get("seed", 0))
        with gate:
            png = generator.generate(prompt, width, height, steps, seed)
        return Response(content=png, media_type="image/png")

    return app


def _image_from_chat(body: dict) -> bytes | None:
    """Pull the base64 image out of a chat-completion request body."""
    for message in body.get("messages", []):
        content = message.get("content")
        if not isinstance(content, list):
            continue
        for part in content:
            if part.get("type") == "image_url":
                url = part.get("image_url", {}).get("url", "")
                if "," in url:
                    try:
                        return base64.b64decode(url.split(",", 1)[1])
                    except Exception:
                        return None
    return None
