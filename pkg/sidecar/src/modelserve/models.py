"""Model backends served by the sidecar.

The default "toy" models are deterministic and dependency-light so the
service contract can run anywhere; the "clip" embedder loads a real
CLIP-ViT-B/16 through transformers when that stack is installed.
"""

from __future__ import annotations

import hashlib
import io

import numpy as np
from PIL import Image, PngImagePlugin

STYLE_NAMES = (
    "conservative", "dressy", "ethnic", "fairy", "feminine", "gal", "girlish",
    "kireime-casual", "lolita", "mode", "natural", "retro", "rock", "street",
)

_ADJECTIVES = ("pastel", "crimson", "navy", "beige", "charcoal", "ivory", "olive", "teal")
_GARMENTS = ("dress", "blouse", "skirt", "jacket", "sweater", "coat", "scarf", "boots")


class ModelError(Exception):
    pass


class UndecodableImage(ModelError):
    pass


def _decode(data: bytes) -> Image.Image:
    if not data:
        raise UndecodableImage("empty body")
    try:
        img = Image.open(io.BytesIO(data))
        img.load()
        return img
    except Exception as exc:
        raise UndecodableImage(f"cannot decode image: {exc}") from exc


class ToyEmbedder:
    """Deterministic image embedder: downsampled luma features pushed through
    a fixed random projection, L2-normalized.  Identical bytes always map to
    identical vectors."""

    name = "toy-embedder"
    normalized = True

    def __init__(self, dim: int = 512):
        self.dim = dim
        rng = np.random.Generator(np.random.PCG64(20240601))
        self._proj = rng.normal(0.0, 1.0, size=(dim, 1024 + 48)).astype(np.float64)

    def embed(self, data: bytes) -> np.ndarray:
        img = _decode(data).convert("RGB").resize((32, 32), Image.BILINEAR)
        arr = np.asarray(img, dtype=np.float64) / 255.0
        luma = arr @ np.array([0.299, 0.587, 0.114])
        hist = np.concatenate(
            [np.histogram(arr[..., c], bins=16, range=(0.0, 1.0))[0] for c in range(3)]
        ).astype(np.float64)
        hist /= max(hist.sum(), 1.0)
        feats = np.concatenate([luma.ravel(), hist])
        vec = self._proj @ feats
        norm = np.linalg.norm(vec)
        return (vec / norm if norm > 0 else vec).astype(np.float32)


class ClipEmbedder:
    """CLIP-ViT-B/16 joint-space image embeddings via transformers."""

    name = "clip-vit-base-patch16"
    normalized = True

    def __init__(self, model_id: str = "openai/clip-vit-base-patch16", device: str = "cpu"):
        try:
            import torch
            from transformers import CLIPModel, CLIPProcessor
        except ImportError as exc:
            raise ModelError(f"clip backend needs torch+transformers: {exc}") from exc
        try:
            self._model = CLIPModel.from_pretrained(model_id).to(device).eval()
            self._processor = CLIPProcessor.from_pretrained(model_id)
        except Exception as exc:
            raise ModelError(f"failed to load {model_id}: {exc}") from exc
        self._torch = torch
        self._device = device
        self.dim = int(self._model.config.projection_dim)
        self.name = model_id

    def embed(self, data: bytes) -> np.ndarray:
        img = _decode(data).convert("RGB")
        inputs = self._processor(images=img, return_tensors="pt").to(self._device)
        with self._torch.no_grad():
            feats = self._model.get_image_features(**inputs)[0]
        vec = feats.cpu().numpy().astype(np.float32)
        norm = np.linalg.norm(vec)
        return vec / norm if norm > 0 else vec


class ToyCaptioner:
    """Deterministic caption generator honoring the captioning contract."""

    name = "toy-captioner"

    def caption(self, data: bytes) -> str:
        img = _decode(data)
        style = getattr(img, "text", {}).get("styleaug:style")
        digest = hashlib.sha256(data).digest()
        if style not in STYLE_NAMES:
            style = STYLE_NAMES[digest[0] % len(STYLE_NAMES)]
        adj = _ADJECTIVES[digest[1] % len(_ADJECTIVES)]
        garment = _GARMENTS[digest[2] % len(_GARMENTS)]
        adj2 = _ADJECTIVES[digest[3] % len(_ADJECTIVES)]
        garment2 = _GARMENTS[digest[4] % len(_GARMENTS)]
        return (
            f"A photo of a woman wearing a {adj} {garment} with a {adj2} {garment2}, "
            f"in a {style} fashion style."
        )


class ToyGenerator:
    """Deterministic image generator: seeded noise at the requested size."""

    name = "toy-generator"

    def generate(self, prompt: str, width: int, height: int, steps: int, seed: int) -> bytes:
        key = int.from_bytes(hashlib.sha256(f"{prompt}\x00{seed}".encode()).digest()[:8], "little")
        rng = np.random.Generator(np.random.PCG64(key))
        arr = rng.integers(0, 256, size=(height, width, 3), dtype=np.uint8)
        info = PngImagePlugin.PngInfo()
        info.add_text("modelserve:prompt_sha256", hashlib.sha256(prompt.encode()).hexdigest())
        info.add_text("modelserve:steps", str(steps))
        buf = io.BytesIO()
        Image.fromarray(arr, "RGB").save(buf, format="PNG", pnginfo=info)
        return buf.getvalue()


def build_embedder(model: str, dim: int, device: str):
    if model == "toy":
        return ToyEmbedder(dim=dim)
    if model == "clip":
        return ClipEmbedder(device=device)
    if model == "none":  # serve without a loaded model (responds 503)
        return None
    raise ModelError(f"unknown embed model {model!r}")
