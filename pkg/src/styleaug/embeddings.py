"""Image embeddings behind a pluggable provider, with a bit-exact file format.

Binary format ``EMBV1``: magic bytes ``EMBV1``, little-endian u32 row count,
u32 dimension, u8 normalized flag, then row-major little-endian float32 data.
Row metadata (image id, label, real/synthetic origin) lives in a sidecar
``<file>.manifest.json`` so the payload stays trivially parseable anywhere.
"""

from __future__ import annotations

import hashlib
import io
import json
import struct
import time
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Protocol

import httpx
import jsonschema
import numpy as np

from ._http import request_with_retry
from .dataset import STYLES
from .errors import BackendError, DataError
from .rng import derive_seed, fnv1a64

MAGIC = b"EMBV1"
_HEADER = struct.Struct("<IIB")


@dataclass(frozen=True)
class RowMeta:
    id: str
    label: str
    origin: str  # "real" | "synthetic"


@dataclass
class EmbeddingMatrix:
    data: np.ndarray  # (n, d) float32
    rows: list[RowMeta]
    normalized: bool = False

    def __post_init__(self):
        self.data = np.ascontiguousarray(self.data, dtype=np.float32)
        if self.data.ndim != 2:
            raise DataError(f"embedding data must be 2-D, got shape {self.data.shape}")
        if len(self.rows) != self.data.shape[0]:
            raise DataError(
                f"manifest length {len(self.rows)} != row count {self.data.shape[0]}"
            )

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def d(self) -> int:
        return self.data.shape[1]

    def labels(self) -> list[str]:
        return [r.label for r in self.rows]

    def ids(self) -> list[str]:
        return [r.id for r in self.rows]

    def by_label(self) -> dict[str, np.ndarray]:
        out: dict[str, list[int]] = {}
        for i, r in enumerate(self.rows):
            out.setdefault(r.label, []).append(i)
        return {label: self.data[idx] for label, idx in sorted(out.items())}


def l2_normalize(rows: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(rows, axis=1, keepdims=True)
    if rows.shape[0] and not np.all(norms > 1e-12):
        raise DataError("cannot L2-normalize a zero-norm embedding row")
    return (rows / norms).astype(np.float32) if rows.shape[0] else rows


# --------------------------------------------------------------------------
# providers
# --------------------------------------------------------------------------


class EmbedProvider(Protocol):
    dim: int

    def embed(self, data: bytes, name: str | None = None) -> np.ndarray: ...


class MockEmbedProvider:
    """Class-separable mock: per-style orthogonal unit means plus Gaussian noise.

    The style token is read from the mock image's PNG metadata; failing that
    the row is keyed by a hash of the provided name (or the bytes), so any
    input still embeds deterministically.
    """

    def __init__(self, dim: int = 512, sigma: float = 0.05, seed: int = 0):
        self.dim = dim
        self.sigma = sigma
        self.seed = seed

    def style_mean(self, style: str) -> np.ndarray:
        mean = np.zeros(self.dim, dtype=np.float64)
        if style in STYLES:
            axis = STYLES.index(style) % self.dim
        else:
            axis = fnv1a64(style) % self.dim
        mean[axis] = 1.0
        return mean

    def embed(self, data: bytes, name: str | None = None) -> np.ndarray:
        style = self._style_of(data, name)
        digest = hashlib.sha256(data).hexdigest()[:16]
        rng = np.random.Generator(np.random.PCG64(derive_seed(self.seed, "embed", digest)))
        vec = self.style_mean(style) + rng.normal(0.0, self.sigma, self.dim)
        return vec.astype(np.float32)

    @staticmethod
    def _style_of(data: bytes, name: str | None) -> str:
        try:
            from PIL import Image

            with Image.open(io.BytesIO(data)) as img:
                tag = getattr(img, "text", {}).get("styleaug:style")
            if tag:
                return tag
        except Exception:
            pass
        return f"key:{name}" if name else f"bytes:{fnv1a64(data)}"


class HttpEmbedProvider:
    """Client for the sidecar contract: POST image bytes -> {"embedding": [...]}.

    Responses are validated against the packaged JSON schema; the advertised
    dimension comes from ``expected_dim`` or the service's /info document.
    """

    def __init__(
        self,
        base_url: str,
        expected_dim: int | None = None,
        client: httpx.Client | None = None,
        max_attempts: int = 3,
        backoff_base: float = 0.25,
        sleep=time.sleep,
    ):
        self.base_url = base_url.rstrip("/")
        self._client = client or httpx.Client(timeout=60.0)
        self._max_attempts = max_attempts
        self._backoff_base = backoff_base
        self._sleep = sleep
        self._schema = load_schema("embed_response")
        if expected_dim is None:
            info = self.info()
            expected_dim = int(info["d"])
        self.dim = expected_dim

    def info(self) -> dict:
        resp = request_with_retry(
            self._client,
            "GET",
            f"{self.base_url}/info",
            max_attempts=self._max_attempts,
            backoff_base=self._backoff_base,
            sleep=self._sleep,
        )
        doc = resp.json()
        jsonschema.validate(doc, load_schema("info_response"))
        return doc

    def embed(self, data: bytes, name: str | None = None) -> np.ndarray:
        resp = request_with_retry(
            self._client,
            "POST",
            f"{self.base_url}/embed",
            content=data,
            headers={"Content-Type": "application/octet-stream"},
            max_attempts=self._max_attempts,
            backoff_base=self._backoff_base,
            sleep=self._sleep,
        )
        doc = resp.json()
        try:
            jsonschema.validate(doc, self._schema)
        except jsonschema.ValidationError as exc:
            raise BackendError(f"embed response violates schema: {exc.message}") from exc
        return np.asarray(doc["embedding"], dtype=np.float32)


class FixtureEmbedProvider:
    """Serve embeddings from a pre-built EMBV1 file, keyed by image id."""

    def __init__(self, path: str | Path):
        matrix = load_embeddings(path)
        self.dim = matrix.d
        self._by_id = {row.id: matrix.data[i] for i, row in enumerate(matrix.rows)}

    def embed(self, data: bytes, name: str | None = None) -> np.ndarray:
        if name not in self._by_id:
            raise DataError(f"fixture has no embedding for id {name!r}")
        return self._by_id[name]


def load_schema(name: str) -> dict:
    text = resources.files("styleaug").joinpath(f"schema/{name}.schema.json").read_text("utf-8")
    return json.loads(text)


# --------------------------------------------------------------------------
# embedding runs and persistence
# --------------------------------------------------------------------------


@dataclass
class EmbeddingCache:
    """Content-hash keyed cache of raw provider vectors."""

    entries: dict[str, np.ndarray] = field(default_factory=dict)
    hits: int = 0
    misses: int = 0


def embed_images(
    provider: EmbedProvider,
    paths: list[str | Path],
    *,
    ids: list[str] | None = None,
    labels: list[str] | None = None,
    origin: str = "real",
    normalize: bool = True,
    cache: EmbeddingCache | None = None,
    max_in_flight: int = 1,
) -> EmbeddingMatrix:
    """Embed files in input order, one row per image.

    Rows are L2-normalized by default.  Vectors are cached by content hash,
    so re-embedding identical bytes never re-hits the provider.  With
    ``max_in_flight`` > 1, distinct contents are embedded concurrently; row
    order still matches the input order exactly.
    """
    if ids is not None and len(ids) != len(paths):
        raise DataError("ids must match paths 1:1")
    if labels is not None and len(labels) != len(paths):
        raise DataError("labels must match paths 1:1")
    if cache is None:
        cache = EmbeddingCache()

    blobs: list[tuple[str, bytes, str]] = []  # (content key, bytes, row id)
    rows: list[RowMeta] = []
    for i, p in enumerate(paths):
        p = Path(p)
        try:
            data = p.read_bytes()
        except OSError as exc:
            raise DataError(f"cannot read image {p}: {exc}") from exc
        rid = ids[i] if ids else str(p)
        blobs.append((hashlib.sha256(data).hexdigest(), data, rid))
        rows.append(RowMeta(id=rid, label=labels[i] if labels else "", origin=origin))

    def _embed_one(key: str, data: bytes, rid: str) -> np.ndarray:
        vec = np.asarray(provider.embed(data, name=rid), dtype=np.float32).reshape(-1)
        if vec.shape[0] != provider.dim:
            raise DataError(
                f"provider returned dimension {vec.shape[0]}, configured {provider.dim}"
            )
        return vec

    pending: dict[str, tuple[bytes, str]] = {}
    for key, data, rid in blobs:
        if key in cache.entries:
            cache.hits += 1
        elif key not in pending:
            pending[key] = (data, rid)
            cache.misses += 1
        else:
            cache.hits += 1

    items = sorted(pending.items())
    if max_in_flight > 1 and len(items) > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=max_in_flight) as pool:
            results = pool.map(lambda kv: _embed_one(kv[0], *kv[1]), items)
            for (key, _), vec in zip(items, results):
                cache.entries[key] = vec
    else:
        for key, (data, rid) in items:
            cache.entries[key] = _embed_one(key, data, rid)

    data_arr = (
        np.stack([cache.entries[key] for key, _, _ in blobs]).astype(np.float32)
        if blobs
        else np.zeros((0, provider.dim), dtype=np.float32)
    )
    if normalize:
        data_arr = l2_normalize(data_arr)
    return EmbeddingMatrix(data=data_arr, rows=rows, normalized=normalize)


def persist_embeddings(matrix: EmbeddingMatrix, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = MAGIC + _HEADER.pack(matrix.n, matrix.d, 1 if matrix.normalized else 0)
    payload += matrix.data.astype("<f4").tobytes(order="C")
    path.write_bytes(payload)
    manifest = {
        "rows": [{"id": r.id, "label": r.label, "origin": r.origin} for r in matrix.rows]
    }
    Path(str(path) + ".manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n"
    )


def load_embeddings(path: str | Path) -> EmbeddingMatrix:
    path = Path(path)
    blob = path.read_bytes()
    if len(blob) < len(MAGIC):
        raise DataError(f"truncated file: {len(blob)} bytes, need {len(MAGIC)} at offset 0")
    if blob[: len(MAGIC)] != MAGIC:
        raise DataError(f"bad magic at offset 0: {blob[:len(MAGIC)]!r}")
    header_end = len(MAGIC) + _HEADER.size
    if len(blob) < header_end:
        raise DataError(f"truncated header at offset {len(blob)}")
    n, d, norm_flag = _HEADER.unpack(blob[len(MAGIC) : header_end])
    expected = header_end + 4 * n * d
    if len(blob) != expected:
        raise DataError(
            f"truncated data at offset {len(blob)}: expected {expected} bytes for {n}x{d}"
        )
    data = np.frombuffer(blob, dtype="<f4", offset=header_end).reshape(n, d).copy()

    manifest_path = Path(str(path) + ".manifest.json")
    if not manifest_path.exists():
        raise DataError(f"missing manifest sidecar {manifest_path}")
    doc = json.loads(manifest_path.read_text("utf-8"))
    rows = [RowMeta(**r) for r in doc["rows"]]
    return EmbeddingMatrix(data=data, rows=rows, normalized=bool(norm_flag))
