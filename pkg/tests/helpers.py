"""Shared fixtures and independent oracle implementations.

The oracles here deliberately re-derive behavior from first principles
(reference PRNG constants, brute-force loops, hand recursions) instead of
calling the library code they check.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from styleaug.embeddings import EmbeddingMatrix, RowMeta, l2_normalize
from styleaug.synthesis import GenConfig, MockT2IBackend

# --------------------------------------------------------------------------
# reference PRNG (independent re-implementation from the published constants)
# --------------------------------------------------------------------------


def ref_splitmix64_stream(seed: int):
    """Generator of SplitMix64 outputs, written separately from styleaug.rng."""
    state = seed % (1 << 64)
    while True:
        state = (state + 0x9E3779B97F4A7C15) % (1 << 64)
        z = state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) % (1 << 64)
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) % (1 << 64)
        yield z ^ (z >> 31)


def ref_fnv1a64(text: str) -> int:
    h = 0xCBF29CE484222325
    for byte in text.encode("utf-8"):
        h = ((h ^ byte) * 0x100000001B3) % (1 << 64)
    return h


class RefRng:
    """Bounded draws + Fisher-Yates on top of the reference stream."""

    def __init__(self, seed: int):
        self._stream = ref_splitmix64_stream(seed)

    def below(self, n: int) -> int:
        limit = (1 << 64) - ((1 << 64) % n)
        while True:
            r = next(self._stream)
            if r < limit:
                return r % n

    def shuffle(self, items: list) -> list:
        for i in range(len(items) - 1, 0, -1):
            j = self.below(i + 1)
            items[i], items[j] = items[j], items[i]
        return items


# --------------------------------------------------------------------------
# brute-force SSIM oracle
# --------------------------------------------------------------------------


def brute_force_ssim(a: np.ndarray, b: np.ndarray, win: int = 7, k1: float = 0.01,
                     k2: float = 0.03, data_range: float = 1.0) -> float:
    """Direct double loop over every valid window; sample covariance."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    c1 = (k1 * data_range) ** 2
    c2 = (k2 * data_range) ** 2
    h, w = a.shape
    vals = []
    for i in range(h - win + 1):
        for j in range(w - win + 1):
            pa = a[i : i + win, j : j + win].ravel()
            pb = b[i : i + win, j : j + win].ravel()
            mu_a = pa.mean()
            mu_b = pb.mean()
            va = pa.var(ddof=1)
            vb = pb.var(ddof=1)
            cov = ((pa - mu_a) * (pb - mu_b)).sum() / (pa.size - 1)
            vals.append(
                ((2 * mu_a * mu_b + c1) * (2 * cov + c2))
                / ((mu_a**2 + mu_b**2 + c1) * (va + vb + c2))
            )
    return float(np.mean(vals))


# --------------------------------------------------------------------------
# synthetic embedding fixtures (orthogonal class means + Gaussian noise)
# --------------------------------------------------------------------------


def class_names(c: int) -> tuple[str, ...]:
    return tuple(f"c{i:02d}" for i in range(c))


def make_embeddings(
    n_per_class: int,
    sigma: float,
    seed: int,
    d: int = 16,
    n_classes: int = 13,
    origin: str = "real",
) -> EmbeddingMatrix:
    rng = np.random.default_rng(seed)
    rows, vecs = [], []
    for ci, c in enumerate(class_names(n_classes)):
        mu = np.zeros(d)
        mu[ci] = 1.0
        for k in range(n_per_class):
            vecs.append(mu + rng.normal(0.0, sigma, d))
            rows.append(RowMeta(id=f"{c}/{k}", label=c, origin=origin))
    data = l2_normalize(np.asarray(vecs, dtype=np.float32))
    return EmbeddingMatrix(data=data, rows=rows, normalized=True)


# --------------------------------------------------------------------------
# on-disk fixture dataset rendered through the mock T2I backend
# --------------------------------------------------------------------------


def make_fixture_dataset(
    root: str | Path,
    styles: list[str],
    n_train: int = 4,
    n_val: int = 2,
    n_test: int = 6,
    size: int = 24,
) -> Path:
    """Dataset laid out as root/<split>/<style>/img_*.png; every image carries
    a style metadata token so the mock embedder yields separable classes."""
    t2i = MockT2IBackend(seed=99)
    cfg = GenConfig(width=size, height=size)
    root = Path(root)
    for split, count in (("train", n_train), ("val", n_val), ("test", n_test)):
        for style in styles:
            d = root / split / style
            d.mkdir(parents=True, exist_ok=True)
            for i in range(count):
                prompt = f"reference {split} {i} for a {style} style outfit"
                (d / f"img_{i:03d}.png").write_bytes(t2i.generate(prompt, cfg, seed=i))
    return root


def write_config(path: str | Path, **overrides) -> Path:
    doc = {
        "strategy": "mlp",
        "n_shots": [1],
        "seeds": [0],
        "mock": True,
        "gen": {"width": 24, "height": 24, "samples_per_style": 6, "seed": 0},
        "train": {"lr": 0.01, "max_epochs": 60, "seed": 0},
        "backends": {"embed": {"dim": 32, "mock_sigma": 0.05}},
    }
    doc.update(overrides)
    path = Path(path)
    path.write_text(json.dumps(doc, indent=2))
    return path
