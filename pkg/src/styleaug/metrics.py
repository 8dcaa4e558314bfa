"""Evaluation metrics: accuracy, SSIM diversity, embedding-space diversity,
RBF-kernel MMD quality, and completion word frequencies.

Diversity follows an all-pairs protocol: samples are grouped (by reference
image, or into consecutive blocks of 32 for reference-free generation), the
metric is averaged over all m(m-1)/2 unordered pairs inside each group, and
the final score is the unweighted mean over groups.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from ._kernels import ssim_map
from .captions import STOPWORDS
from .errors import DataError
from .prompts import CompletedCaption

# ITU-R BT.601 luma weights, applied before single-channel SSIM
_LUMA = np.array([0.299, 0.587, 0.114])

DEFAULT_MMD_SIGMA = 10.0
DEFAULT_MMD_SCALE = 1000.0


def accuracy(preds: Sequence, truth: Sequence) -> float:
    """Fraction of positions where predictions match the ground truth."""
    preds = list(preds)
    truth = list(truth)
    if len(preds) != len(truth):
        raise DataError(f"length mismatch: {len(preds)} predictions vs {len(truth)} labels")
    if not preds:
        raise DataError("cannot score an empty prediction list")
    return sum(p == t for p, t in zip(preds, truth)) / len(preds)


def to_luma(img: np.ndarray) -> np.ndarray:
    """Channel-average an RGB image with BT.601 weights; pass gray through."""
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim == 3 and arr.shape[2] == 3:
        return arr @ _LUMA
    if arr.ndim == 2:
        return arr
    raise DataError(f"expected HxW or HxWx3 image, got shape {arr.shape}")


def _infer_data_range(img: np.ndarray) -> float:
    if np.issubdtype(np.asarray(img).dtype, np.integer):
        return 255.0
    return 1.0


def ssim(
    a: np.ndarray,
    b: np.ndarray,
    *,
    win_size: int = 7,
    k1: float = 0.01,
    k2: float = 0.03,
    data_range: float | None = None,
) -> float:
    """Mean local SSIM over a uniform win_size x win_size window.

    Images must share dimensions; RGB inputs are converted to luma first.
    ``data_range`` defaults to 255 for integer dtypes and 1.0 for floats.
    """
    if np.asarray(a).shape != np.asarray(b).shape:
        raise DataError(f"image shapes differ: {np.asarray(a).shape} vs {np.asarray(b).shape}")
    if data_range is None:
        data_range = _infer_data_range(a)
    ga = np.ascontiguousarray(to_luma(a))
    gb = np.ascontiguousarray(to_luma(b))
    if min(ga.shape) < win_size:
        raise DataError(f"image {ga.shape} smaller than the {win_size}x{win_size} window")
    c1 = (k1 * data_range) ** 2
    c2 = (k2 * data_range) ** 2
    return float(ssim_map(ga, gb, win_size, c1, c2).mean())


def feature_distance(u: np.ndarray, v: np.ndarray) -> float:
    """Embedding-space dissimilarity: 1 minus cosine similarity."""
    u = np.asarray(u, dtype=np.float64).reshape(-1)
    v = np.asarray(v, dtype=np.float64).reshape(-1)
    if u.shape != v.shape:
        raise DataError(f"vector shapes differ: {u.shape} vs {v.shape}")
    nu = np.linalg.norm(u)
    nv = np.linalg.norm(v)
    if nu == 0 or nv == 0:
        raise DataError("cosine distance undefined for zero vectors")
    return float(1.0 - (u @ v) / (nu * nv))


@dataclass
class DiversityReport:
    metric: str
    groups: list[dict] = field(default_factory=list)
    mean: float = float("nan")
    total_pairs: int = 0
    skipped: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "metric": self.metric,
            "mean": self.mean,
            "total_pairs": self.total_pairs,
            "groups": self.groups,
            "skipped": self.skipped,
        }


def _load_image(item) -> np.ndarray:
    if isinstance(item, (str, Path)):
        from PIL import Image

        with Image.open(item) as img:
            return np.asarray(img.convert("RGB"))
    return np.asarray(item)


def pairwise_diversity(
    groups: Mapping[str, Sequence],
    metric: str = "ssim",
    **metric_kwargs,
) -> DiversityReport:
    """Average a pair metric over all unordered pairs inside each group.

    ``metric`` is "ssim" (items: images or image paths) or
    "feature_distance" (items: embedding vectors).  Groups with fewer than
    two items are skipped with a warning entry.
    """
    if metric == "ssim":
        pair_fn = lambda x, y: ssim(x, y, **metric_kwargs)  # noqa: E731
        prepare = _load_image
    elif metric == "feature_distance":
        pair_fn = feature_distance
        prepare = np.asarray
    else:
        raise DataError(f"unknown diversity metric {metric!r}")

    report = DiversityReport(metric=metric)
    means = []
    for key in sorted(groups):
        items = [prepare(it) for it in groups[key]]
        m = len(items)
        if m < 2:
            report.skipped.append(f"group {key!r} has {m} item(s); need >= 2")
            continue
        total = 0.0
        pairs = 0
        for i in range(m):
            for j in range(i + 1, m):
                total += pair_fn(items[i], items[j])
                pairs += 1
        mean = total / pairs
        means.append(mean)
        report.total_pairs += pairs
        report.groups.append({"group": key, "pairs": pairs, "mean": mean})
    if means:
        report.mean = float(np.mean(means))
    return report


def block_groups(items: Sequence, size: int = 32) -> dict[str, list]:
    """Split a flat sample list into consecutive blocks of ``size``; the
    remainder short of a full block is dropped."""
    n_blocks = len(items) // size
    return {
        f"block-{k:03d}": list(items[k * size : (k + 1) * size]) for k in range(n_blocks)
    }


def group_by_reference(samples: Sequence) -> dict[str, list]:
    """Group synthetic samples by their reference image id."""
    out: dict[str, list] = {}
    for s in samples:
        ref = getattr(s, "reference_id", None) or "no-reference"
        out.setdefault(ref, []).append(s)
    return out


# --------------------------------------------------------------------------
# maximum mean discrepancy
# --------------------------------------------------------------------------


def _as_rows(X) -> np.ndarray:
    data = getattr(X, "data", X)
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim != 2:
        raise DataError(f"expected a 2-D sample matrix, got shape {arr.shape}")
    return arr


def _sq_dists(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    aa = (A * A).sum(axis=1, keepdims=True)
    bb = (B * B).sum(axis=1, keepdims=True)
    d2 = aa + bb.T - 2.0 * (A @ B.T)
    return np.maximum(d2, 0.0)


def mmd_rbf(X, Y, sigma: float = DEFAULT_MMD_SIGMA, scale: float = DEFAULT_MMD_SCALE) -> float:
    """Biased-estimator MMD with a Gaussian kernel exp(-||x-y||^2 / (2 sigma^2)).

    Returns scale * [mean k(X,X) + mean k(Y,Y) - 2 mean k(X,Y)], clamped at
    zero against float rounding (the biased estimator is non-negative).
    """
    A = _as_rows(X)
    B = _as_rows(Y)
    if A.shape[0] == 0 or B.shape[0] == 0:
        raise DataError("MMD requires non-empty sample sets")
    if A.shape[1] != B.shape[1]:
        raise DataError(f"dimension mismatch: {A.shape[1]} vs {B.shape[1]}")
    gamma = 1.0 / (2.0 * sigma * sigma)
    kxx = np.exp(-gamma * _sq_dists(A, A)).mean()
    kyy = np.exp(-gamma * _sq_dists(B, B)).mean()
    kxy = np.exp(-gamma * _sq_dists(A, B)).mean()
    return max(0.0, float(scale * (kxx + kyy - 2.0 * kxy)))


@dataclass
class CmmdReport:
    per_style: dict[str, float]
    mean: float
    sigma: float
    scale: float

    def to_dict(self) -> dict:
        return {
            "per_style": self.per_style,
            "mean": self.mean,
            "sigma": self.sigma,
            "scale": self.scale,
        }


def cmmd_report(
    syn_by_style: Mapping[str, np.ndarray],
    real_by_style: Mapping[str, np.ndarray],
    sigma: float = DEFAULT_MMD_SIGMA,
    scale: float = DEFAULT_MMD_SCALE,
) -> CmmdReport:
    """Per-style MMD between synthetic and real embeddings, then the
    unweighted mean over styles."""
    styles = sorted(syn_by_style)
    missing = [s for s in styles if s not in real_by_style]
    if missing:
        raise DataError(f"no real embeddings for style(s): {', '.join(missing)}")
    per_style = {
        s: mmd_rbf(syn_by_style[s], real_by_style[s], sigma=sigma, scale=scale) for s in styles
    }
    if not per_style:
        raise DataError("no styles to report")
    return CmmdReport(
        per_style=per_style,
        mean=float(np.mean(list(per_style.values()))),
        sigma=sigma,
        scale=scale,
    )


# --------------------------------------------------------------------------
# completion word frequencies
# --------------------------------------------------------------------------


@dataclass
class FrequencyTable:
    style: str | None
    entries: list[tuple[str, int]]

    def to_dict(self) -> dict:
        return {"style": self.style, "entries": [[w, c] for w, c in self.entries]}

    def write_csv(self, path: str | Path) -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["word", "count"])
            writer.writerows(self.entries)


def word_frequencies(
    completions: Sequence[CompletedCaption | dict],
    style: str | None = None,
    stoplist: frozenset[str] = STOPWORDS,
) -> FrequencyTable:
    """Count the words the LLM filled in (accepted completions only),
    lowercased and stoplist-filtered, sorted by descending count."""
    counts: dict[str, int] = {}
    for cc in completions:
        if isinstance(cc, dict):
            accepted = cc.get("accepted", False)
            spans = cc.get("filled_spans", [])
        else:
            accepted = cc.accepted
            spans = cc.filled_spans
        if not accepted:
            continue
        for _, phrase in spans:
            for word in phrase.lower().split():
                word = word.strip(".,;:!?\"'()")
                if word and word not in stoplist:
                    counts[word] = counts.get(word, 0) + 1
    entries = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    return FrequencyTable(style=style, entries=entries)
