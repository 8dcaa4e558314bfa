"""Text-to-image generation: per-style budgets, provenance, resume-safe store.

Every synthetic sample is persisted as
``<out_dir>/<strategy>/<style>/<sample id>.png`` plus one JSON line in
``<out_dir>/manifest.jsonl`` carrying full provenance (reference id, prompt,
completion record, seeds).  Re-running with the same plan skips samples
already in the manifest, so interrupted runs resume without duplicates.
"""

from __future__ import annotations

import hashlib
import io
import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol

import httpx
from PIL import Image
from PIL.PngImagePlugin import PngInfo

from ._http import request_with_retry
from .captions import LexiconTagger, mask_caption, tag_text
from .dataset import FewShotSplit
from .errors import BackendError, DataError
from .prompts import (
    CompletedCaption,
    InteractionLog,
    LlmBackend,
    _style_in_text,
    fill_masks,
    render_prompt,
)
from .rng import derive_seed, fnv1a64

import numpy as np


@dataclass
class GenConfig:
    steps: int = 4
    width: int = 512
    height: int = 512
    scheduler: str = "EulerAncestralDiscreteScheduler"
    samples_per_style: int = 512
    seed: int = 0


class T2IBackend(Protocol):
    def generate(
        self, prompt: str, cfg: GenConfig, seed: int, style_hint: str | None = None
    ) -> bytes: ...


class MockT2IBackend:
    """Deterministic pixel pattern keyed by (prompt, seed); the style keyword
    parsed from the prompt (or the hint) is embedded as a PNG text chunk so
    the mock embedder can recover it."""

    def __init__(self, seed: int = 0):
        self.seed = seed

    def generate(
        self, prompt: str, cfg: GenConfig, seed: int, style_hint: str | None = None
    ) -> bytes:
        style = _style_in_text(prompt) or style_hint or f"anon-{fnv1a64(prompt) % 997}"
        key = derive_seed(self.seed ^ seed, "t2i", fnv1a64(prompt))
        rng = np.random.Generator(np.random.PCG64(key))
        arr = rng.integers(0, 256, size=(cfg.height, cfg.width, 3), dtype=np.uint8)
        info = PngInfo()
        info.add_text("styleaug:style", style)
        info.add_text("styleaug:prompt_sha256", hashlib.sha256(prompt.encode("utf-8")).hexdigest())
        buf = io.BytesIO()
        Image.fromarray(arr, "RGB").save(buf, format="PNG", pnginfo=info)
        return buf.getvalue()


class HttpT2IBackend:
    """POST {prompt, steps, width, height, scheduler, seed} -> image bytes."""

    def __init__(
        self,
        endpoint: str,
        client: httpx.Client | None = None,
        max_attempts: int = 3,
        backoff_base: float = 0.25,
        sleep=time.sleep,
    ):
        self.endpoint = endpoint
        self._client = client or httpx.Client(timeout=120.0)
        self._max_attempts = max_attempts
        self._backoff_base = backoff_base
        self._sleep = sleep

    def generate(
        self, prompt: str, cfg: GenConfig, seed: int, style_hint: str | None = None
    ) -> bytes:
        body = {
            "prompt": prompt,
            "steps": cfg.steps,
            "width": cfg.width,
            "height": cfg.height,
            "scheduler": cfg.scheduler,
            "seed": seed,
        }
        resp = request_with_retry(
            self._client,
            "POST",
            self.endpoint,
            json=body,
            max_attempts=self._max_attempts,
            backoff_base=self._backoff_base,
            sleep=self._sleep,
        )
        return resp.content


def generate_image(
    backend: T2IBackend,
    prompt: str,
    cfg: GenConfig,
    seed: int,
    out_path: str | Path,
    style_hint: str | None = None,
) -> Path:
    """Render one image, verify its dimensions, and write it atomically."""
    if not prompt or not prompt.strip():
        raise DataError("prompt must be non-empty")
    data = backend.generate(prompt, cfg, seed, style_hint=style_hint)
    with Image.open(io.BytesIO(data)) as img:
        if img.size != (cfg.width, cfg.height):
            raise BackendError(
                f"backend returned {img.size[0]}x{img.size[1]}, expected {cfg.width}x{cfg.height}"
            )
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    tmp = out_path.with_suffix(".tmp")
    tmp.write_bytes(data)
    tmp.replace(out_path)
    return out_path


# --------------------------------------------------------------------------
# sample planning and the augmentation run
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class PlannedSample:
    style: str
    index: int
    sample_id: str
    rel_path: str
    reference_id: str | None
    t2i_seed: int
    mask_seed: int


@dataclass
class SyntheticSample:
    id: str
    path: str
    label: str
    strategy: str
    prompt: str
    reference_id: str | None
    completion: dict | None
    backend_seed: int

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "path": self.path,
            "label": self.label,
            "strategy": self.strategy,
            "prompt": self.prompt,
            "reference_id": self.reference_id,
            "completion": self.completion,
            "backend_seed": self.backend_seed,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "SyntheticSample":
        return cls(**doc)


@dataclass
class SyntheticSet:
    out_dir: Path
    samples: list[SyntheticSample] = field(default_factory=list)

    @property
    def manifest_path(self) -> Path:
        return self.out_dir / "manifest.jsonl"

    def by_style(self) -> dict[str, list[SyntheticSample]]:
        out: dict[str, list[SyntheticSample]] = {}
        for s in self.samples:
            out.setdefault(s.label, []).append(s)
        return out

    def image_path(self, sample: SyntheticSample) -> Path:
        return self.out_dir / sample.path

    @classmethod
    def load(cls, out_dir: str | Path) -> "SyntheticSet":
        out_dir = Path(out_dir)
        samples = []
        manifest = out_dir / "manifest.jsonl"
        if manifest.exists():
            for line in manifest.read_text("utf-8").splitlines():
                if line.strip():
                    samples.append(SyntheticSample.from_dict(json.loads(line)))
        return cls(out_dir=out_dir, samples=samples)


def plan_samples(split: FewShotSplit, strategy: str, cfg: GenConfig) -> list[PlannedSample]:
    """Deterministic generation plan: per style exactly ``samples_per_style``
    samples, references cycling round-robin over the style's train records,
    sequential text-to-image seeds from ``cfg.seed``, and a derived mask seed
    per sample."""
    plan: list[PlannedSample] = []
    for style in split.styles():
        refs = [r.id for r in split.train_by_style(style)]
        for idx in range(cfg.samples_per_style):
            ref = refs[idx % len(refs)] if (refs and strategy != "class") else None
            sample_id = f"{style}-{idx:05d}"
            plan.append(
                PlannedSample(
                    style=style,
                    index=idx,
                    sample_id=sample_id,
                    rel_path=f"{strategy}/{style}/{sample_id}.png",
                    reference_id=ref,
                    t2i_seed=cfg.seed + idx,
                    mask_seed=derive_seed(cfg.seed, "mask", style, idx),
                )
            )
    return plan


def build_prompts(
    plan: list[PlannedSample],
    strategy: str,
    captions: dict[str, str] | None = None,
    mask_ratio: float = 0.5,
    llm: LlmBackend | None = None,
    tagger: LexiconTagger | None = None,
    log: InteractionLog | None = None,
    max_in_flight: int = 4,
) -> list[tuple[PlannedSample, str, CompletedCaption | None]]:
    """Resolve the generation prompt for every planned sample.

    class: the class-name template.  caption: the reference caption verbatim.
    mlp: a fresh masked caption per sample, completed via the LLM backend.
    """
    if strategy == "class":
        return [(p, render_prompt("class", class_name=p.style), None) for p in plan]
    if captions is None:
        raise DataError(f"{strategy} strategy requires reference captions")
    for p in plan:
        if p.reference_id not in captions:
            raise DataError(f"no caption stored for reference {p.reference_id}")
    if strategy == "caption":
        return [
            (p, render_prompt("caption", caption=captions[p.reference_id]), None) for p in plan
        ]
    if strategy != "mlp":
        raise DataError(f"unknown strategy {strategy!r}")
    if llm is None:
        raise DataError("mlp strategy requires an LLM backend")

    masked = [
        mask_caption(tag_text(captions[p.reference_id], tagger), mask_ratio, p.mask_seed)
        for p in plan
    ]

    def _fill(mc):
        return fill_masks(llm, mc, log=log)

    if max_in_flight > 1:
        with ThreadPoolExecutor(max_workers=max_in_flight) as pool:
            completions = list(pool.map(_fill, masked))
    else:
        completions = [_fill(mc) for mc in masked]

    out = []
    for p, cc in zip(plan, completions):
        out.append((p, render_prompt("mlp", caption=cc.completed_text), cc))
    return out


def generate_samples(
    prompts: list[tuple[PlannedSample, str, CompletedCaption | None]],
    strategy: str,
    cfg: GenConfig,
    backend: T2IBackend,
    out_dir: str | Path,
    max_in_flight: int = 4,
) -> SyntheticSet:
    """Render all planned samples, writing images and manifest in plan order.

    Samples already present in the manifest are skipped, never duplicated;
    the manifest is append-only and written by a single writer so a replayed
    run produces byte-identical output.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    existing = SyntheticSet.load(out_dir)
    done = {s.id for s in existing.samples}

    pending = [(p, prompt, cc) for p, prompt, cc in prompts if p.sample_id not in done]

    def _render(item):
        p, prompt, _ = item
        return generate_image(
            backend, prompt, cfg, p.t2i_seed, out_dir / p.rel_path, style_hint=p.style
        )

    results = existing.samples[:]
    manifest = out_dir / "manifest.jsonl"
    with ThreadPoolExecutor(max_workers=max(1, max_in_flight)) as pool:
        futures = [pool.submit(_render, item) for item in pending]
        with manifest.open("a", encoding="utf-8") as fh:
            for (p, prompt, cc), fut in zip(pending, futures):
                fut.result()
                if isinstance(cc, CompletedCaption):
                    cc = cc.to_dict()
                sample = SyntheticSample(
                    id=p.sample_id,
                    path=p.rel_path,
                    label=p.style,
                    strategy=strategy,
                    prompt=prompt,
                    reference_id=p.reference_id,
                    completion=cc,
                    backend_seed=p.t2i_seed,
                )
                fh.write(json.dumps(sample.to_dict(), sort_keys=True) + "\n")
                results.append(sample)
    return SyntheticSet(out_dir=out_dir, samples=results)


def run_augmentation(
    split: FewShotSplit,
    strategy: str,
    cfg: GenConfig,
    *,
    t2i: T2IBackend,
    out_dir: str | Path,
    captions: dict[str, str] | None = None,
    mask_ratio: float = 0.5,
    llm: LlmBackend | None = None,
    tagger: LexiconTagger | None = None,
    log: InteractionLog | None = None,
    max_in_flight: int = 4,
) -> SyntheticSet:
    """Plan, prompt, and render the full synthetic set for one split."""
    plan = plan_samples(split, strategy, cfg)
    prompts = build_prompts(
        plan,
        strategy,
        captions=captions,
        mask_ratio=mask_ratio,
        llm=llm,
        tagger=tagger,
        log=log,
        max_in_flight=max_in_flight,
    )
    return generate_samples(prompts, strategy, cfg, t2i, out_dir, max_in_flight=max_in_flight)
