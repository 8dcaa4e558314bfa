"""Experiment configuration: JSON file validated against the published schema
before any work starts.

``${NAME}`` placeholders inside backend string fields are interpolated from
the environment; that mechanism exists for secrets (API keys), never for
paths or parameters.
"""

from __future__ import annotations

import json
import os
import re
from dataclasses import dataclass, field
from pathlib import Path

import jsonschema

from .dataset import DEFAULT_EXCLUDE
from .embeddings import load_schema
from .errors import ConfigError
from .prompts import LlmConfig
from .probe import TrainConfig
from .synthesis import GenConfig

_ENV_RE = re.compile(r"\$\{([A-Z0-9_]+)\}")


@dataclass
class MetricsConfig:
    diversity: bool = True
    cmmd: bool = True
    word_frequencies: bool = True
    mmd_sigma: float = 10.0
    mmd_scale: float = 1000.0
    group_size: int = 32


@dataclass
class BackendsConfig:
    llm: LlmConfig | None = None
    t2i_endpoint: str | None = None
    embed_endpoint: str | None = None
    embed_dim: int = 512
    embed_normalize: bool = True
    mock_sigma: float = 0.05
    preprocess_cmd: str | None = None


@dataclass
class ExperimentConfig:
    dataset_root: str
    output_dir: str
    strategy: str
    n_shots: list[int]
    seeds: list[int]
    mask_ratio: float = 0.5
    exclude_styles: tuple[str, ...] = DEFAULT_EXCLUDE
    mock: bool = False
    filter_rejected: bool = False
    gen: GenConfig = field(default_factory=GenConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    backends: BackendsConfig = field(default_factory=BackendsConfig)
    metrics: MetricsConfig = field(default_factory=MetricsConfig)

    def echo(self) -> dict:
        """Config snapshot embedded in reports (secrets stripped)."""
        return {
            "dataset_root": self.dataset_root,
            "strategy": self.strategy,
            "n_shots": self.n_shots,
            "seeds": self.seeds,
            "mask_ratio": self.mask_ratio,
            "exclude_styles": list(self.exclude_styles),
            "mock": self.mock,
            "filter_rejected": self.filter_rejected,
            "gen": vars(self.gen),
            "train": {**vars(self.train), "betas": list(self.train.betas)},
        }


def _interpolate_env(value: str) -> str:
    def sub(match: re.Match) -> str:
        name = match.group(1)
        if name not in os.environ:
            raise ConfigError(f"environment variable {name} is referenced but not set")
        return os.environ[name]

    return _ENV_RE.sub(sub, value)


def validate_config_dict(doc: dict) -> None:
    try:
        jsonschema.validate(doc, load_schema("experiment"))
    except jsonschema.ValidationError as exc:
        path = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"config invalid at {path}: {exc.message}") from exc


def config_from_dict(doc: dict) -> ExperimentConfig:
    validate_config_dict(doc)

    gen = GenConfig(**doc.get("gen", {}))
    train_doc = dict(doc.get("train", {}))
    if "betas" in train_doc:
        train_doc["betas"] = tuple(train_doc["betas"])
    train = TrainConfig(**train_doc)

    backends_doc = doc.get("backends", {})
    llm = None
    if "llm" in backends_doc:
        llm_doc = {
            k: (_interpolate_env(v) if isinstance(v, str) else v)
            for k, v in backends_doc["llm"].items()
        }
        llm_doc.setdefault("endpoint", "")
        llm = LlmConfig(**llm_doc)
    embed_doc = backends_doc.get("embed", {})
    backends = BackendsConfig(
        llm=llm,
        t2i_endpoint=backends_doc.get("t2i", {}).get("endpoint"),
        embed_endpoint=embed_doc.get("endpoint"),
        embed_dim=embed_doc.get("dim", 512),
        embed_normalize=embed_doc.get("normalize", True),
        mock_sigma=embed_doc.get("mock_sigma", 0.05),
        preprocess_cmd=backends_doc.get("preprocess_cmd"),
    )

    return ExperimentConfig(
        dataset_root=doc["dataset_root"],
        output_dir=doc["output_dir"],
        strategy=doc["strategy"],
        n_shots=list(doc["n_shots"]),
        seeds=list(doc["seeds"]),
        mask_ratio=doc.get("mask_ratio", 0.5),
        exclude_styles=tuple(doc.get("exclude_styles", DEFAULT_EXCLUDE)),
        mock=doc.get("mock", False),
        filter_rejected=doc.get("filter_rejected", False),
        gen=gen,
        train=train,
        backends=backends,
        metrics=MetricsConfig(**doc.get("metrics", {})),
    )


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        doc = json.loads(path.read_text("utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    return config_from_dict(doc)
