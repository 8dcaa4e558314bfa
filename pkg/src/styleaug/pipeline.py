"""Experiment orchestration over documented stage files.

Every stage consumes and produces files under the cell directory
``<output_dir>/<strategy>-n<n_shot>-s<seed>/``, so each CLI subcommand can
re-run independently, and a completed stage is reused rather than recomputed.
All stage outputs are deterministic for mock backends, which makes whole runs
byte-reproducible.
"""

from __future__ import annotations

import csv
import json
import os
import shlex
import subprocess
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .captions import MaskedCaption, mask_caption, tag_text
from .config import ExperimentConfig
from .dataset import DatasetIndex, FewShotSplit, load_dataset, sample_few_shot
from .embeddings import (
    EmbeddingCache,
    EmbeddingMatrix,
    HttpEmbedProvider,
    MockEmbedProvider,
    embed_images,
    load_embeddings,
    persist_embeddings,
)
from .errors import ConfigError, DataError
from .metrics import (
    accuracy,
    block_groups,
    cmmd_report,
    group_by_reference,
    pairwise_diversity,
    word_frequencies,
)
from .probe import ProbeModel, load_probe, predict_labels, save_probe, train_probe
from .prompts import (
    HttpLlmBackend,
    InteractionLog,
    MockLlmBackend,
    caption_image,
    fill_masks,
    render_prompt,
)
from .synthesis import (
    HttpT2IBackend,
    MockT2IBackend,
    PlannedSample,
    SyntheticSet,
    generate_samples,
    plan_samples,
)


@dataclass
class Backends:
    llm: object | None
    t2i: object
    embed: object
    max_in_flight: int = 4


def build_backends(cfg: ExperimentConfig) -> Backends:
    if cfg.mock:
        return Backends(
            llm=MockLlmBackend(seed=0),
            t2i=MockT2IBackend(seed=0),
            embed=MockEmbedProvider(
                dim=cfg.backends.embed_dim, sigma=cfg.backends.mock_sigma, seed=0
            ),
            max_in_flight=cfg.backends.llm.max_in_flight if cfg.backends.llm else 4,
        )
    llm = None
    if cfg.backends.llm and cfg.backends.llm.endpoint:
        llm_cfg = cfg.backends.llm
        if llm_cfg.api_key is None:
            llm_cfg.api_key = os.environ.get("LLM_API_KEY")
        llm = HttpLlmBackend(llm_cfg)
    if not cfg.backends.t2i_endpoint:
        raise ConfigError("no text-to-image endpoint configured; use mock=true for offline runs")
    if not cfg.backends.embed_endpoint:
        raise ConfigError("no embedding endpoint configured; use mock=true for offline runs")
    return Backends(
        llm=llm,
        t2i=HttpT2IBackend(cfg.backends.t2i_endpoint),
        embed=HttpEmbedProvider(
            cfg.backends.embed_endpoint, expected_dim=cfg.backends.embed_dim or None
        ),
        max_in_flight=cfg.backends.llm.max_in_flight if cfg.backends.llm else 4,
    )


def cell_name(strategy: str, n_shot: int, seed: int) -> str:
    return f"{strategy}-n{n_shot}-s{seed}"


def cell_dir(cfg: ExperimentConfig, n_shot: int, seed: int) -> Path:
    return Path(cfg.output_dir) / cell_name(cfg.strategy, n_shot, seed)


def _write_jsonl(path: Path, rows: list[dict]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True) + "\n")


def _read_jsonl(path: Path) -> list[dict]:
    rows = []
    for line in path.read_text("utf-8").splitlines():
        if line.strip():
            rows.append(json.loads(line))
    return rows


def _write_json(path: Path, doc: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


# --------------------------------------------------------------------------
# stages
# --------------------------------------------------------------------------


def stage_index(cfg: ExperimentConfig) -> DatasetIndex:
    index = load_dataset(cfg.dataset_root, exclude=cfg.exclude_styles)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    index.save(out / "dataset.index.json")
    return index


def stage_sample(
    cfg: ExperimentConfig, index: DatasetIndex, n_shot: int, seed: int
) -> FewShotSplit:
    run_dir = cell_dir(cfg, n_shot, seed)
    path = run_dir / "split.json"
    if path.exists():
        return FewShotSplit.load(path)
    split = sample_few_shot(index, n_shot, seed)
    run_dir.mkdir(parents=True, exist_ok=True)
    split.save(path)
    return split


def stage_caption(
    cfg: ExperimentConfig, split: FewShotSplit, backends: Backends, run_dir: Path
) -> dict[str, str]:
    """Caption every train reference once; returns id -> payload."""
    path = run_dir / "captions.jsonl"
    if cfg.strategy == "class":
        return {}
    if path.exists():
        return {row["id"]: row["caption"] for row in _read_jsonl(path)}
    if backends.llm is None:
        raise ConfigError("captioning requires an LLM backend (or mock=true)")
    log = InteractionLog(run_dir / "llm_log.jsonl")
    records = sorted(split.train, key=lambda r: r.id)

    def _one(rec):
        return {"id": rec.id, "caption": caption_image(backends.llm, rec, log=log)}

    if backends.max_in_flight > 1:
        with ThreadPoolExecutor(max_workers=backends.max_in_flight) as pool:
            rows = list(pool.map(_one, records))
    else:
        rows = [_one(r) for r in records]
    _write_jsonl(path, rows)
    return {row["id"]: row["caption"] for row in rows}


def stage_mask(
    cfg: ExperimentConfig,
    split: FewShotSplit,
    captions: dict[str, str],
    run_dir: Path,
) -> list[dict]:
    """Plan all samples and mask a fresh caption per sample (mlp only)."""
    if cfg.strategy != "mlp":
        return []
    path = run_dir / "masked.jsonl"
    if path.exists():
        return _read_jsonl(path)
    plan = plan_samples(split, cfg.strategy, cfg.gen)
    rows = []
    for p in plan:
        caption = captions.get(p.reference_id)
        if caption is None:
            raise DataError(f"no caption stored for reference {p.reference_id}")
        mc = _mask_for_sample(caption, cfg.mask_ratio, p)
        rows.append(
            {
                "sample_id": p.sample_id,
                "style": p.style,
                "index": p.index,
                "reference_id": p.reference_id,
                "caption": caption,
                "ratio": cfg.mask_ratio,
                "mask_seed": p.mask_seed,
                "mask_positions": sorted(mc.mask_positions),
                "masked_text": mc.masked_text,
            }
        )
    _write_jsonl(path, rows)
    return rows


def _mask_for_sample(caption: str, ratio: float, p: PlannedSample) -> MaskedCaption:
    return mask_caption(tag_text(caption), ratio, p.mask_seed)


def _masked_from_row(row: dict) -> MaskedCaption:
    tc = tag_text(row["caption"])
    return MaskedCaption(
        source=tc,
        mask_positions=frozenset(row["mask_positions"]),
        ratio=row["ratio"],
        seed=row["mask_seed"],
    )


def stage_complete(
    cfg: ExperimentConfig, masked_rows: list[dict], backends: Backends, run_dir: Path
) -> dict[str, dict]:
    """Fill every masked caption; returns sample_id -> completion record."""
    if cfg.strategy != "mlp":
        return {}
    path = run_dir / "completions.jsonl"
    existing = {row["sample_id"]: row for row in _read_jsonl(path)} if path.exists() else {}
    pending = [row for row in masked_rows if row["sample_id"] not in existing]
    if pending:
        if backends.llm is None:
            raise ConfigError("mask completion requires an LLM backend (or mock=true)")
        log = InteractionLog(run_dir / "llm_log.jsonl")

        def _one(row):
            cc = fill_masks(backends.llm, _masked_from_row(row), log=log)
            return {"sample_id": row["sample_id"], **cc.to_dict()}

        if backends.max_in_flight > 1:
            with ThreadPoolExecutor(max_workers=backends.max_in_flight) as pool:
                filled = list(pool.map(_one, pending))
        else:
            filled = [_one(row) for row in pending]
        existing.update({row["sample_id"]: row for row in filled})
        ordered = [existing[row["sample_id"]] for row in masked_rows]
        _write_jsonl(path, ordered)
    return existing


def stage_generate(
    cfg: ExperimentConfig,
    split: FewShotSplit,
    captions: dict[str, str],
    completions: dict[str, dict],
    backends: Backends,
    run_dir: Path,
) -> SyntheticSet:
    plan = plan_samples(split, cfg.strategy, cfg.gen)
    prompts = []
    for p in plan:
        if cfg.strategy == "class":
            prompt, completion = render_prompt("class", class_name=p.style), None
        elif cfg.strategy == "caption":
            prompt, completion = render_prompt("caption", caption=captions[p.reference_id]), None
        else:
            row = completions.get(p.sample_id)
            if row is None:
                raise DataError(f"no completion stored for sample {p.sample_id}")
            completion = {k: v for k, v in row.items() if k != "sample_id"}
            text = completion["completed_text"]
            if cfg.filter_rejected and not completion["accepted"]:
                # filtered mode falls back to the unmasked reference caption
                text = captions[p.reference_id]
            prompt = render_prompt("mlp", caption=text)
        prompts.append((p, prompt, completion))
    return generate_samples(
        prompts, cfg.strategy, cfg.gen, backends.t2i, run_dir,
        max_in_flight=backends.max_in_flight,
    )


def _maybe_preprocess(paths: list[str], ids: list[str], cfg: ExperimentConfig, run_dir: Path) -> list[str]:
    cmd = cfg.backends.preprocess_cmd
    if not cmd:
        return paths
    out_dir = run_dir / "preprocessed"
    out_dir.mkdir(parents=True, exist_ok=True)
    processed = []
    for p, rid in zip(paths, ids):
        target = out_dir / (rid.replace("/", "_") + Path(p).suffix)
        if not target.exists():
            argv = [a.format(input=p, output=target) for a in shlex.split(cmd)]
            proc = subprocess.run(argv, capture_output=True, text=True)
            if proc.returncode != 0 or not target.exists():
                raise DataError(f"preprocess command failed for {p}: {proc.stderr.strip()}")
        processed.append(str(target))
    return processed


def stage_embed(
    cfg: ExperimentConfig,
    index: DatasetIndex,
    split: FewShotSplit,
    synset: SyntheticSet,
    backends: Backends,
    run_dir: Path,
) -> dict[str, EmbeddingMatrix]:
    emb_dir = run_dir / "embeddings"
    emb_dir.mkdir(parents=True, exist_ok=True)
    cache = EmbeddingCache()
    normalize = cfg.backends.embed_normalize
    out: dict[str, EmbeddingMatrix] = {}

    test_records = [
        r for style in split.styles() for r in index.split_records("test", style)
    ]
    jobs = {
        "real_train": (split.train, "real", True),
        "real_val": (split.val, "real", True),
        "real_test": (test_records, "real", True),
    }
    for name, (records, origin, preprocess) in jobs.items():
        path = emb_dir / f"{name}.emb"
        if path.exists():
            out[name] = load_embeddings(path)
            continue
        paths = [r.path for r in records]
        ids = [r.id for r in records]
        if preprocess:
            paths = _maybe_preprocess(paths, ids, cfg, run_dir)
        matrix = embed_images(
            backends.embed,
            paths,
            ids=ids,
            labels=[r.label for r in records],
            origin=origin,
            normalize=normalize,
            cache=cache,
            max_in_flight=backends.max_in_flight,
        )
        persist_embeddings(matrix, path)
        out[name] = matrix

    syn_path = emb_dir / "synthetic.emb"
    if syn_path.exists():
        out["synthetic"] = load_embeddings(syn_path)
    else:
        matrix = embed_images(
            backends.embed,
            [synset.image_path(s) for s in synset.samples],
            ids=[s.id for s in synset.samples],
            labels=[s.label for s in synset.samples],
            origin="synthetic",
            normalize=normalize,
            cache=cache,
            max_in_flight=backends.max_in_flight,
        )
        persist_embeddings(matrix, syn_path)
        out["synthetic"] = matrix
    return out


def stage_train(
    cfg: ExperimentConfig, embs: dict[str, EmbeddingMatrix], run_dir: Path
) -> dict[str, ProbeModel]:
    classes = tuple(sorted(set(embs["real_train"].labels())))
    models: dict[str, ProbeModel] = {}
    for name, syn in (("augmented", embs["synthetic"]), ("real_only", None)):
        probe_path = run_dir / f"probe_{name}.bin"
        if probe_path.exists():
            models[name] = load_probe(probe_path)
            continue
        model, history = train_probe(
            embs["real_train"], syn, embs["real_val"], cfg.train, classes=classes
        )
        save_probe(
            model,
            probe_path,
            extra_meta={
                "best_epoch": history.best_epoch,
                "best_val_loss": history.best_val_loss,
                "stopped_early": history.stopped_early,
                "train_config": {**vars(cfg.train), "betas": list(cfg.train.betas)},
            },
        )
        _write_json(run_dir / f"history_{name}.json", history.to_dict())
        models[name] = model
    return models


def stage_evaluate(
    cfg: ExperimentConfig,
    embs: dict[str, EmbeddingMatrix],
    models: dict[str, ProbeModel],
    synset: SyntheticSet,
    completions: dict[str, dict],
    run_dir: Path,
) -> dict:
    path = run_dir / "metrics.json"
    if path.exists():
        return json.loads(path.read_text("utf-8"))

    test = embs["real_test"]
    truth = test.labels()
    doc: dict = {"accuracy": {}}
    for name, model in sorted(models.items()):
        doc["accuracy"][name] = accuracy(predict_labels(model, test), truth)

    if cfg.metrics.diversity and synset.samples:
        groups_img: dict[str, list] = {}
        groups_vec: dict[str, list] = {}
        syn_emb = embs["synthetic"]
        vec_by_id = {r.id: syn_emb.data[i] for i, r in enumerate(syn_emb.rows)}
        for style, samples in sorted(synset.by_style().items()):
            if cfg.strategy == "class":
                blocks = block_groups(samples, size=cfg.metrics.group_size)
            else:
                blocks = group_by_reference(samples)
            for key, items in blocks.items():
                gkey = f"{style}/{key}"
                groups_img[gkey] = [str(synset.image_path(s)) for s in items]
                groups_vec[gkey] = [vec_by_id[s.id] for s in items]
        ssim_rep = pairwise_diversity(groups_img, metric="ssim")
        feat_rep = pairwise_diversity(groups_vec, metric="feature_distance")
        doc["diversity"] = {
            "ssim": ssim_rep.to_dict(),
            "feature_distance": feat_rep.to_dict(),
        }

    if cfg.metrics.cmmd and synset.samples:
        syn_by_style = embs["synthetic"].by_label()
        real_by_style = test.by_label()
        rep = cmmd_report(
            syn_by_style,
            real_by_style,
            sigma=cfg.metrics.mmd_sigma,
            scale=cfg.metrics.mmd_scale,
        )
        doc["cmmd"] = rep.to_dict()

    if cfg.metrics.word_frequencies and cfg.strategy == "mlp" and completions:
        by_style: dict[str, list[dict]] = {}
        for sample in synset.samples:
            row = completions.get(sample.id)
            if row:
                by_style.setdefault(sample.label, []).append(row)
        doc["word_frequencies"] = {}
        for style, rows in sorted(by_style.items()):
            table = word_frequencies(rows, style=style)
            table.write_csv(run_dir / f"word_freq_{style}.csv")
            doc["word_frequencies"][style] = table.to_dict()["entries"]

    _write_json(path, doc)
    _write_metrics_csv(run_dir / "metrics.csv", doc)
    return doc


def _write_metrics_csv(path: Path, doc: dict) -> None:
    """Flat metric,key,value rows mirroring metrics.json."""
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["metric", "key", "value"])
        for method, acc in sorted(doc.get("accuracy", {}).items()):
            writer.writerow(["accuracy", method, f"{acc:.6f}"])
        for name, rep in sorted(doc.get("diversity", {}).items()):
            writer.writerow(["diversity", name, f"{rep['mean']:.6f}"])
        cmmd = doc.get("cmmd")
        if cmmd:
            for style, value in sorted(cmmd["per_style"].items()):
                writer.writerow(["cmmd", style, f"{value:.6f}"])
            writer.writerow(["cmmd", "mean", f"{cmmd['mean']:.6f}"])


def run_cell(cfg: ExperimentConfig, index: DatasetIndex, n_shot: int, seed: int) -> dict:
    backends = build_backends(cfg)
    run_dir = cell_dir(cfg, n_shot, seed)
    run_dir.mkdir(parents=True, exist_ok=True)
    split = stage_sample(cfg, index, n_shot, seed)
    captions = stage_caption(cfg, split, backends, run_dir)
    masked = stage_mask(cfg, split, captions, run_dir)
    completions = stage_complete(cfg, masked, backends, run_dir)
    synset = stage_generate(cfg, split, captions, completions, backends, run_dir)
    embs = stage_embed(cfg, index, split, synset, backends, run_dir)
    models = stage_train(cfg, embs, run_dir)
    return stage_evaluate(cfg, embs, models, synset, completions, run_dir)


def stage_report(cfg: ExperimentConfig, cell_status: dict[str, dict] | None = None) -> dict:
    """Aggregate per-cell metrics files into report.json / report.csv."""
    out = Path(cfg.output_dir)
    cells: dict[str, dict] = {}
    accuracy_table: dict[str, dict] = {}
    for n_shot in cfg.n_shots:
        per_method: dict[str, dict[str, float]] = {}
        for seed in cfg.seeds:
            name = cell_name(cfg.strategy, n_shot, seed)
            eval_path = cell_dir(cfg, n_shot, seed) / "metrics.json"
            if eval_path.exists():
                doc = json.loads(eval_path.read_text("utf-8"))
                cells[name] = {"status": "ok", "eval": doc}
                for method, acc in doc["accuracy"].items():
                    per_method.setdefault(method, {})[str(seed)] = acc
            else:
                status = {"status": "failed"}
                if cell_status and name in cell_status:
                    status.update(cell_status[name])
                cells[name] = status
        accuracy_table[str(n_shot)] = {
            method: {
                "per_seed": seeds,
                "mean": float(np.mean(list(seeds.values()))),
            }
            for method, seeds in sorted(per_method.items())
        }

    report = {
        "config": cfg.echo(),
        "cells": cells,
        "accuracy": accuracy_table,
    }
    _write_json(out / "report.json", report)

    with (out / "report.csv").open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["n_shot", "method", "seed", "accuracy"])
        for n_shot, methods in accuracy_table.items():
            for method, block in methods.items():
                for seed, acc in sorted(block["per_seed"].items(), key=lambda kv: int(kv[0])):
                    writer.writerow([n_shot, method, seed, f"{acc:.6f}"])
                writer.writerow([n_shot, method, "mean", f"{block['mean']:.6f}"])
    return report


def run_experiment(cfg: ExperimentConfig) -> dict:
    """Run every (n_shot, seed) cell, then aggregate; failed cells are
    recorded in the report and do not stop the others."""
    index = stage_index(cfg)
    status: dict[str, dict] = {}
    for n_shot in cfg.n_shots:
        for seed in cfg.seeds:
            name = cell_name(cfg.strategy, n_shot, seed)
            try:
                run_cell(cfg, index, n_shot, seed)
                status[name] = {"status": "ok"}
            except Exception as exc:  # noqa: BLE001 - cell isolation is the contract
                status[name] = {"status": "failed", "error": f"{type(exc).__name__}: {exc}"}
    report = stage_report(cfg, status)
    report["run_status"] = status
    return report
