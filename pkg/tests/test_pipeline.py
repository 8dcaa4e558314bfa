import json
import sys

import pytest
from helpers import make_fixture_dataset, write_config

from styleaug.config import load_config
from styleaug.pipeline import (
    build_backends,
    cell_dir,
    run_cell,
    run_experiment,
    stage_index,
    stage_report,
)


def make_cfg(tmp_path, dataset, **overrides):
    return load_config(
        write_config(
            tmp_path / "cfg.json",
            dataset_root=str(dataset),
            output_dir=str(tmp_path / "out"),
            **overrides,
        )
    )


def test_full_mock_cell_produces_all_artifacts(tmp_path, fixture_dataset):
    cfg = make_cfg(tmp_path, fixture_dataset)
    index = stage_index(cfg)
    doc = run_cell(cfg, index, 1, 0)
    run_dir = cell_dir(cfg, 1, 0)
    for name in (
        "split.json",
        "captions.jsonl",
        "masked.jsonl",
        "completions.jsonl",
        "manifest.jsonl",
        "embeddings/real_train.emb",
        "embeddings/synthetic.emb",
        "probe_augmented.bin",
        "probe_real_only.bin",
        "history_augmented.json",
        "metrics.json",
        "metrics.csv",
        "llm_log.jsonl",
    ):
        assert (run_dir / name).exists(), name
    assert set(doc["accuracy"]) == {"augmented", "real_only"}
    assert "cmmd" in doc and "diversity" in doc and "word_frequencies" in doc
    csv_lines = (run_dir / "metrics.csv").read_text().splitlines()
    assert csv_lines[0] == "metric,key,value"
    assert any(line.startswith("accuracy,augmented,") for line in csv_lines)
    assert any(line.startswith("cmmd,mean,") for line in csv_lines)


def test_synthetic_store_layout(tmp_path, fixture_dataset):
    cfg = make_cfg(tmp_path, fixture_dataset)
    index = stage_index(cfg)
    run_cell(cfg, index, 1, 0)
    run_dir = cell_dir(cfg, 1, 0)
    pngs = sorted(run_dir.glob("mlp/*/*.png"))
    assert len(pngs) == 6 * 3
    assert (run_dir / "mlp" / "fairy" / "fairy-00000.png").exists()


def test_report_aggregates_cells_and_csv(tmp_path, fixture_dataset):
    cfg = make_cfg(tmp_path, fixture_dataset, seeds=[0, 1])
    report = run_experiment(cfg)
    assert all(v["status"] == "ok" for v in report["run_status"].values())
    acc = report["accuracy"]["1"]
    assert set(acc) == {"augmented", "real_only"}
    assert set(acc["augmented"]["per_seed"]) == {"0", "1"}
    csv_text = (tmp_path / "out" / "report.csv").read_text()
    assert csv_text.splitlines()[0] == "n_shot,method,seed,accuracy"
    assert any(line.startswith("1,augmented,mean") for line in csv_text.splitlines())


def test_failed_cell_is_isolated(tmp_path, fixture_dataset):
    # style with too few pool images for n_shot=2 in one cell
    small = make_fixture_dataset(
        tmp_path / "small", ["fairy", "rock"], n_train=2, n_val=1, n_test=3
    )
    cfg = make_cfg(tmp_path, small, n_shots=[1, 2], seeds=[0])
    report = run_experiment(cfg)
    status = report["run_status"]
    assert status["mlp-n1-s0"]["status"] == "ok"
    assert status["mlp-n2-s0"]["status"] == "failed"
    assert "need 4, have 3" in status["mlp-n2-s0"]["error"]
    # the report still carries the healthy cell
    assert (tmp_path / "out" / "report.json").exists()
    assert json.loads((tmp_path / "out" / "report.json").read_text())["cells"]["mlp-n1-s0"][
        "status"
    ] == "ok"


def test_mock_run_is_byte_deterministic(tmp_path, fixture_dataset):
    import shutil

    cfg = make_cfg(tmp_path, fixture_dataset)
    run_experiment(cfg)
    out1 = tmp_path / "first"
    shutil.move(tmp_path / "out", out1)
    run_experiment(make_cfg(tmp_path, fixture_dataset))
    manifest_a = (out1 / "mlp-n1-s0" / "manifest.jsonl").read_bytes()
    manifest_b = (tmp_path / "out" / "mlp-n1-s0" / "manifest.jsonl").read_bytes()
    assert manifest_a == manifest_b
    assert (out1 / "report.json").read_bytes() == (tmp_path / "out" / "report.json").read_bytes()


def test_stage_resume_reuses_outputs(tmp_path, fixture_dataset):
    cfg = make_cfg(tmp_path, fixture_dataset)
    index = stage_index(cfg)
    run_cell(cfg, index, 1, 0)
    manifest = cell_dir(cfg, 1, 0) / "manifest.jsonl"
    before = manifest.read_bytes()
    stamp = manifest.stat().st_mtime_ns
    run_cell(cfg, index, 1, 0)  # second pass: all stages resume
    assert manifest.read_bytes() == before
    assert manifest.stat().st_mtime_ns == stamp


def test_directional_mlp_beats_real_only(tmp_path):
    dataset = make_fixture_dataset(
        tmp_path / "data", ["fairy", "rock", "street", "lolita"], n_train=4, n_val=2, n_test=8
    )
    cfg = make_cfg(
        tmp_path,
        dataset,
        seeds=[0, 1, 2],
        gen={"width": 24, "height": 24, "samples_per_style": 48, "seed": 0},
        train={"lr": 0.01, "max_epochs": 150, "seed": 0},
        backends={"embed": {"dim": 32, "mock_sigma": 0.35}},
        metrics={"diversity": False},
    )
    report = run_experiment(cfg)
    acc = report["accuracy"]["1"]
    assert acc["augmented"]["mean"] >= acc["real_only"]["mean"]


def test_class_strategy_synthetic_is_shot_independent(tmp_path, fixture_dataset):
    cfg = make_cfg(tmp_path, fixture_dataset, strategy="class", n_shots=[1, 2])
    report = run_experiment(cfg)
    assert all(v["status"] == "ok" for v in report["run_status"].values())
    m1 = (cell_dir(cfg, 1, 0) / "manifest.jsonl").read_text().splitlines()
    m2 = (cell_dir(cfg, 2, 0) / "manifest.jsonl").read_text().splitlines()
    # prompts and seeds do not depend on the references, so the synthetic
    # sets (and hence CMMD) are identical across shot counts
    assert m1 == m2
    e1 = json.loads((cell_dir(cfg, 1, 0) / "metrics.json").read_text())["cmmd"]
    e2 = json.loads((cell_dir(cfg, 2, 0) / "metrics.json").read_text())["cmmd"]
    assert e1 == e2


def test_caption_strategy_runs(tmp_path, fixture_dataset):
    cfg = make_cfg(tmp_path, fixture_dataset, strategy="caption")
    index = stage_index(cfg)
    doc = run_cell(cfg, index, 1, 0)
    assert "word_frequencies" not in doc  # mlp-only report
    run_dir = cell_dir(cfg, 1, 0)
    assert not (run_dir / "masked.jsonl").exists()
    rows = [json.loads(l) for l in (run_dir / "manifest.jsonl").read_text().splitlines()]
    assert all(r["completion"] is None for r in rows)
    assert all(r["reference_id"] for r in rows)


def test_preprocess_hook_applies_command(tmp_path, fixture_dataset):
    copy_cmd = f"{sys.executable} -c \"import shutil,sys; shutil.copy(sys.argv[1], sys.argv[2])\" {{input}} {{output}}"
    cfg = make_cfg(
        tmp_path,
        fixture_dataset,
        backends={"embed": {"dim": 32, "mock_sigma": 0.05}, "preprocess_cmd": copy_cmd},
    )
    index = stage_index(cfg)
    run_cell(cfg, index, 1, 0)
    processed = list((cell_dir(cfg, 1, 0) / "preprocessed").glob("*.png"))
    assert processed  # real images went through the hook before embedding


def test_build_backends_requires_endpoints_without_mock(tmp_path, fixture_dataset):
    from styleaug.errors import ConfigError

    cfg = make_cfg(tmp_path, fixture_dataset)
    cfg.mock = False
    with pytest.raises(ConfigError, match="endpoint"):
        build_backends(cfg)


def test_report_standalone_marks_missing_cells(tmp_path, fixture_dataset):
    cfg = make_cfg(tmp_path, fixture_dataset, seeds=[0, 5])
    index = stage_index(cfg)
    run_cell(cfg, index, 1, 0)  # only one of the two cells
    report = stage_report(cfg)
    assert report["cells"]["mlp-n1-s0"]["status"] == "ok"
    assert report["cells"]["mlp-n1-s5"]["status"] == "failed"
