import json

from helpers import write_config

from styleaug.cli import main


def make_cfg_file(tmp_path, dataset, **overrides):
    return write_config(
        tmp_path / "cfg.json",
        dataset_root=str(dataset),
        output_dir=str(tmp_path / "out"),
        **overrides,
    )


def test_run_subcommand_exit_zero(tmp_path, fixture_dataset, capsys):
    cfg = make_cfg_file(tmp_path, fixture_dataset)
    assert main(["run", "--config", str(cfg)]) == 0
    out = capsys.readouterr().out
    assert "mlp-n1-s0: ok" in out
    assert (tmp_path / "out" / "report.json").exists()


def test_missing_config_is_exit_2(tmp_path, capsys):
    assert main(["run", "--config", str(tmp_path / "nope.json")]) == 2
    assert "config error" in capsys.readouterr().err


def test_schema_violation_is_exit_2_before_execution(tmp_path, capsys):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"output_dir": "x", "strategy": "mlp"}))
    assert main(["run", "--config", str(path)]) == 2
    assert not (tmp_path / "x").exists()


def test_data_error_is_exit_4(tmp_path, capsys):
    cfg = make_cfg_file(tmp_path, tmp_path / "missing-dataset")
    assert main(["index", "--config", str(cfg)]) == 4
    assert "data error" in capsys.readouterr().err


def test_stagewise_invocation(tmp_path, fixture_dataset, capsys):
    cfg = make_cfg_file(tmp_path, fixture_dataset)
    for stage in ("index", "sample", "caption", "mask", "complete", "generate",
                  "embed", "train", "evaluate", "report"):
        assert main([stage, "--config", str(cfg)]) == 0, stage
    out = tmp_path / "out"
    assert (out / "dataset.index.json").exists()
    assert (out / "mlp-n1-s0" / "metrics.json").exists()
    assert (out / "report.csv").exists()


def test_strategy_and_out_overrides(tmp_path, fixture_dataset):
    cfg = make_cfg_file(tmp_path, fixture_dataset)
    assert main([
        "run", "--config", str(cfg), "--strategy", "class", "--out", str(tmp_path / "alt"),
    ]) == 0
    assert (tmp_path / "alt" / "class-n1-s0" / "manifest.jsonl").exists()


def test_mask_ratio_override_changes_masks(tmp_path, fixture_dataset):
    cfg = make_cfg_file(tmp_path, fixture_dataset)
    assert main(["mask", "--config", str(cfg), "--mask-ratio", "1.0"]) == 0
    rows = [
        json.loads(line)
        for line in (tmp_path / "out" / "mlp-n1-s0" / "masked.jsonl").read_text().splitlines()
    ]
    assert all(row["ratio"] == 1.0 for row in rows)


def test_resume_flag_requires_existing_dir(tmp_path, fixture_dataset, capsys):
    cfg = make_cfg_file(tmp_path, fixture_dataset)
    assert main(["run", "--config", str(cfg), "--resume", "x"]) == 4
    assert main(["run", "--config", str(cfg)]) == 0
    assert main(["run", "--config", str(cfg), "--resume", "x"]) == 0


def test_failed_cells_propagate_exit_code(tmp_path, fixture_dataset):
    # n_shot=4 needs 8 pool images per style; the fixture has 6
    cfg = make_cfg_file(tmp_path, fixture_dataset, n_shots=[4])
    assert main(["run", "--config", str(cfg)]) == 4
    report = json.loads((tmp_path / "out" / "report.json").read_text())
    assert report["cells"]["mlp-n4-s0"]["status"] == "failed"
