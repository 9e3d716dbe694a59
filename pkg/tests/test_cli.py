"""CLI harness: config parsing, subcommands, reproducibility, lineage checks."""

import json
from pathlib import Path

import numpy as np
import pytest
import yaml

import flipdiff as fd
from flipdiff.cli import main
from _stats import assert_uniform_chi2


def write_config(path, **overrides):
    base = {
        "d": 4,
        "lam": 1.0,
        "t_f": 3.0,
        "seed": 11,
        "out_dir": str(Path(path).parent / "run"),
        "dataset": {"kind": "sawtooth"},
        "model": {"blocks": 1, "width": 24, "time_embed_dim": 12},
        "training": {"steps": 60, "batch_size": 32, "lr": 2e-3},
        "schedule": {"kind": "cosine", "steps": 20},
        "n_samples": 4000,
    }
    base.update(overrides)
    Path(path).write_text(yaml.safe_dump(base))
    return base


# --- config machinery -----------------------------------------------------

def test_config_roundtrip_identity(tmp_path):
    cfg_path = tmp_path / "run.yaml"
    write_config(cfg_path)
    config = fd.load_config(cfg_path)
    again = fd.config_from_dict(config.to_dict())
    assert config == again
    assert config.config_hash() == again.config_hash()
    saved = tmp_path / "echo.yaml"
    fd.save_config(config, saved)
    assert fd.load_config(saved) == config


def test_config_unknown_keys_rejected(tmp_path):
    cfg_path = tmp_path / "bad.yaml"
    write_config(cfg_path, typo_field=1)
    with pytest.raises(fd.ConfigError, match="typo_field"):
        fd.load_config(cfg_path)
    cfg_path2 = tmp_path / "bad2.yaml"
    write_config(cfg_path2, schedule={"kind": "cosine", "stepz": 5})
    with pytest.raises(fd.ConfigError, match="stepz"):
        fd.load_config(cfg_path2)


def test_config_zero_loss_weights_rejected_before_compute(tmp_path):
    cfg_path = tmp_path / "zero.yaml"
    write_config(cfg_path, loss={"w1": 0.0, "w2": 0.0, "w3": 0.0})
    with pytest.raises(fd.ConfigError):
        fd.load_config(cfg_path)


def test_config_loss_preset(tmp_path):
    cfg_path = tmp_path / "preset.yaml"
    write_config(cfg_path, loss={"preset": "l2+ce", "w_scaled": True})
    config = fd.load_config(cfg_path)
    assert config.loss == fd.LossSpec(0.5, 0.0, 0.5, w_scaled=True)


def test_config_d_consistency(tmp_path):
    cfg_path = tmp_path / "mismatch.yaml"
    write_config(cfg_path, model={"d": 7, "blocks": 1, "width": 16, "time_embed_dim": 8})
    with pytest.raises(fd.ConfigError):
        fd.load_config(cfg_path)


def test_substreams_are_deterministic_and_distinct():
    a = fd.substream(5, "train").random(4)
    b = fd.substream(5, "train").random(4)
    c = fd.substream(5, "sample").random(4)
    assert (a == b).all()
    assert not np.allclose(a, c)


# --- subcommands ------------------------------------------------------------

def test_gen_data_sawtooth_and_rerun_identical(tmp_path):
    cfg_path = tmp_path / "run.yaml"
    write_config(cfg_path, d=16, model={"blocks": 1, "width": 16, "time_embed_dim": 8})
    out = tmp_path / "data"
    assert main(["gen-data", "--config", str(cfg_path), "--out", str(out)]) == 0
    payload = json.loads((out / "dataset.json").read_text())
    assert payload["kind"] == "product" and len(payload["probs"]) == 16
    assert min(payload["probs"]) == pytest.approx(0.05)
    assert max(payload["probs"]) == pytest.approx(0.95)
    first = (out / "dataset.json").read_bytes()
    assert main(["gen-data", "--config", str(cfg_path), "--out", str(out)]) == 0
    assert (out / "dataset.json").read_bytes() == first


def test_gen_data_empirical_mode_and_training_from_file(tmp_path):
    cfg_path = tmp_path / "run.yaml"
    write_config(cfg_path, dataset={"kind": "empirical-file", "n_train": 500,
                                    "path": str(tmp_path / "data" / "train.txt")},
                 training={"steps": 8, "batch_size": 16, "lr": 1e-3})
    out = tmp_path / "data"
    assert main(["gen-data", "--config", str(cfg_path), "--out", str(out)]) == 0
    samples = fd.read_samples(tmp_path / "data" / "train.txt")
    assert samples.n == 500 and samples.d == 4
    assert main(["train", "--config", str(cfg_path), "--out", str(out)]) == 0
    _, _, meta = fd.load_checkpoint(out / "checkpoint.bin")
    assert meta.steps == 8


def test_gen_data_table_normalization_warning(tmp_path, capsys):
    table_path = tmp_path / "table.json"
    table_path.write_text(json.dumps({"mass": [1.0, 1.0, 1.0, 3.0]}))
    cfg_path = tmp_path / "run.yaml"
    write_config(cfg_path, d=2, dataset={"kind": "table-file", "path": str(table_path)},
                 model={"blocks": 1, "width": 16, "time_embed_dim": 8})
    out = tmp_path / "data"
    assert main(["gen-data", "--config", str(cfg_path), "--out", str(out)]) == 0
    assert "normalizing" in capsys.readouterr().err
    payload = json.loads((out / "dataset.json").read_text())
    assert sum(payload["mass"]) == pytest.approx(1.0)
    assert payload["mass"][3] == pytest.approx(0.5)


def test_train_sample_eval_pipeline(tmp_path):
    cfg_path = tmp_path / "run.yaml"
    write_config(cfg_path)
    out = tmp_path / "run"
    assert main(["gen-data", "--config", str(cfg_path)]) == 0
    assert main(["train", "--config", str(cfg_path)]) == 0
    log_lines = (out / "training_log.csv").read_text().strip().splitlines()
    assert log_lines[0].startswith("step,loss_total")
    assert len(log_lines) == 61
    params, model_cfg, meta = fd.load_checkpoint(out / "checkpoint.bin")
    assert meta.steps == 60 and model_cfg.d == 4

    assert main(["sample", "--config", str(cfg_path), "--sampler", "discrete",
                 "--steps", "25", "-n", "800"]) == 0
    dump = fd.read_samples(out / "samples.txt")
    assert dump.n == 800 and dump.d == 4
    sidecar = json.loads((out / "samples.json").read_text())
    assert sidecar["sampler"] == "discrete" and sidecar["schedule"]["steps"] == 25

    assert main(["eval", "--config", str(cfg_path),
                 "--samples", str(out / "samples.txt"),
                 "--dataset", str(out / "dataset.json")]) == 0
    metrics = json.loads((out / "metrics.json").read_text())
    assert "swd" in metrics and "swd_self_distance_floor" in metrics
    assert "kl_samples_vs_reference" in metrics
    assert (out / "metrics.csv").exists()


def test_train_rerun_is_byte_identical(tmp_path):
    cfg_path = tmp_path / "run.yaml"
    write_config(cfg_path, training={"steps": 30, "batch_size": 16, "lr": 1e-3})
    out_a, out_b = tmp_path / "a", tmp_path / "b"
    for out in (out_a, out_b):
        assert main(["train", "--config", str(cfg_path), "--out", str(out)]) == 0
    assert (out_a / "checkpoint.bin").read_bytes() == (out_b / "checkpoint.bin").read_bytes()
    assert (out_a / "training_log.csv").read_bytes() == (out_b / "training_log.csv").read_bytes()


def test_train_resume_continues_numbering(tmp_path):
    cfg_path = tmp_path / "run.yaml"
    write_config(cfg_path)
    out = tmp_path / "run"
    assert main(["train", "--config", str(cfg_path)]) == 0
    assert main(["train", "--config", str(cfg_path), "--resume",
                 str(out / "checkpoint.bin")]) == 0
    rows = (out / "training_log.csv").read_text().strip().splitlines()[1:]
    assert rows[0].split(",")[0] == "60"
    _, _, meta = fd.load_checkpoint(out / "checkpoint.bin")
    assert meta.steps == 120


def test_sample_exact_oracle_uniform_dump(tmp_path):
    table_path = tmp_path / "table.json"
    table_path.write_text(json.dumps({"mass": [0.25, 0.25, 0.25, 0.25]}))
    cfg_path = tmp_path / "run.yaml"
    write_config(cfg_path, d=2, dataset={"kind": "table-file", "path": str(table_path)},
                 model={"blocks": 1, "width": 16, "time_embed_dim": 8},
                 n_samples=20000)
    out = tmp_path / "run"
    assert main(["sample", "--config", str(cfg_path), "--exact-oracle"]) == 0
    dump = fd.read_samples(out / "samples.txt")
    assert_uniform_chi2(dump.samples, 2)


def test_sample_seeded_runs_identical(tmp_path):
    cfg_path = tmp_path / "run.yaml"
    write_config(cfg_path, n_samples=300)
    out_a, out_b = tmp_path / "a", tmp_path / "b"
    for out in (out_a, out_b):
        assert main(["sample", "--config", str(cfg_path), "--exact-oracle",
                     "--out", str(out)]) == 0
    assert (out_a / "samples.txt").read_bytes() == (out_b / "samples.txt").read_bytes()


def test_sample_flip_sidecar_records_total(tmp_path):
    cfg_path = tmp_path / "run.yaml"
    write_config(cfg_path, sampler="flip", flips={"kind": "linear", "total": 9},
                 n_samples=50)
    out = tmp_path / "run"
    assert main(["sample", "--config", str(cfg_path), "--exact-oracle"]) == 0
    sidecar = json.loads((out / "samples.json").read_text())
    assert sidecar["flip_total"] == 9 and sidecar["flip_kind"] == "linear"


def test_sample_checkpoint_horizon_mismatch(tmp_path):
    cfg_path = tmp_path / "run.yaml"
    write_config(cfg_path)
    out = tmp_path / "run"
    assert main(["train", "--config", str(cfg_path)]) == 0
    cfg2 = tmp_path / "run2.yaml"
    write_config(cfg2, t_f=10.0)
    code = main(["sample", "--config", str(cfg2), "--checkpoint",
                 str(out / "checkpoint.bin"), "--out", str(tmp_path / "r2")])
    assert code == 2  # configuration mismatch surfaces as a CLI error


def test_eval_lineage_mismatch(tmp_path):
    cfg_path = tmp_path / "run.yaml"
    write_config(cfg_path, n_samples=200)
    out = tmp_path / "run"
    assert main(["gen-data", "--config", str(cfg_path)]) == 0
    assert main(["sample", "--config", str(cfg_path), "--exact-oracle"]) == 0
    # different seed -> different hash
    cfg2 = tmp_path / "other.yaml"
    write_config(cfg2, seed=999)
    out2 = tmp_path / "other_out"
    assert main(["gen-data", "--config", str(cfg2), "--out", str(out2)]) == 0
    code = main(["eval", "--config", str(cfg_path),
                 "--samples", str(out / "samples.txt"),
                 "--dataset", str(out2 / "dataset.json")])
    assert code == 2
    assert main(["eval", "--config", str(cfg_path),
                 "--samples", str(out / "samples.txt"),
                 "--dataset", str(out2 / "dataset.json"),
                 "--allow-mismatch"]) == 0


def test_eval_rejects_empty_samples(tmp_path):
    cfg_path = tmp_path / "run.yaml"
    write_config(cfg_path)
    out = tmp_path / "run"
    assert main(["gen-data", "--config", str(cfg_path)]) == 0
    empty = tmp_path / "empty.txt"
    empty.write_text("")
    empty.with_suffix(".json").write_text(json.dumps({"config_hash": "x"}))
    code = main(["eval", "--config", str(cfg_path), "--samples", str(empty),
                 "--dataset", str(out / "dataset.json"), "--allow-mismatch"])
    assert code == 2


def test_validate_bounds_small_sweep(tmp_path):
    cfg_path = tmp_path / "run.yaml"
    write_config(cfg_path, bounds={"dims": [2, 3], "n_instances": 4,
                                   "k_values": [25, 100], "t_f": 4.0,
                                   "eta_points": 10, "eta_max": 0.4,
                                   "tv_dims": [2, 4]})
    out = tmp_path / "run"
    assert main(["validate-bounds", "--config", str(cfg_path)]) == 0
    rows = (out / "bound_report.csv").read_text().strip().splitlines()
    assert rows[0].startswith("kind,instance,d,k,kl_init")
    kl_rows = [r for r in rows[1:] if r.startswith("kl,")]
    assert len(kl_rows) == 8
    # report recomputes: bound column equals the formula from its own columns
    for row in kl_rows:
        parts = row.split(",")
        kl_init, beta, tau, eps, t_f, bound = map(float, parts[4:10])
        assert bound == pytest.approx(np.exp(-t_f) * kl_init + tau * beta + eps * t_f,
                                      abs=1e-12)


def test_validate_bounds_corrupt_mode_reports_eps(tmp_path):
    cfg_path = tmp_path / "run.yaml"
    write_config(cfg_path, bounds={"dims": [2], "n_instances": 1,
                                   "k_values": [40], "t_f": 3.0,
                                   "eta_points": 2, "eta_max": 0.1,
                                   "tv_dims": [2]})
    out = tmp_path / "run"
    assert main(["validate-bounds", "--config", str(cfg_path), "--corrupt", "0.5"]) == 0
    rows = [r.split(",") for r in
            (out / "bound_report.csv").read_text().strip().splitlines()[1:]
            if r.startswith("kl,")]
    assert float(rows[0][7]) > 0.01  # estimated eps is reported


def test_forward_diag_prints_tables(tmp_path, capsys):
    cfg_path = tmp_path / "run.yaml"
    write_config(cfg_path, d=3, model={"blocks": 1, "width": 16, "time_embed_dim": 8})
    assert main(["forward-diag", "--config", str(cfg_path), "--times", "0.1,1.0"]) == 0
    text = capsys.readouterr().out
    assert "single-bit kernel" in text
    assert "marginal" in text
