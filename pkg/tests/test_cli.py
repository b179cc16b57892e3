"""Command-line pipeline: artifacts, idempotence, failure paths."""

import json
from pathlib import Path

import numpy as np
import pytest

from limnolearn.cli import main
from limnolearn.runconfig import load_config

MICRO_CONFIG = """
seed: 5
sim:
  n_lakes: 3
  years: 1
  depth_max: 8.0
model:
  embed_dim: 4
  hidden: 8
  sequence_length: 30
evolution:
  n: 2
  tau: 3
  max_generations: 1
finetune:
  n_lakes: 2
  n_eval_lakes: 1
  years: 1
  depth_max: 6.0
  epochs: 1
  obs_fraction: 0.05
"""


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    config = root / "config.yaml"
    config.write_text(MICRO_CONFIG)
    out = root / "run"
    argv = ["--config", str(config), "--out", str(out), "--workers", "1"]
    assert main(["simulate"] + argv) == 0
    assert main(["pretrain"] + argv) == 0
    assert main(["finetune"] + argv) == 0
    assert main(["evaluate"] + argv) == 0
    assert main(["export-genemap"] + argv) == 0
    return config, out


class TestPipelineArtifacts:
    def test_all_artifacts_exist(self, workdir):
        _, out = workdir
        for name in ("dataset.csv", "dataset.lakes.csv", "pretrained.npz",
                     "genemap_codes.csv", "genemap_relevance.csv",
                     "fitness_trace.csv", "metrics.json",
                     "comparison_table.csv", "resolved_config.yaml"):
            assert (out / name).exists(), name

    def test_metrics_embed_hash_and_seed(self, workdir):
        config, out = workdir
        payload = json.loads((out / "metrics.json").read_text())
        expected = load_config(config).config_hash()
        assert payload["config_hash"] == expected
        assert payload["seed"] == 5
        assert set(payload["metrics"]) == {"pgfm", "no_pretrain",
                                           "no_physics", "no_that",
                                           "baseline"}

    def test_rerun_evaluate_is_byte_identical(self, workdir):
        config, out = workdir
        first = (out / "metrics.json").read_bytes()
        argv = ["--config", str(config), "--out", str(out), "--workers", "1"]
        assert main(["evaluate"] + argv) == 0
        assert (out / "metrics.json").read_bytes() == first

    def test_artifact_files_carry_metadata_line(self, workdir):
        _, out = workdir
        for name in ("dataset.csv", "fitness_trace.csv", "genemap_codes.csv",
                     "comparison_table.csv"):
            first = (out / name).read_text().splitlines()[0]
            assert first.startswith("#") and "config_hash=" in first, name


class TestFailurePaths:
    def test_evaluate_without_checkpoints(self, tmp_path, capsys):
        config = tmp_path / "c.yaml"
        config.write_text(MICRO_CONFIG)
        code = main(["evaluate", "--config", str(config), "--out",
                     str(tmp_path / "fresh")])
        assert code != 0
        err = capsys.readouterr().err
        assert "missing" in err and "finetune" in err

    def test_pretrain_without_dataset(self, tmp_path, capsys):
        config = tmp_path / "c.yaml"
        config.write_text(MICRO_CONFIG)
        code = main(["pretrain", "--config", str(config), "--out",
                     str(tmp_path / "fresh2")])
        assert code != 0
        assert "dataset" in capsys.readouterr().err

    def test_config_hash_mismatch_rejected(self, workdir, tmp_path, capsys):
        config, out = workdir
        other = tmp_path / "other.yaml"
        other.write_text(MICRO_CONFIG.replace("obs_fraction: 0.05",
                                              "obs_fraction: 0.06"))
        code = main(["export-genemap", "--config", str(other), "--out",
                     str(out)])
        assert code != 0
        assert "does not match" in capsys.readouterr().err

    def test_unknown_config_key_rejected(self, tmp_path, capsys):
        bad = tmp_path / "bad.yaml"
        bad.write_text("seed: 1\nsim:\n  lakes: 3\n")
        code = main(["simulate", "--config", str(bad), "--out",
                     str(tmp_path / "x")])
        assert code != 0
        assert "unknown config key" in capsys.readouterr().err


class TestConfigHandling:
    def test_flag_overrides(self, tmp_path):
        config = tmp_path / "c.yaml"
        config.write_text("seed: 1\n")
        loaded = load_config(config, overrides={"seed": 9, "workers": 2,
                                                "out_dir": "elsewhere"})
        assert loaded.seed == 9
        assert loaded.workers == 2
        assert loaded.io.out_dir == "elsewhere"

    def test_hash_stable_under_io_changes(self, tmp_path):
        a = load_config(None, overrides={"out_dir": "x"})
        b = load_config(None, overrides={"out_dir": "y", "workers": 4})
        assert a.config_hash() == b.config_hash()

    def test_hash_changes_with_substance(self):
        a = load_config(None)
        b = load_config(None, overrides={"seed": 3})
        assert a.config_hash() != b.config_hash()
