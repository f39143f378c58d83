"""End-to-end command-line behavior: exit codes, artifacts, run manifests."""

import csv
import hashlib
import json

import numpy as np
import pytest

from maestro.cli import main
from maestro.data import load_dataset
from maestro.model import Model
from maestro.sax import read_symbols

TINY_CONFIG = """
seed = 7
[model]
alpha = 6
word_length = 4
d_model = 8
n_heads = 2
n_layers = 1
dropout = 0.0
gate_hidden = 4
n_experts = 2
top_k = 1
[train]
max_epochs = 2
batch_size = 16
learning_rate = 1e-3
patience = 20
[curriculum]
p_max = 0.4
warmup = 1
horizon = 3
"""


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """One synth + train run shared by the read-only CLI tests."""
    root = tmp_path_factory.mktemp("cli")
    config = root / "tiny.toml"
    config.write_text(TINY_CONFIG)
    data = root / "data"
    assert main(["synth", "--mode", "redundant", "--samples", "60",
                 "--length", "32", "--out", str(data), "--seed", "7"]) == 0
    run = root / "run"
    assert main(["train", "--config", str(config), "--data",
                 str(data / "manifest.json"), "--out", str(run),
                 "--quiet"]) == 0
    return root


class TestExitCodes:
    def test_unknown_subcommand_exits_one(self, capsys):
        assert main(["melt"]) == 1
        assert "usage:" in capsys.readouterr().err

    def test_unknown_flag_exits_one(self, capsys):
        assert main(["synth", "--mode", "redundant", "--frobnicate"]) == 1
        err = capsys.readouterr().err
        assert "usage:" in err
        assert "maestro: error:" in err

    def test_missing_required_argument_exits_one(self, capsys):
        assert main(["tokenize"]) == 1
        assert "usage:" in capsys.readouterr().err

    def test_help_exits_zero(self):
        with pytest.raises(SystemExit) as exc:
            main(["--help"])
        assert exc.value.code == 0

    def test_missing_dataset_exits_two(self, tmp_path):
        assert main(["tokenize", "--data", str(tmp_path / "nope.json"),
                     "--out", str(tmp_path / "o")]) == 2

    def test_garbage_checkpoint_exits_two(self, tmp_path, workspace):
        bad = tmp_path / "bad.ckpt"
        bad.write_bytes(b"not a checkpoint at all")
        assert main(["eval", "--checkpoint", str(bad), "--data",
                     str(workspace / "data" / "manifest.json"),
                     "--out", str(tmp_path / "r.json")]) == 2

    def test_bad_config_exits_one(self, tmp_path, workspace):
        config = tmp_path / "bad.toml"
        config.write_text("[optimizer]\nlr = 1\n")
        assert main(["train", "--config", str(config), "--data",
                     str(workspace / "data" / "manifest.json"),
                     "--out", str(tmp_path / "r"), "--quiet"]) == 1


class TestSynth:
    def test_dataset_loads_and_reports(self, workspace):
        ds = load_dataset(workspace / "data" / "manifest.json")
        assert len(ds.samples) == 60
        report = json.loads((workspace / "data" / "synth_report.json").read_text())
        assert report["mode"] == "redundant"
        assert "stump_accuracy" in report

    def test_xor_mode_writes_certification(self, tmp_path):
        out = tmp_path / "xor"
        assert main(["synth", "--mode", "xor-cross", "--samples", "40",
                     "--out", str(out), "--seed", "3"]) == 0
        report = json.loads((out / "synth_report.json").read_text())
        assert set(report["certification"]) == {"max_unimodal_stump",
                                                "joint_rule"}

    def test_same_seed_same_bytes(self, tmp_path):
        args = ["synth", "--mode", "redundant", "--samples", "8",
                "--length", "16", "--seed", "4"]
        a, b = tmp_path / "a", tmp_path / "b"
        assert main(args + ["--out", str(a)]) == 0
        assert main(args + ["--out", str(b)]) == 0
        man_a = json.loads((a / "run_manifest.json").read_text())
        man_b = json.loads((b / "run_manifest.json").read_text())
        assert man_a["outputs"] == man_b["outputs"]


class TestTrainArtifacts:
    def test_expected_files(self, workspace):
        run = workspace / "run"
        for name in ("checkpoint.ckpt", "history.json", "splits.json",
                     "results.json", "run_manifest.json"):
            assert (run / name).exists(), name

    def test_results_content(self, workspace):
        results = json.loads((workspace / "run" / "results.json").read_text())
        assert results["best_epoch"] >= 0
        assert 0.0 <= results["test_report"]["accuracy"] <= 1.0
        history = json.loads((workspace / "run" / "history.json").read_text())
        assert len(history) == 2
        assert history[0]["dropout_rate"] == 0.0

    def test_splits_partition_the_dataset(self, workspace):
        splits = json.loads((workspace / "run" / "splits.json").read_text())
        ids = sorted(i for part in splits.values() for i in part)
        ds = load_dataset(workspace / "data" / "manifest.json")
        assert ids == sorted(s.sample_id for s in ds.samples)

    def test_checkpoint_reloads(self, workspace):
        model, meta = Model.load(workspace / "run" / "checkpoint.ckpt")
        assert meta["best_epoch"] >= 0
        assert [m.name for m in model.modalities] == ["m1", "m2", "m3"]

    def test_run_manifest_hashes_are_real(self, workspace):
        run = workspace / "run"
        manifest = json.loads((run / "run_manifest.json").read_text())
        assert manifest["command"] == "train"
        assert manifest["seed"] == 7
        assert manifest["config"]["model"]["d_model"] == 8
        assert manifest["outputs"]
        for rel, digest in manifest["outputs"].items():
            actual = hashlib.sha256((run / rel).read_bytes()).hexdigest()
            assert actual == digest, rel


class TestEval:
    def test_report_structure(self, workspace, tmp_path):
        out = tmp_path / "report.json"
        assert main(["eval", "--checkpoint",
                     str(workspace / "run" / "checkpoint.ckpt"),
                     "--data", str(workspace / "data" / "manifest.json"),
                     "--split-file", str(workspace / "run" / "splits.json"),
                     "--split", "test", "--missing", "0.0,0.3",
                     "--trials", "2", "--out", str(out), "--seed", "7"]) == 0
        report = json.loads(out.read_text())
        assert [row["level"] for row in report["sweep"]] == [0.0, 0.3]
        assert report["n_samples"] == 6
        assert all(len(row["trials"]) == 2 for row in report["sweep"])

    def test_modality_mismatch_exits_two(self, workspace, tmp_path):
        other = tmp_path / "other"
        assert main(["synth", "--mode", "redundant", "--samples", "8",
                     "--modalities", "4", "--length", "32",
                     "--out", str(other), "--seed", "1"]) == 0
        assert main(["eval", "--checkpoint",
                     str(workspace / "run" / "checkpoint.ckpt"),
                     "--data", str(other / "manifest.json"),
                     "--out", str(tmp_path / "r.json")]) == 2


class TestAblate:
    def test_requires_a_toggle(self, workspace, tmp_path):
        assert main(["ablate", "--data",
                     str(workspace / "data" / "manifest.json"),
                     "--out", str(tmp_path / "r"), "--quiet"]) == 1

    def test_no_moe_records_the_ablation(self, workspace, tmp_path):
        config = tmp_path / "tiny.toml"
        config.write_text(TINY_CONFIG.replace("max_epochs = 2",
                                              "max_epochs = 1"))
        out = tmp_path / "abl"
        assert main(["ablate", "--config", str(config), "--data",
                     str(workspace / "data" / "manifest.json"),
                     "--out", str(out), "--quiet", "--no-moe"]) == 0
        results = json.loads((out / "results.json").read_text())
        assert results["ablation"] == {"n_experts": 1, "top_k": 1}
        manifest = json.loads((out / "run_manifest.json").read_text())
        assert manifest["config"]["model"]["n_experts"] == 1

    def test_no_dropout_zeroes_the_curriculum(self, workspace, tmp_path):
        config = tmp_path / "tiny.toml"
        config.write_text(TINY_CONFIG.replace("max_epochs = 2",
                                              "max_epochs = 2"))
        out = tmp_path / "abl"
        assert main(["ablate", "--config", str(config), "--data",
                     str(workspace / "data" / "manifest.json"),
                     "--out", str(out), "--quiet", "--no-dropout"]) == 0
        history = json.loads((out / "history.json").read_text())
        assert all(h["dropout_rate"] == 0.0 for h in history)


class TestInspection:
    def test_tokenize_writes_readable_symbols(self, workspace, tmp_path):
        out = tmp_path / "toks"
        assert main(["tokenize", "--data",
                     str(workspace / "data" / "manifest.json"),
                     "--alpha", "6", "--word-length", "4",
                     "--out", str(out)]) == 0
        symbols, alpha = read_symbols(out / "s00000__m1.msax")
        assert alpha == 6
        assert symbols.shape == (1, 8)
        assert symbols.min() >= 1 and symbols.max() <= 6

    def test_corrupt_output_loads(self, workspace, tmp_path):
        out = tmp_path / "corr"
        assert main(["corrupt", "--data",
                     str(workspace / "data" / "manifest.json"),
                     "--mode", "drop", "--modalities", "m2",
                     "--out", str(out), "--seed", "1"]) == 0
        ds = load_dataset(out / "manifest.json")
        assert all(s.arrays["m2"] is None for s in ds.samples)
        assert all(s.arrays["m1"] is not None for s in ds.samples)

    def test_attn_map_csv(self, workspace, tmp_path):
        out = tmp_path / "map.csv"
        assert main(["attn-map", "--checkpoint",
                     str(workspace / "run" / "checkpoint.ckpt"),
                     "--data", str(workspace / "data" / "manifest.json"),
                     "--sample", "s00000", "--out", str(out)]) == 0
        lines = out.read_text().strip().splitlines()
        header = lines[0].split(",")
        assert set(header) == {"m1", "m2", "m3"}
        weights = np.array([[float(v) for v in line.split(",")]
                            for line in lines[1:]])
        assert np.allclose(weights.sum(axis=1), 1.0, atol=1e-9)

    def test_experts_emits_count_csv(self, workspace, tmp_path):
        out = tmp_path / "experts.csv"
        assert main(["experts", "--checkpoint",
                     str(workspace / "run" / "checkpoint.ckpt"),
                     "--data", str(workspace / "data" / "manifest.json"),
                     "--out", str(out)]) == 0
        with out.open(newline="") as fh:
            rows = list(csv.DictReader(fh))
        assert {r["pattern"] for r in rows} == {"full", "drop_m1", "drop_m2",
                                                "drop_m3"}
        full = next(r for r in rows if r["pattern"] == "full")
        counts = [int(full[k]) for k in full if k.startswith("expert_")]
        assert len(counts) == 2 and sum(counts) > 0

    def test_experts_honors_pattern_file(self, workspace, tmp_path):
        patterns = tmp_path / "patterns.json"
        patterns.write_text(json.dumps({"solo": ["m1"], "pair": ["m1", "m2"]}))
        out = tmp_path / "experts.csv"
        assert main(["experts", "--checkpoint",
                     str(workspace / "run" / "checkpoint.ckpt"),
                     "--data", str(workspace / "data" / "manifest.json"),
                     "--patterns", str(patterns), "--out", str(out)]) == 0
        with out.open(newline="") as fh:
            rows = list(csv.DictReader(fh))
        assert [r["pattern"] for r in rows] == ["solo", "pair"]

        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps({"ghost": ["m9"]}))
        assert main(["experts", "--checkpoint",
                     str(workspace / "run" / "checkpoint.ckpt"),
                     "--data", str(workspace / "data" / "manifest.json"),
                     "--patterns", str(bad),
                     "--out", str(tmp_path / "x.csv")]) == 2

    def test_count_ops_csv(self, tmp_path):
        out = tmp_path / "ops.csv"
        assert main(["count-ops", "--lengths", "64,128", "--out",
                     str(out)]) == 0
        lines = out.read_text().strip().splitlines()
        assert len(lines) == 3
        assert lines[0].startswith("length,sparse_qkv_proj")

    def test_count_ops_rejects_bad_lengths(self, tmp_path):
        assert main(["count-ops", "--lengths", "0,64",
                     "--out", str(tmp_path / "o.csv")]) == 1
