"""Classification metrics, the missingness sweep, and operation accounting."""

import csv

import numpy as np
import pytest

from maestro.data import SynthSpec, generate_synthetic
from maestro.errors import ContractViolation
from maestro.metrics import (OpCount, accuracy, attention_scaling_rows,
                             confusion_matrix, eval_report, improvement,
                             macro_f1, missingness_sweep, per_class_scores,
                             pipeline_ops, write_ops_csv)
from maestro.model import Model, ModelConfig
from maestro.training import evaluate, prepare_samples


class TestAccuracy:
    def test_hand_cases(self):
        assert accuracy([1, 2, 2], [1, 2, 1]) == pytest.approx(2 / 3)
        assert accuracy([3, 1], [3, 1]) == 1.0

    def test_uniform_random_is_one_over_classes(self):
        rng = np.random.default_rng(0)
        preds = rng.integers(1, 4, size=30000)
        labels = rng.integers(1, 4, size=30000)
        assert abs(accuracy(preds, labels) - 1 / 3) < 0.01

    def test_rejects_empty_and_mismatched(self):
        with pytest.raises(ContractViolation):
            accuracy([], [])
        with pytest.raises(ContractViolation):
            accuracy([1, 2], [1])


def _oracle_confusion(preds, labels, n_classes):
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    for p, y in zip(preds, labels):
        cm[y - 1][p - 1] += 1
    return cm


class TestConfusionMatrix:
    def test_hand_case(self):
        cm = confusion_matrix([1, 2, 2, 1], [1, 2, 1, 1], 2)
        assert cm.tolist() == [[2, 1], [0, 1]]

    def test_agrees_with_counting_oracle(self):
        rng = np.random.default_rng(17)
        for _ in range(100):
            n = int(rng.integers(1, 60))
            preds = rng.integers(1, 5, size=n)
            labels = rng.integers(1, 5, size=n)
            assert np.array_equal(confusion_matrix(preds, labels, 4),
                                  _oracle_confusion(preds, labels, 4))

    def test_rejects_out_of_range(self):
        with pytest.raises(ContractViolation):
            confusion_matrix([0, 1], [1, 1], 2)
        with pytest.raises(ContractViolation):
            confusion_matrix([1, 1], [1, 3], 2)


class TestScores:
    def test_never_predicted_class_scores_zero(self):
        # everything predicted as class 1 on a balanced two-class set
        preds = [1, 1, 1, 1]
        labels = [1, 1, 2, 2]
        precision, recall, f1 = per_class_scores(
            confusion_matrix(preds, labels, 2))
        assert precision[0] == pytest.approx(0.5)
        assert recall[0] == 1.0
        assert f1[0] == pytest.approx(2 / 3)
        assert precision[1] == recall[1] == f1[1] == 0.0
        assert macro_f1(preds, labels, 2) == pytest.approx(1 / 3)

    def test_perfect_predictions(self):
        assert macro_f1([1, 2, 3], [1, 2, 3], 3) == 1.0


class TestImprovement:
    def test_absolute(self):
        assert improvement(0.77, 0.71) == pytest.approx(0.06, abs=1e-12)
        assert improvement(0.5, 0.5) == 0.0

    def test_relative_percent(self):
        assert improvement(0.88, 0.85, kind="relative") == pytest.approx(
            (0.88 - 0.85) / 0.85 * 100.0, abs=1e-12)
        assert abs(improvement(0.88, 0.85, kind="relative") - 3.53) < 0.005
        assert improvement(0.5, 0.5, kind="relative") == 0.0

    def test_rejects_bad_base_and_kind(self):
        with pytest.raises(ContractViolation):
            improvement(0.5, 0.0, kind="relative")
        with pytest.raises(ContractViolation):
            improvement(0.5, 0.4, kind="geometric")


class TestEvalReport:
    def test_fields_are_consistent(self):
        preds = [1, 2, 2, 3, 3, 3]
        labels = [1, 2, 3, 3, 1, 3]
        report = eval_report(preds, labels, 3, seed=42, missingness=0.2)
        assert report["seed"] == 42
        assert report["missingness"] == 0.2
        assert report["accuracy"] == accuracy(preds, labels)
        assert report["macro_f1"] == macro_f1(preds, labels, 3)
        cm = np.array(report["confusion_matrix"])
        assert cm.sum() == len(preds)
        assert len(report["precision"]) == 3


def _sweep_model():
    ds = generate_synthetic(SynthSpec(mode="redundant", n_samples=12,
                                      n_modalities=3, length=16, seed=3))
    cfg = ModelConfig(alpha=4, word_length=4, d_model=4, n_heads=1,
                      n_layers=1, dropout=0.0, gate_hidden=4, n_experts=2,
                      top_k=1)
    model = Model(cfg, ds.modalities, ds.n_classes, seed=3)
    return model, prepare_samples(model, ds)


class TestMissingnessSweep:
    def test_level_zero_equals_clean_evaluation(self):
        model, prepared = _sweep_model()
        sweep = missingness_sweep(model, prepared, [0.0], n_trials=3, seed=1)
        _, clean_acc, _ = evaluate(model, prepared)
        row = sweep[0]
        assert row["accuracy_mean"] == clean_acc
        assert row["accuracy_std"] == 0.0
        assert all(t["accuracy"] == clean_acc for t in row["trials"])

    def test_structure_and_determinism(self):
        model, prepared = _sweep_model()
        a = missingness_sweep(model, prepared, [0.0, 0.3], n_trials=2, seed=5)
        b = missingness_sweep(model, prepared, [0.0, 0.3], n_trials=2, seed=5)
        assert a == b
        assert [row["level"] for row in a] == [0.0, 0.3]
        assert all(len(row["trials"]) == 2 for row in a)
        assert all(0.0 <= row["accuracy_mean"] <= 1.0 for row in a)

    def test_rejects_bad_arguments(self):
        model, prepared = _sweep_model()
        with pytest.raises(ContractViolation):
            missingness_sweep(model, [], [0.0], 1, 0)
        with pytest.raises(ContractViolation):
            missingness_sweep(model, prepared, [1.5], 1, 0)
        with pytest.raises(ContractViolation):
            missingness_sweep(model, prepared, [0.0], 0, 0)


class TestOpAccounting:
    def test_opcount_total(self):
        count = OpCount({"a": 3, "b": 7})
        assert count.total == 10

    def test_dense_scores_quadruple_when_length_doubles(self):
        rows = attention_scaling_rows([64, 128, 256], 64, 4, 1)
        for lo, hi in zip(rows, rows[1:]):
            assert hi["dense_scores"] == 4 * lo["dense_scores"]
            assert hi["dense_qkv_proj"] == 2 * lo["dense_qkv_proj"]

    def test_sparse_selected_scores_track_length_times_span(self):
        import math
        rows = {r["length"]: r for r in attention_scaling_rows(
            [64, 128], 64, 4, 1)}

        def span(length):
            return min(math.ceil(math.log(length)), length)

        ratio = (128 * span(128)) / (64 * span(64))
        assert rows[128]["sparse_selected_scores"] == pytest.approx(
            ratio * rows[64]["sparse_selected_scores"])

    def test_sparse_cheaper_than_dense_at_scale(self):
        for row in attention_scaling_rows([64, 256, 1024, 4096], 64, 4, 1):
            assert row["sparse_total"] < row["dense_total"]
            assert row["sparse_attention"] < row["dense_attention"]

    def test_csv_round_trip(self, tmp_path):
        rows = attention_scaling_rows([64, 128], 32, 2, 1)
        path = tmp_path / "ops.csv"
        write_ops_csv(rows, path)
        with open(path, newline="") as fh:
            back = list(csv.DictReader(fh))
        assert len(back) == 2
        assert int(back[0]["length"]) == 64
        assert int(back[1]["dense_total"]) == rows[1]["dense_total"]

    def test_csv_needs_rows(self, tmp_path):
        with pytest.raises(ContractViolation):
            write_ops_csv([], tmp_path / "ops.csv")


def _mods(length, n=2):
    from maestro.data import ModalityInfo
    return [ModalityInfo(f"m{j}", 1.0, 1, length) for j in range(n)]


class TestPipelineOps:
    CFG = dict(alpha=6, word_length=2, d_model=16, n_heads=2, n_layers=1,
               dropout=0.0, gate_hidden=4, n_experts=2, top_k=1)

    def test_stage_keys_and_total(self):
        ops = pipeline_ops(ModelConfig(**self.CFG), _mods(64), 2, u=1)
        assert set(ops.stages) == {"encoders", "fusion", "experts"}
        assert ops.total == sum(ops.stages.values())
        assert all(v > 0 for v in ops.stages.values())

    def test_monotone_in_length(self):
        a = pipeline_ops(ModelConfig(**self.CFG), _mods(64), 2, u=1)
        b = pipeline_ops(ModelConfig(**self.CFG), _mods(256), 2, u=1)
        assert b.total > a.total
        assert b.stages["encoders"] > a.stages["encoders"]

    def test_monotone_in_budget(self):
        a = pipeline_ops(ModelConfig(**self.CFG), _mods(512), 2, u=1)
        b = pipeline_ops(ModelConfig(**self.CFG), _mods(512), 2, u=4)
        assert b.stages["encoders"] > a.stages["encoders"]

    def test_monotone_in_experts(self):
        small = pipeline_ops(ModelConfig(**self.CFG), _mods(64), 2, u=1)
        big_cfg = dict(self.CFG, n_experts=8)
        big = pipeline_ops(ModelConfig(**big_cfg), _mods(64), 2, u=1)
        assert big.stages["experts"] > small.stages["experts"]

    def test_monotone_in_modalities(self):
        a = pipeline_ops(ModelConfig(**self.CFG), _mods(64, n=2), 2, u=1)
        b = pipeline_ops(ModelConfig(**self.CFG), _mods(64, n=4), 2, u=1)
        assert b.total > a.total

    def test_expert_logits_mode_drops_the_head(self):
        with_head = pipeline_ops(ModelConfig(**self.CFG), _mods(64), 5, u=1)
        logits_cfg = dict(self.CFG, experts_emit_logits=True)
        without = pipeline_ops(ModelConfig(**logits_cfg), _mods(64), 5, u=1)
        assert with_head.stages["experts"] != without.stages["experts"]
