"""Metrics, missingness sweeps, and multiply-accumulate accounting."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from . import attention as A
from .errors import ContractViolation
from .model import Model, ModelConfig
from .training import apply_modality_dropout, blank_grids


def _as_arrays(preds, labels):
    preds = np.asarray(preds, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if preds.size == 0 or preds.shape != labels.shape:
        raise ContractViolation("need equally sized, nonempty predictions and labels")
    return preds, labels


def accuracy(preds, labels) -> float:
    preds, labels = _as_arrays(preds, labels)
    return float(np.mean(preds == labels))


def confusion_matrix(preds, labels, n_classes: int) -> np.ndarray:
    """Rows are true classes, columns predictions; labels are 1-based."""
    preds, labels = _as_arrays(preds, labels)
    for arr, what in ((preds, "prediction"), (labels, "label")):
        if arr.min() < 1 or arr.max() > n_classes:
            raise ContractViolation(f"{what} outside [1, {n_classes}]")
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (labels - 1, preds - 1), 1)
    return cm


def per_class_scores(cm: np.ndarray):
    """(precision, recall, f1) arrays; empty denominators score 0."""
    tp = np.diag(cm).astype(np.float64)
    pred_tot = cm.sum(axis=0).astype(np.float64)
    true_tot = cm.sum(axis=1).astype(np.float64)
    precision = np.divide(tp, pred_tot, out=np.zeros_like(tp), where=pred_tot > 0)
    recall = np.divide(tp, true_tot, out=np.zeros_like(tp), where=true_tot > 0)
    pr = precision + recall
    f1 = np.divide(2.0 * precision * recall, pr, out=np.zeros_like(tp), where=pr > 0)
    return precision, recall, f1


def macro_f1(preds, labels, n_classes: int) -> float:
    """Unweighted mean of per-class F1; a class never predicted and never
    present contributes 0, it is not excluded."""
    _, _, f1 = per_class_scores(confusion_matrix(preds, labels, n_classes))
    return float(f1.mean())


def improvement(ours: float, base: float, kind: str = "absolute") -> float:
    if kind == "absolute":
        return ours - base
    if kind == "relative":
        if base <= 0:
            raise ContractViolation("relative improvement needs base > 0")
        return (ours - base) / base * 100.0
    raise ContractViolation(f"unknown improvement kind '{kind}'")


def eval_report(preds, labels, n_classes: int, seed: int,
                missingness: float) -> dict:
    cm = confusion_matrix(preds, labels, n_classes)
    precision, recall, f1 = per_class_scores(cm)
    return {
        "accuracy": accuracy(preds, labels),
        "macro_f1": float(f1.mean()),
        "precision": precision.tolist(),
        "recall": recall.tolist(),
        "f1": f1.tolist(),
        "confusion_matrix": cm.tolist(),
        "seed": seed,
        "missingness": missingness,
    }


# ---------------------------------------------------------------------------
# Missingness sweep
# ---------------------------------------------------------------------------

_SALT_SWEEP = 31


def missingness_sweep(model: Model, prepared: list[tuple[dict, np.ndarray, int]],
                      levels, n_trials: int, seed: int) -> list[dict]:
    """Evaluate under synthetic modality outage.

    For each level, every test sample drops each present modality
    independently at that rate (at least one retained), per trial. Level 0
    short-circuits to the exact clean evaluation. Deterministic given
    (seed, trial, level)."""
    if not prepared:
        raise ContractViolation("nothing to evaluate")
    levels = [float(level) for level in levels]
    if any(not 0.0 <= level <= 1.0 for level in levels):
        raise ContractViolation("levels must lie in [0, 1]")
    if n_trials < 1:
        raise ContractViolation("need at least one trial")
    blanks = blank_grids(model)
    n_classes = model.n_classes
    labels = [label for _, _, label in prepared]

    out = []
    clean_report = None
    for level_idx, level in enumerate(levels):
        trials = []
        if level == 0.0:
            if clean_report is None:
                preds = [model.predict(inputs, mask) for inputs, mask, _ in prepared]
                clean_report = eval_report(preds, labels, n_classes, seed, 0.0)
            trials = [dict(clean_report) for _ in range(n_trials)]
        else:
            for trial in range(n_trials):
                preds = []
                for i, (inputs, mask, _) in enumerate(prepared):
                    rng = np.random.default_rng(
                        [seed, _SALT_SWEEP, trial, level_idx, i])
                    d_inputs, d_mask = apply_modality_dropout(
                        inputs, mask, level, rng, blanks)
                    preds.append(model.predict(d_inputs, d_mask))
                trials.append(eval_report(preds, labels, n_classes, seed, level))
        accs = np.array([t["accuracy"] for t in trials])
        f1s = np.array([t["macro_f1"] for t in trials])
        out.append({
            "level": level,
            "accuracy_mean": float(accs.mean()),
            "accuracy_std": float(accs.std()),
            "macro_f1_mean": float(f1s.mean()),
            "macro_f1_std": float(f1s.std()),
            "trials": trials,
        })
    return out


# ---------------------------------------------------------------------------
# Operation accounting
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class OpCount:
    stages: dict[str, int]

    @property
    def total(self) -> int:
        return sum(self.stages.values())


def attention_scaling_rows(lengths, d_model: int, n_heads: int, u: int) -> list[dict]:
    """Per-length MAC breakdown of one attention stage, sparse and dense."""
    rows = []
    for length in lengths:
        sparse = A.sparse_attention_macs(length, d_model, n_heads, u)
        dense = A.dense_attention_macs(length, d_model)
        row = {"length": int(length)}
        row.update({f"sparse_{k}": v for k, v in sparse.items()})
        row.update({f"dense_{k}": v for k, v in dense.items()})
        rows.append(row)
    return rows


def write_ops_csv(rows: list[dict], path) -> None:
    if not rows:
        raise ContractViolation("no rows to write")
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
        writer.writeheader()
        writer.writerows(rows)


def _conv_macs(length: int, d_model: int) -> int:
    return length * 3 * d_model * d_model


def pipeline_ops(config: ModelConfig, modalities, n_classes: int, u: int) -> OpCount:
    """Analytic multiply-accumulates for one forward pass at budget u.

    Encoder and fusion stages count the budgeted attention plus the halving
    convolution; the expert stage counts the router, the k routed experts
    per token, and the head. Symbol embedding is table adds, zero MACs.
    """
    stages: dict[str, int] = {"encoders": 0, "fusion": 0, "experts": 0}
    fused = 0
    for info in modalities:
        length = math.ceil(info.length / config.word_length)
        for _ in range(config.n_layers):
            stages["encoders"] += A.sparse_attention_macs(
                length, config.d_model, config.n_heads, u)["total"]
            stages["encoders"] += _conv_macs(length, config.d_model)
            length = (length + 1) // 2
        fused += length
    stages["fusion"] = (A.sparse_attention_macs(
        fused, config.d_model, config.n_heads, config.fusion_budget)["total"]
        + _conv_macs(fused, config.d_model))
    tokens = (fused + 1) // 2
    expert_out = n_classes if config.experts_emit_logits else config.d_model
    stages["experts"] = (
        tokens * config.d_model * config.n_experts                      # router
        + tokens * config.top_k * (config.d_model * config.d_ff
                                   + config.d_ff * expert_out)          # routed FFNs
        + (0 if config.experts_emit_logits else config.d_model * n_classes))
    return OpCount(stages)
