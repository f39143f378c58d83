"""Sparse mixture-of-experts classification stage.

A linear router scores every token over the experts; each token keeps its
top-k experts and their outputs are scaled by the router weight, which is
how the router receives gradient: there is no auxiliary balancing loss, the
task loss alone shapes the routing. Expert outputs are averaged over tokens
and mapped to class logits, either through a linear head (experts act in
feature space, the default) or directly when experts emit logits.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ContractViolation


@dataclass(frozen=True)
class RoutingDecision:
    """Per-token routing: chosen expert indices and the full weight matrix."""

    indices: np.ndarray   # [n_tokens, k], columns ordered by decreasing weight
    weights: np.ndarray   # [n_tokens, n_experts], rows sum to 1

    @property
    def top1(self) -> np.ndarray:
        return self.indices[:, 0]


def init_moe_params(d_model: int, d_ff: int, n_experts: int, n_classes: int,
                    experts_emit_logits: bool,
                    rng: np.random.Generator) -> dict[str, T.Tensor]:
    def glorot(fan_in, fan_out):
        s = np.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-s, s, size=(fan_in, fan_out))

    out_dim = n_classes if experts_emit_logits else d_model
    params = {
        "moe.router.w": T.Tensor(glorot(d_model, n_experts), requires_grad=True),
        "moe.router.b": T.Tensor(np.zeros(n_experts), requires_grad=True),
    }
    for idx in range(n_experts):
        params[f"moe.expert{idx}.w1"] = T.Tensor(glorot(d_model, d_ff), requires_grad=True)
        params[f"moe.expert{idx}.b1"] = T.Tensor(np.zeros(d_ff), requires_grad=True)
        params[f"moe.expert{idx}.w2"] = T.Tensor(glorot(d_ff, out_dim), requires_grad=True)
        params[f"moe.expert{idx}.b2"] = T.Tensor(np.zeros(out_dim), requires_grad=True)
    if not experts_emit_logits:
        params["moe.head.w"] = T.Tensor(glorot(d_model, n_classes), requires_grad=True)
        params["moe.head.b"] = T.Tensor(np.zeros(n_classes), requires_grad=True)
    return params


def route_tokens(tokens: T.Tensor, params: dict, top_k: int) -> tuple[T.Tensor, RoutingDecision]:
    """Router weights (differentiable) plus the discrete top-k decision.

    Ties keep the lower expert index. Scaling all router logits by a positive
    constant reorders nothing, so the selected set is scale-invariant.
    """
    n_experts = params["moe.router.w"].values.shape[1]
    if not 1 <= top_k <= n_experts:
        raise ContractViolation("top_k must be in [1, n_experts]")
    weights = T.softmax(T.add(T.matmul(tokens, params["moe.router.w"]),
                              params["moe.router.b"]), axis=-1)
    order = np.argsort(-weights.values, axis=1, kind="stable")
    decision = RoutingDecision(indices=order[:, :top_k].copy(),
                               weights=weights.values.copy())
    return weights, decision


def moe_forward(
    tokens: T.Tensor,
    params: dict,
    n_experts: int,
    top_k: int,
    n_classes: int,
    experts_emit_logits: bool = False,
    collect: dict | None = None,
) -> T.Tensor:
    """Tokens [n, d] -> class logits [1, C].

    Every token contributes exactly its k selected experts, each scaled by
    the router weight and averaged over k; the result is mean-pooled over
    tokens. The loss on top of this is plain cross-entropy: no balancing or
    auxiliary terms exist anywhere in the stage.
    """
    if tokens.values.ndim != 2:
        raise ContractViolation("moe_forward expects tokens [n, d_model]")
    n_tokens = tokens.values.shape[0]
    weights, decision = route_tokens(tokens, params, top_k)

    # hard selection mask, constant w.r.t. the graph; 1/k folds the k-mean in
    mask = np.zeros((n_tokens, n_experts))
    np.put_along_axis(mask, decision.indices, 1.0 / top_k, axis=1)
    gated = T.mul(weights, T.Tensor(mask))

    combined = None
    for idx in range(n_experts):
        hidden = T.relu(T.add(T.matmul(tokens, params[f"moe.expert{idx}.w1"]),
                              params[f"moe.expert{idx}.b1"]))
        expert_out = T.add(T.matmul(hidden, params[f"moe.expert{idx}.w2"]),
                           params[f"moe.expert{idx}.b2"])
        scaled = T.row_scale(expert_out, T.slice_cols(gated, idx, idx + 1))
        combined = scaled if combined is None else T.add(combined, scaled)

    pooled = T.mean_rows(combined)
    if experts_emit_logits:
        logits = pooled
    else:
        logits = T.add(T.matmul(pooled, params["moe.head.w"]), params["moe.head.b"])
    if logits.values.shape != (1, n_classes):
        raise ContractViolation("moe output dimension does not match n_classes")
    if collect is not None:
        collect["routing"] = decision
    return logits


def routing_histogram(decisions: list[RoutingDecision], n_experts: int) -> np.ndarray:
    """Top-1 expert counts over all tokens of all decisions, length n_experts."""
    counts = np.zeros(n_experts, dtype=np.int64)
    for decision in decisions:
        counts += np.bincount(decision.top1, minlength=n_experts)
    return counts


def total_variation(hist_a: np.ndarray, hist_b: np.ndarray) -> float:
    """Total variation distance between two normalized histograms."""
    pa = hist_a / hist_a.sum() if hist_a.sum() else np.full(hist_a.size, 1.0 / hist_a.size)
    pb = hist_b / hist_b.sum() if hist_b.sum() else np.full(hist_b.size, 1.0 / hist_b.size)
    return float(0.5 * np.abs(pa - pb).sum())
