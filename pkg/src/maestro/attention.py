"""Budgeted sparse multi-head attention with sequence distillation.

Instead of scoring every query against every key, a uniform sample of keys
estimates how far each query's attention distribution is from uniform
(max minus mean of the scaled dot products). Only the top-scoring queries,
a budgeted u * ln(L) of them, receive full softmax attention; the rest fall
back to the mean of the values, which is exactly what uniform attention
would produce. The distil block then halves the sequence with a
convolution, ELU, and stride-2 max pooling plus a pooled skip path.
"""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from . import tensor as T
from .errors import ContractViolation


def sinusoidal_positions(length: int, d_model: int) -> np.ndarray:
    """Fixed positional code: sin on even channels, cos on odd, base 10000."""
    if length < 0 or d_model < 2:
        raise ContractViolation("positional code needs length >= 0 and d_model >= 2")
    pos = np.arange(length, dtype=np.float64)[:, None]
    idx = np.arange(0, d_model, 2, dtype=np.float64)
    div = np.power(10000.0, idx / d_model)
    pe = np.zeros((length, d_model))
    pe[:, 0::2] = np.sin(pos / div)
    pe[:, 1::2] = np.cos(pos / div[: d_model // 2])
    return pe


def budget_span(u: int, length: int) -> int:
    """min(ceil(u * ln(length)), length): sampled-key and kept-query count."""
    if length < 1:
        raise ContractViolation("sequence length must be positive")
    if u < 1:
        raise ContractViolation("attention budget must be at least 1")
    if length == 1:
        return 0
    return min(math.ceil(u * math.log(length)), length)


def sample_keys(length: int, u: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform sample of key indices without replacement, sorted ascending."""
    count = budget_span(u, length)
    idx = rng.choice(length, size=count, replace=False)
    idx.sort()
    return idx


def sparsity_scores(q: np.ndarray, k_sampled: np.ndarray) -> np.ndarray:
    """Per-query max-minus-mean of scaled dots against the sampled keys.

    Zero means the query is indistinguishable from uniform attention on the
    sample. The max always dominates the mean, so scores are nonnegative;
    the floating-point guard only trims sub-ulp negatives.
    """
    if k_sampled.ndim != 2 or q.ndim != 2 or q.shape[1] != k_sampled.shape[1]:
        raise ContractViolation("sparsity_scores expects q [L, dh], keys [m, dh]")
    if k_sampled.shape[0] < 1:
        raise ContractViolation("sparsity_scores needs at least one sampled key")
    dots = q @ k_sampled.T / math.sqrt(q.shape[1])
    return np.maximum(dots.max(axis=1) - dots.mean(axis=1), 0.0)


def select_queries(scores: np.ndarray, count: int) -> np.ndarray:
    """Indices of the top-count scores; ties keep the lower index."""
    order = np.argsort(-scores, kind="stable")[:count]
    order.sort()
    return order


def init_attention_params(d_model: int, rng: np.random.Generator,
                          prefix: str) -> dict[str, T.Tensor]:
    def glorot():
        s = np.sqrt(6.0 / (2 * d_model))
        return rng.uniform(-s, s, size=(d_model, d_model))

    params = {}
    for name in ("wq", "wk", "wv", "wo"):
        params[f"{prefix}.{name}"] = T.Tensor(glorot(), requires_grad=True)
    for name in ("bq", "bk", "bv", "bo"):
        params[f"{prefix}.{name}"] = T.Tensor(np.zeros(d_model), requires_grad=True)
    return params


def init_distil_params(d_model: int, rng: np.random.Generator,
                       prefix: str) -> dict[str, T.Tensor]:
    s = np.sqrt(6.0 / (3 * d_model + d_model))
    return {
        f"{prefix}.conv_w": T.Tensor(rng.uniform(-s, s, size=(3, d_model, d_model)),
                                     requires_grad=True),
        f"{prefix}.conv_b": T.Tensor(np.zeros(d_model), requires_grad=True),
    }


def sparse_mha(
    x: T.Tensor,
    params: dict,
    prefix: str,
    n_heads: int,
    budget: int,
    seed: Sequence[int] | int,
    training: bool = False,
    dropout: float = 0.0,
    dropout_rng: np.random.Generator | None = None,
    collect: dict | None = None,
) -> T.Tensor:
    """Multi-head attention where only the budgeted top queries attend.

    Key sampling and query selection are deterministic given (seed, head) and
    carry no gradient; the differentiable path runs through the selected
    queries' softmax attention and the mean-value fallback. When collect is a
    dict it receives "weights": the row-stochastic [L, L] map averaged over
    heads (non-selected rows are uniform, which is what mean-of-values
    attention realizes) and "selected": per-head index lists.
    """
    if x.values.ndim != 2:
        raise ContractViolation("sparse_mha expects x [L, d_model]")
    d_model = x.values.shape[1]
    if d_model % n_heads != 0:
        raise ContractViolation("d_model must be divisible by n_heads")
    L = x.values.shape[0]
    head_dim = d_model // n_heads
    seed_base = [int(seed)] if isinstance(seed, (int, np.integer)) else [int(s) for s in seed]

    q = T.add(T.matmul(x, params[f"{prefix}.wq"]), params[f"{prefix}.bq"])
    k = T.add(T.matmul(x, params[f"{prefix}.wk"]), params[f"{prefix}.bk"])
    v = T.add(T.matmul(x, params[f"{prefix}.wv"]), params[f"{prefix}.bv"])

    span = budget_span(budget, L)
    heads = []
    maps = []
    selected_all = []
    for h in range(n_heads):
        lo, hi = h * head_dim, (h + 1) * head_dim
        qh, kh, vh = (T.slice_cols(t, lo, hi) for t in (q, k, v))
        if span >= L:
            sel = np.arange(L)
        elif span == 0:
            sel = np.empty(0, dtype=np.int64)
        else:
            rng_h = np.random.default_rng(seed_base + [h])
            kidx = sample_keys(L, budget, rng_h)
            scores = sparsity_scores(qh.values, kh.values[kidx])
            sel = select_queries(scores, span)
        selected_all.append(sel)

        lazy = T.repeat_rows(T.mean_rows(vh), L)
        if sel.size == 0:
            head_out = lazy
            att_values = None
        else:
            qs = T.gather_rows(qh, sel)
            att = T.softmax(T.scale(T.matmul(qs, T.transpose(kh)),
                                    1.0 / math.sqrt(head_dim)), axis=-1)
            att_values = att.values
            if training and dropout > 0.0:
                if dropout_rng is None:
                    raise ContractViolation("training dropout needs a generator")
                att = T.mul(att, T.dropout_mask(att.values.shape, dropout, dropout_rng))
            ctx = T.matmul(att, vh)
            head_out = T.scatter_rows(lazy, sel, ctx)
        heads.append(head_out)

        if collect is not None:
            full = np.full((L, L), 1.0 / L)
            if att_values is not None:
                full[sel] = att_values
            maps.append(full)

    merged = heads[0] if n_heads == 1 else T.concat(heads, axis=1)
    out = T.add(T.matmul(merged, params[f"{prefix}.wo"]), params[f"{prefix}.bo"])
    if collect is not None:
        collect["weights"] = np.mean(maps, axis=0)
        collect["selected"] = selected_all
    return out


def distil_block(x: T.Tensor, skip: T.Tensor, params: dict, prefix: str) -> T.Tensor:
    """Halve the sequence: maxpool(ELU(conv(x))) plus maxpool(skip).

    x is the attended signal already carrying its residual; skip is the
    block input. Output length is ceil(L / 2).
    """
    if x.values.shape != skip.values.shape:
        raise ContractViolation("distil_block needs x and skip with equal shapes")
    conv = T.conv1d_same(x, params[f"{prefix}.conv_w"], params[f"{prefix}.conv_b"])
    return T.add(T.maxpool1d_half(T.elu(conv)), T.maxpool1d_half(skip))


# ---------------------------------------------------------------------------
# Analytic multiply-accumulate counts. These mirror the execution rules above
# (same ceil/min arithmetic) so measured scaling claims are reproducible.
# ---------------------------------------------------------------------------


def sparse_attention_macs(L: int, d_model: int, n_heads: int, u: int) -> dict[str, int]:
    head_dim = d_model // n_heads
    span = budget_span(u, L)
    qkv = 3 * L * d_model * d_model
    sampling = n_heads * L * span * head_dim
    scores = n_heads * span * L * head_dim
    context = n_heads * span * L * head_dim
    out_proj = L * d_model * d_model
    attention = sampling + scores + context
    return {
        "qkv_proj": qkv,
        "sampling_scores": sampling,
        "selected_scores": scores,
        "context": context,
        "out_proj": out_proj,
        "attention": attention,
        "total": qkv + attention + out_proj,
    }


def dense_attention_macs(L: int, d_model: int) -> dict[str, int]:
    qkv = 3 * L * d_model * d_model
    scores = L * L * d_model
    context = L * L * d_model
    out_proj = L * d_model * d_model
    return {
        "qkv_proj": qkv,
        "scores": scores,
        "context": context,
        "out_proj": out_proj,
        "attention": scores + context,
        "total": qkv + scores + context + out_proj,
    }
