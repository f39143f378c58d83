"""Per-modality encoder: symbol embedding, positional code, budgeted
attention, and sequence distillation.

Each modality owns one embedding table of alpha + 1 rows; row 0 is the
learnable representation of "missing". Variates are embedded through the
shared table and summed per token, so a modality with D variates still
yields one token per segment. A fully missing modality therefore produces a
deterministic, trainable token sequence instead of disappearing.
"""

from __future__ import annotations

import numpy as np

from . import attention as A
from . import tensor as T
from .errors import ContractViolation


def encoded_length(n_segments: int, n_layers: int) -> int:
    """Sequence length after n_layers of halving: ceil(W / 2^N)."""
    length = n_segments
    for _ in range(n_layers):
        length = (length + 1) // 2
    return length


def init_encoder_params(n_symbols: int, d_model: int, n_layers: int,
                        rng: np.random.Generator, prefix: str) -> dict[str, T.Tensor]:
    params = {
        f"{prefix}.embed": T.Tensor(rng.normal(0.0, 0.1, size=(n_symbols, d_model)),
                                    requires_grad=True),
    }
    for layer in range(n_layers):
        params.update(A.init_attention_params(d_model, rng, f"{prefix}.l{layer}"))
        params.update(A.init_distil_params(d_model, rng, f"{prefix}.l{layer}"))
    return params


def init_value_proj_params(n_variates: int, d_model: int,
                           rng: np.random.Generator, prefix: str) -> dict[str, T.Tensor]:
    """Continuous input path used when symbolization is ablated."""
    s = np.sqrt(6.0 / (n_variates + d_model))
    return {
        f"{prefix}.value_w": T.Tensor(rng.uniform(-s, s, size=(n_variates, d_model)),
                                      requires_grad=True),
        f"{prefix}.value_b": T.Tensor(np.zeros(d_model), requires_grad=True),
    }


def embed_tokens(params: dict, prefix: str, symbols: np.ndarray) -> T.Tensor:
    """Sum of per-variate symbol embeddings: [D, W] ids -> [W, d_model]."""
    return T.embedding_sum(params[f"{prefix}.embed"], symbols)


def embed_values(params: dict, prefix: str, paa_values: np.ndarray) -> T.Tensor:
    """Linear projection of segment means: [D, W] values -> [W, d_model]."""
    vals = np.asarray(paa_values, dtype=np.float64)
    if vals.ndim != 2:
        raise ContractViolation("embed_values expects [D, W] segment means")
    return T.add(T.matmul(T.Tensor(vals.T), params[f"{prefix}.value_w"]),
                 params[f"{prefix}.value_b"])


def encode_modality(
    tokens: T.Tensor,
    params: dict,
    prefix: str,
    n_heads: int,
    n_layers: int,
    budget: int,
    seed: list[int],
    training: bool = False,
    dropout: float = 0.0,
    dropout_rng: np.random.Generator | None = None,
    collect: dict | None = None,
) -> T.Tensor:
    """Token features [W, d] -> modality features [ceil(W / 2^N), d].

    Per layer: attend with the modality's budget, add the skip, distil.
    The positional code is added once, before the first layer.
    """
    if tokens.values.ndim != 2:
        raise ContractViolation("encode_modality expects [W, d_model] tokens")
    w, d_model = tokens.values.shape
    x = T.add(tokens, T.Tensor(A.sinusoidal_positions(w, d_model)))
    for layer in range(n_layers):
        layer_collect = None if collect is None else collect.setdefault(f"layer{layer}", {})
        attended = A.sparse_mha(
            x, params, f"{prefix}.l{layer}", n_heads, budget,
            seed=seed + [layer], training=training, dropout=dropout,
            dropout_rng=dropout_rng, collect=layer_collect)
        residual = T.add(attended, x)
        x = A.distil_block(residual, x, params, f"{prefix}.l{layer}")
    return x
