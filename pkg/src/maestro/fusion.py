"""Cross-modal fusion: concatenate per-modality features along time and let
one budgeted attention stage mix them.

Every modality segment is offset by a learned modality embedding (one row
per modality) and a locally restarted positional code, so tokens carry
"which modality, which position" even after concatenation. Segment
boundaries are static: a missing modality still occupies its slots via the
missing-symbol features, which keeps the fused length constant across
availability patterns.
"""

from __future__ import annotations

import csv

import numpy as np

from . import attention as A
from . import tensor as T
from .errors import ContractViolation


def init_fusion_params(n_modalities: int, d_model: int,
                       rng: np.random.Generator) -> dict[str, T.Tensor]:
    params = {
        "fusion.me": T.Tensor(rng.normal(0.0, 0.1, size=(n_modalities, d_model)),
                              requires_grad=True),
    }
    params.update(A.init_attention_params(d_model, rng, "fusion"))
    params.update(A.init_distil_params(d_model, rng, "fusion"))
    return params


def build_sequence(
    features: list[tuple[str, T.Tensor]],
    params: dict,
    include_modality_embedding: bool = True,
    include_positions: bool = True,
) -> tuple[T.Tensor, list[tuple[str, int, int]]]:
    """Concatenate per-modality features in manifest order.

    Returns the fused sequence [sum L_j, d] and (name, start, stop) segment
    boundaries. Positions restart at 0 inside each segment.
    """
    if not features:
        raise ContractViolation("build_sequence needs at least one modality")
    segments = []
    boundaries = []
    offset = 0
    for j, (name, z) in enumerate(features):
        if z.values.ndim != 2:
            raise ContractViolation("modality features must be [L, d]")
        length, d_model = z.values.shape
        part = z
        if include_modality_embedding:
            row = T.gather_rows(params["fusion.me"], np.array([j]))
            part = T.add(part, T.repeat_rows(row, length))
        if include_positions:
            part = T.add(part, T.Tensor(A.sinusoidal_positions(length, d_model)))
        segments.append(part)
        boundaries.append((name, offset, offset + length))
        offset += length
    fused = segments[0] if len(segments) == 1 else T.concat(segments, axis=0)
    return fused, boundaries


def cross_modal_attend(
    fused: T.Tensor,
    params: dict,
    n_heads: int,
    budget: int,
    seed: list[int],
    training: bool = False,
    dropout: float = 0.0,
    dropout_rng: np.random.Generator | None = None,
    collect: dict | None = None,
) -> T.Tensor:
    """One budgeted attention stage over the fused sequence, then distil.

    Output length is ceil(L / 2) where L is the fused length.
    """
    attended = A.sparse_mha(
        fused, params, "fusion", n_heads, budget, seed=seed,
        training=training, dropout=dropout, dropout_rng=dropout_rng,
        collect=collect)
    residual = T.add(attended, fused)
    return A.distil_block(residual, fused, params, "fusion")


def export_attention_map(weights: np.ndarray, boundaries: list[tuple[str, int, int]],
                         path) -> None:
    """Write an attention map as CSV whose header row labels each key column
    with its modality id. Rows are queries and sum to 1."""
    length = weights.shape[0]
    if weights.shape != (length, length):
        raise ContractViolation("attention map must be square")
    if boundaries[-1][2] != length:
        raise ContractViolation("boundaries do not cover the map")
    header = []
    for name, start, stop in boundaries:
        header.extend([name] * (stop - start))
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in weights:
            writer.writerow([f"{val:.10g}" for val in row])


def segment_masses(weights: np.ndarray,
                   boundaries: list[tuple[str, int, int]]) -> dict[tuple[str, str], float]:
    """Mean attention mass flowing from each query segment to each key
    segment; masses over key segments sum to 1 per query segment."""
    masses = {}
    for qname, qs, qe in boundaries:
        block = weights[qs:qe]
        for kname, ks, ke in boundaries:
            masses[(qname, kname)] = float(block[:, ks:ke].sum(axis=1).mean())
    return masses
