"""Availability-conditioned attention budget.

A small MLP reads the modality-availability mask and emits one integer
budget per modality, bounded to [1, beta_max]. Missing modalities are
represented by a small epsilon instead of a hard zero so the gate still
receives a signal for them. The floor that quantizes the budget is a
straight-through op: its forward value is integral, its gradient is that of
the pre-floor sigmoid path.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .errors import ContractViolation


def init_gate_params(n_modalities: int, hidden: int, rng: np.random.Generator,
                     prefix: str = "gate") -> dict[str, T.Tensor]:
    def glorot(fan_in, fan_out):
        s = np.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-s, s, size=(fan_in, fan_out))

    return {
        f"{prefix}.w1": T.Tensor(glorot(n_modalities, hidden), requires_grad=True),
        f"{prefix}.b1": T.Tensor(np.zeros(hidden), requires_grad=True),
        f"{prefix}.w2": T.Tensor(glorot(hidden, n_modalities), requires_grad=True),
        f"{prefix}.b2": T.Tensor(np.zeros(n_modalities), requires_grad=True),
    }


def _gate_input(mask: np.ndarray, eps: float) -> T.Tensor:
    mask = np.asarray(mask, dtype=np.float64).reshape(1, -1)
    if ((mask != 0.0) & (mask != 1.0)).any():
        raise ContractViolation("availability mask must be binary")
    return T.Tensor(mask + eps * (1.0 - mask))


def pre_floor_budget(params: dict, mask: np.ndarray, eps: float, beta_max: int,
                     prefix: str = "gate") -> T.Tensor:
    """Continuous budget sigmoid(G(m + eps(1-m))) * beta_max, shape [1, M]."""
    x = _gate_input(mask, eps)
    h = T.relu(T.add(T.matmul(x, params[f"{prefix}.w1"]), params[f"{prefix}.b1"]))
    o = T.sigmoid(T.add(T.matmul(h, params[f"{prefix}.w2"]), params[f"{prefix}.b2"]))
    return T.scale(o, float(beta_max))


def budget_path(params: dict, mask: np.ndarray, eps: float, beta_max: int,
                prefix: str = "gate") -> T.Tensor:
    """Quantized budget clamp(floor(pre), 1, beta_max) with straight-through
    gradients, shape [1, M]."""
    return T.clamp(T.floor_ste(pre_floor_budget(params, mask, eps, beta_max, prefix)),
                   1.0, float(beta_max))


def compute_budgets(params: dict, mask: np.ndarray, eps: float, beta_max: int,
                    prefix: str = "gate") -> np.ndarray:
    """Integer budget per modality as plain numpy, for use as counts."""
    u = budget_path(params, mask, eps, beta_max, prefix)
    return u.values.reshape(-1).astype(np.int64)
