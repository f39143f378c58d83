"""Curriculum training: linear modality-dropout ramp, Adam, early stopping.

The curriculum starts on modality-complete samples and ramps the per-modality
drop probability linearly after a warmup, so the model first learns the full
fusion pathway and then how to survive without parts of it. Validation is
always evaluated clean (no dropout) and the kept checkpoint is the one with
minimum validation loss.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ConfigError, ContractViolation, NumericFault
from .model import Model

# seed salts for the independent training streams
_SALT_SHUFFLE = 17
_SALT_DROPOUT = 19
_SALT_ATTENTION_DROP = 23


@dataclass(frozen=True)
class CurriculumSchedule:
    p_max: float = 0.4
    warmup: int = 10      # epochs with no dropout at all
    horizon: int = 100    # epoch at which p reaches p_max

    def __post_init__(self):
        if not 0.0 <= self.p_max <= 1.0:
            raise ConfigError("p_max must lie in [0, 1]")
        if not 0 <= self.warmup < self.horizon:
            raise ConfigError("need 0 <= warmup < horizon")

    def rate(self, epoch: int) -> float:
        if epoch < 0:
            raise ContractViolation("epoch must be nonnegative")
        if epoch < self.warmup:
            return 0.0
        return min(self.p_max,
                   (epoch - self.warmup) / (self.horizon - self.warmup) * self.p_max)


@dataclass(frozen=True)
class TrainConfig:
    max_epochs: int = 100
    batch_size: int = 32
    learning_rate: float = 1e-3
    clip_norm: float = 5.0
    patience: int = 20
    seed: int = 2711

    def __post_init__(self):
        # lr 0 is the degenerate no-op optimizer; positive rates keep the
        # supported range
        if self.learning_rate != 0.0 and not 1e-5 <= self.learning_rate <= 1e-3:
            raise ConfigError("learning_rate must lie in [1e-5, 1e-3] (or be 0)")
        if not 1 <= self.max_epochs <= 150:
            raise ConfigError("max_epochs must lie in [1, 150]")
        if self.batch_size < 1 or self.patience < 1:
            raise ConfigError("batch_size and patience must be positive")
        if self.clip_norm <= 0:
            raise ConfigError("clip_norm must be positive")


def apply_modality_dropout(inputs: dict[str, np.ndarray], mask: np.ndarray,
                           p: float, rng: np.random.Generator,
                           blanks: dict[str, np.ndarray]):
    """Drop each present modality independently with probability p.

    A dropped modality gets its blank grid (all-missing symbols) and a
    cleared mask bit. At least one modality always survives: if every
    present one was dropped, a uniformly chosen original survivor returns.
    """
    if not 0.0 <= p <= 1.0:
        raise ContractViolation("dropout probability must lie in [0, 1]")
    mask = np.asarray(mask, dtype=np.int64)
    if p == 0.0 or mask.sum() == 0:
        return inputs, mask
    draws = rng.random(mask.size)
    keep = mask.astype(bool) & (draws >= p)
    if not keep.any():
        present = np.flatnonzero(mask)
        keep[rng.choice(present)] = True
    new_mask = keep.astype(np.int64)
    names = list(inputs)
    new_inputs = {name: (inputs[name] if keep[j] else blanks[name])
                  for j, name in enumerate(names)}
    return new_inputs, new_mask


def blank_grids(model: Model) -> dict[str, np.ndarray]:
    """Per-modality all-missing input grids, matching the model's input mode."""
    return model.prepare({info.name: None for info in model.modalities})


class Adam:
    """Adam with bias correction; parameters without gradients are skipped,
    so unused branches stay bit-identical."""

    def __init__(self, params: dict[str, T.Tensor], lr: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.step_count = 0
        self.m = {name: np.zeros_like(p.values) for name, p in params.items()}
        self.v = {name: np.zeros_like(p.values) for name, p in params.items()}

    def step(self) -> None:
        self.step_count += 1
        b1t = 1.0 - self.beta1 ** self.step_count
        b2t = 1.0 - self.beta2 ** self.step_count
        for name, p in self.params.items():
            if p.grad is None:
                continue
            g = p.grad
            self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * g * g
            m_hat = self.m[name] / b1t
            v_hat = self.v[name] / b2t
            p.values = p.values - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def zero(self) -> None:
        T.zero_grad(self.params.values())


def clip_global_norm(params: dict[str, T.Tensor], max_norm: float) -> float:
    """Scale all gradients so their joint L2 norm is at most max_norm."""
    total = 0.0
    for p in params.values():
        if p.grad is not None:
            total += float(np.sum(p.grad * p.grad))
    norm = float(np.sqrt(total))
    if norm > max_norm and norm > 0.0:
        factor = max_norm / norm
        for p in params.values():
            if p.grad is not None:
                p.grad = p.grad * factor
    return norm


def prepare_samples(model: Model, dataset) -> list[tuple[dict, np.ndarray, int]]:
    """Tokenize every sample once: (inputs, availability mask, label)."""
    return [(model.prepare(s.arrays),
             np.array([s.arrays.get(m.name) is not None for m in model.modalities],
                      dtype=np.int64),
             s.label)
            for s in dataset.samples]


def evaluate(model: Model, prepared: list[tuple[dict, np.ndarray, int]]):
    """Clean evaluation: (mean loss, accuracy, predictions)."""
    if not prepared:
        raise ContractViolation("nothing to evaluate")
    losses = []
    preds = []
    for inputs, mask, label in prepared:
        logits = model.forward(inputs, mask)
        losses.append(T.cross_entropy(logits, label).item())
        preds.append(int(np.argmax(logits.values[0])) + 1)
    labels = [label for _, _, label in prepared]
    acc = float(np.mean([p == y for p, y in zip(preds, labels)]))
    return float(np.mean(losses)), acc, preds


@dataclass
class TrainResult:
    history: list[dict] = field(default_factory=list)
    best_epoch: int = -1
    best_val_loss: float = float("inf")
    best_val_acc: float = 0.0
    stopped_early: bool = False


def _param_norm_table(params: dict[str, T.Tensor]) -> str:
    worst = sorted(((float(np.abs(p.values).max()), name)
                    for name, p in params.items()), reverse=True)[:5]
    return ", ".join(f"{name}=|{mx:.3e}|" for mx, name in worst)


def train(model: Model, train_set, val_set, cfg: TrainConfig,
          schedule: CurriculumSchedule | None = None,
          log=None) -> TrainResult:
    """Run the curriculum loop; the model ends holding the best-validation
    parameters. train_set and val_set are datasets or prepared sample lists."""
    schedule = schedule or CurriculumSchedule()
    train_prepared = (train_set if isinstance(train_set, list)
                      else prepare_samples(model, train_set))
    val_prepared = (val_set if isinstance(val_set, list)
                    else prepare_samples(model, val_set))
    if not train_prepared or not val_prepared:
        raise ContractViolation("empty training or validation set")

    blanks = blank_grids(model)
    optimizer = Adam(model.params, cfg.learning_rate)
    result = TrainResult()
    best_params: dict[str, np.ndarray] = {}

    for epoch in range(cfg.max_epochs):
        rate = schedule.rate(epoch)
        order = np.random.default_rng(
            [cfg.seed, _SALT_SHUFFLE, epoch]).permutation(len(train_prepared))
        attn_rng = np.random.default_rng([cfg.seed, _SALT_ATTENTION_DROP, epoch])

        epoch_losses = []
        for start in range(0, len(order), cfg.batch_size):
            chunk = order[start:start + cfg.batch_size]
            batch = []
            for i in chunk:
                inputs, mask, label = train_prepared[i]
                rng = np.random.default_rng([cfg.seed, _SALT_DROPOUT, epoch, int(i)])
                d_inputs, d_mask = apply_modality_dropout(inputs, mask, rate,
                                                          rng, blanks)
                batch.append((d_inputs, d_mask, label))
            with T.Tape() as tape:
                loss = model.batch_loss(batch, training=True, epoch=epoch,
                                        dropout_rng=attn_rng)
            loss_value = loss.item()
            if not np.isfinite(loss_value):
                raise NumericFault(
                    f"non-finite training loss at epoch {epoch}, batch "
                    f"{start // cfg.batch_size}; largest parameters: "
                    f"{_param_norm_table(model.params)}")
            T.backward(tape, loss)
            clip_global_norm(model.params, cfg.clip_norm)
            optimizer.step()
            optimizer.zero()
            epoch_losses.append(loss_value)

        val_loss, val_acc, _ = evaluate(model, val_prepared)
        entry = {"epoch": epoch, "dropout_rate": rate,
                 "train_loss": float(np.mean(epoch_losses)),
                 "val_loss": val_loss, "val_acc": val_acc}
        result.history.append(entry)
        if log is not None:
            log(entry)

        if val_loss < result.best_val_loss:
            result.best_val_loss = val_loss
            result.best_val_acc = val_acc
            result.best_epoch = epoch
            best_params = {name: p.values.copy()
                           for name, p in model.params.items()}
        elif epoch - result.best_epoch >= cfg.patience:
            result.stopped_early = True
            break

    for name, values in best_params.items():
        model.params[name].values = values
    return result
