"""Full pipeline model: symbol embedding per modality, budgeted attention
encoders, cross-modal fusion, expert mixture classifier.

The model is a flat named-parameter dict in a fixed order (per-modality
encoders, budget gate, fusion, experts) so optimizers, checkpoints, and
gradient checks all walk the same list. Randomized choices (key sampling)
are seeded from the model seed plus structural indices only, never from the
data or the sample index, so the features a modality produces depend on
nothing but that modality's own input.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, dataclass

import numpy as np

from . import attention as A
from . import encoder as E
from . import fusion as F
from . import gate as G
from . import moe as X
from . import sax as S
from . import tensor as T
from .data import ModalityInfo
from .errors import ConfigError, ContractViolation, DataError

_CKPT_MAGIC = b"MCKP"
_CKPT_VERSION = 1

# salts keep the init stream, encoder sampling, and fusion sampling disjoint
_SALT_INIT = 5
_SALT_ENCODER = 11
_SALT_FUSION = 13


@dataclass
class ModelConfig:
    alpha: int = 20
    word_length: int = 2          # raw points per segment; W = ceil(T / word_length)
    d_model: int = 64
    n_heads: int = 4
    n_layers: int = 1
    dropout: float = 0.05
    gate_hidden: int = 16
    beta_max: int = 5
    gate_eps: float = 0.01
    fusion_budget: int = 1
    n_experts: int = 4
    top_k: int = 1
    d_ff: int | None = None
    experts_emit_logits: bool = False
    use_sax: bool = True
    use_modality_embedding: bool = True
    use_adaptive_budget: bool = True
    fixed_budget: int = 1

    def __post_init__(self):
        if self.d_ff is None:
            self.d_ff = 4 * self.d_model
        if self.alpha < 2:
            raise ConfigError("alpha must be at least 2")
        if self.word_length < 1:
            raise ConfigError("word_length must be positive")
        if self.d_model < 1 or self.d_model % self.n_heads != 0:
            raise ConfigError("d_model must be a positive multiple of n_heads")
        if self.n_layers < 1:
            raise ConfigError("n_layers must be at least 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must lie in [0, 1)")
        if self.beta_max < 1 or self.fusion_budget < 1 or self.fixed_budget < 1:
            raise ConfigError("budgets must be at least 1")
        if not 1 <= self.top_k <= self.n_experts:
            raise ConfigError("top_k must lie in [1, n_experts]")


class Model:
    """Classifier over multimodal symbol grids."""

    def __init__(self, config: ModelConfig, modalities: list[ModalityInfo],
                 n_classes: int, seed: int):
        if n_classes < 2:
            raise ConfigError("need at least two classes")
        if not modalities:
            raise ConfigError("need at least one modality")
        self.config = config
        self.modalities = list(modalities)
        self.n_classes = n_classes
        self.seed = int(seed)
        self.codec = S.SymbolCodec.from_alphabet(config.alpha)
        self.n_segments = {}
        for info in self.modalities:
            w = math.ceil(info.length / config.word_length)
            if w < 1:
                raise ConfigError(f"modality '{info.name}' too short to segment")
            self.n_segments[info.name] = w
        self.params = self._init_params()

    # -- construction -----------------------------------------------------

    def _init_params(self) -> dict[str, T.Tensor]:
        cfg = self.config
        rng = np.random.default_rng([self.seed, _SALT_INIT])
        params: dict[str, T.Tensor] = {}
        for info in self.modalities:
            prefix = f"enc.{info.name}"
            if cfg.use_sax:
                params.update(E.init_encoder_params(
                    cfg.alpha + 1, cfg.d_model, cfg.n_layers, rng, prefix))
            else:
                params.update(E.init_value_proj_params(
                    info.variates, cfg.d_model, rng, prefix))
                for layer in range(cfg.n_layers):
                    params.update(A.init_attention_params(cfg.d_model, rng, f"{prefix}.l{layer}"))
                    params.update(A.init_distil_params(cfg.d_model, rng, f"{prefix}.l{layer}"))
        if cfg.use_adaptive_budget:
            params.update(G.init_gate_params(len(self.modalities), cfg.gate_hidden, rng))
        params.update(F.init_fusion_params(len(self.modalities), cfg.d_model, rng))
        params.update(X.init_moe_params(cfg.d_model, cfg.d_ff, cfg.n_experts,
                                        self.n_classes, cfg.experts_emit_logits, rng))
        return params

    # -- input preparation --------------------------------------------------

    def prepare(self, arrays: dict[str, np.ndarray | None]) -> dict[str, np.ndarray]:
        """Raw per-modality series -> per-modality model inputs.

        With symbolization on, each modality becomes a [D, W] symbol grid
        (missing modality: the all-missing grid). Ablated, it becomes the
        [D, W] grid of normalized segment means (missing: zeros).
        """
        out = {}
        for info in self.modalities:
            w = self.n_segments[info.name]
            array = arrays.get(info.name)
            if self.config.use_sax:
                if array is None:
                    out[info.name] = S.missing_tokens(info.variates, w)
                else:
                    self._check_shape(info, array)
                    out[info.name] = S.tokenize(array, w, self.codec)
            else:
                if array is None:
                    out[info.name] = np.zeros((info.variates, w))
                else:
                    self._check_shape(info, array)
                    normalized = S.znormalize(np.asarray(array, dtype=np.float64))
                    out[info.name] = np.stack(
                        [S.paa(normalized[d], w) for d in range(info.variates)])
        return out

    @staticmethod
    def _check_shape(info: ModalityInfo, array: np.ndarray) -> None:
        array = np.asarray(array)
        if array.shape != (info.variates, info.length):
            raise DataError(
                f"modality '{info.name}': expected shape "
                f"{(info.variates, info.length)}, got {array.shape}")

    def availability(self, arrays: dict[str, np.ndarray | None]) -> np.ndarray:
        return np.array([arrays.get(m.name) is not None for m in self.modalities],
                        dtype=np.int64)

    # -- forward ------------------------------------------------------------

    def budgets(self, mask: np.ndarray) -> np.ndarray:
        cfg = self.config
        if cfg.use_adaptive_budget:
            return G.compute_budgets(self.params, mask, cfg.gate_eps, cfg.beta_max)
        return np.full(len(self.modalities), cfg.fixed_budget, dtype=np.int64)

    def _encoder_seed(self, index: int, training: bool, epoch: int) -> list[int]:
        base = [self.seed, _SALT_ENCODER, index]
        return base + [epoch] if training else base

    def _fusion_seed(self, training: bool, epoch: int) -> list[int]:
        base = [self.seed, _SALT_FUSION]
        return base + [epoch] if training else base

    def forward(self, inputs: dict[str, np.ndarray], mask: np.ndarray,
                training: bool = False, epoch: int = 0,
                dropout_rng: np.random.Generator | None = None,
                collect: dict | None = None) -> T.Tensor:
        """Per-modality inputs plus availability mask -> logits [1, C]."""
        cfg = self.config
        mask = np.asarray(mask, dtype=np.int64).reshape(-1)
        if mask.size != len(self.modalities):
            raise ContractViolation("mask length does not match modality count")
        budgets = self.budgets(mask)
        if collect is not None:
            collect["budgets"] = budgets.copy()

        features = []
        for j, info in enumerate(self.modalities):
            grid = inputs[info.name]
            prefix = f"enc.{info.name}"
            if cfg.use_sax:
                tokens = E.embed_tokens(self.params, prefix, grid)
            else:
                tokens = E.embed_values(self.params, prefix, grid)
            mod_collect = None
            if collect is not None:
                mod_collect = collect.setdefault("encoders", {}).setdefault(info.name, {})
            z = E.encode_modality(
                tokens, self.params, prefix, cfg.n_heads, cfg.n_layers,
                int(budgets[j]), self._encoder_seed(j, training, epoch),
                training=training, dropout=cfg.dropout, dropout_rng=dropout_rng,
                collect=mod_collect)
            features.append((info.name, z))

        fused, boundaries = F.build_sequence(
            features, self.params,
            include_modality_embedding=cfg.use_modality_embedding)
        fusion_collect = None
        if collect is not None:
            collect["boundaries"] = boundaries
            fusion_collect = collect.setdefault("fusion", {})
        mixed = F.cross_modal_attend(
            fused, self.params, cfg.n_heads, cfg.fusion_budget,
            self._fusion_seed(training, epoch), training=training,
            dropout=cfg.dropout, dropout_rng=dropout_rng, collect=fusion_collect)
        return X.moe_forward(mixed, self.params, cfg.n_experts, cfg.top_k,
                             self.n_classes, cfg.experts_emit_logits,
                             collect=collect)

    def loss(self, inputs: dict[str, np.ndarray], mask: np.ndarray, label: int,
             training: bool = False, epoch: int = 0,
             dropout_rng: np.random.Generator | None = None) -> T.Tensor:
        return T.cross_entropy(self.forward(inputs, mask, training, epoch,
                                            dropout_rng), label)

    def batch_loss(self, batch: list[tuple[dict, np.ndarray, int]],
                   training: bool = False, epoch: int = 0,
                   dropout_rng: np.random.Generator | None = None) -> T.Tensor:
        """Mean cross-entropy over (inputs, mask, label) triples."""
        if not batch:
            raise ContractViolation("empty batch")
        losses = [self.loss(inputs, mask, label, training, epoch, dropout_rng)
                  for inputs, mask, label in batch]
        return T.scale(T.add_n(losses), 1.0 / len(losses))

    def predict(self, inputs: dict[str, np.ndarray], mask: np.ndarray,
                collect: dict | None = None) -> int:
        logits = self.forward(inputs, mask, collect=collect)
        return int(np.argmax(logits.values[0])) + 1

    def parameter_names(self) -> list[str]:
        return list(self.params)

    # -- checkpointing --------------------------------------------------------

    def save(self, path, meta: dict | None = None) -> None:
        """Binary checkpoint: magic, header length, JSON header, fp64 blob.

        The header pins config, modality table, class count, seed, and the
        exact parameter order; identical models write identical bytes.
        """
        header = {
            "format": _CKPT_VERSION,
            "config": asdict(self.config),
            "modalities": [vars(m) for m in self.modalities],
            "n_classes": self.n_classes,
            "seed": self.seed,
            "meta": meta or {},
            "params": [{"name": name, "shape": list(t.values.shape)}
                       for name, t in self.params.items()],
        }
        blob = json.dumps(header, sort_keys=True).encode("utf-8")
        with open(path, "wb") as fh:
            fh.write(_CKPT_MAGIC)
            fh.write(struct.pack("<I", len(blob)))
            fh.write(blob)
            for t in self.params.values():
                fh.write(t.values.astype("<f8").tobytes(order="C"))

    @classmethod
    def load(cls, path) -> tuple["Model", dict]:
        with open(path, "rb") as fh:
            magic = fh.read(4)
            if magic != _CKPT_MAGIC:
                raise DataError(f"not a checkpoint: {path}")
            (hlen,) = struct.unpack("<I", fh.read(4))
            try:
                header = json.loads(fh.read(hlen).decode("utf-8"))
            except (UnicodeDecodeError, json.JSONDecodeError) as exc:
                raise DataError(f"corrupt checkpoint header in {path}") from exc
            if header.get("format") != _CKPT_VERSION:
                raise DataError(f"unsupported checkpoint format in {path}")
            modalities = [ModalityInfo(**m) for m in header["modalities"]]
            model = cls(ModelConfig(**header["config"]), modalities,
                        int(header["n_classes"]), int(header["seed"]))
            listed = [(p["name"], tuple(p["shape"])) for p in header["params"]]
            built = [(name, t.values.shape) for name, t in model.params.items()]
            if listed != built:
                raise DataError("checkpoint parameter table does not match model")
            for name, shape in listed:
                n_bytes = 8 * int(np.prod(shape, dtype=np.int64)) if shape else 8
                raw = fh.read(n_bytes)
                if len(raw) != n_bytes:
                    raise DataError(f"truncated checkpoint blob in {path}")
                model.params[name].values = np.frombuffer(
                    raw, dtype="<f8").astype(np.float64).reshape(shape)
            if fh.read(1):
                raise DataError(f"trailing bytes in checkpoint {path}")
        return model, header["meta"]


def model_gradient_check(model: Model, batch: list[tuple[dict, np.ndarray, int]],
                         h: float = 1e-5) -> dict[str, float]:
    """Analytic-vs-numerical gradient agreement per named parameter.

    Runs the whole pipeline (eval mode, so no dropout) and returns the worst
    relative mismatch for every parameter tensor.
    """
    report = {}
    for name in model.parameter_names():
        original = model.params[name]

        def build(candidate: T.Tensor, _name=name, _orig=original) -> T.Tensor:
            model.params[_name] = candidate
            try:
                return model.batch_loss(batch, training=False)
            finally:
                model.params[_name] = _orig

        probe = T.Tensor(original.values.copy(), requires_grad=True)
        report[name] = T.finite_diff_check(build, probe, h)
    return report
