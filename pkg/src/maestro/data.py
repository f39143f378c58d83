"""Multimodal datasets: manifest plus binary series files, synthetic
generators, corruption models, and stratified splitting.

A dataset is a JSON manifest describing modalities (name, rate, variate
count, length) and samples (id, 1-based label, per-modality file paths where
null means missing), next to little-endian float32 binaries with a 16-byte
header. Synthetic modes cover three regimes: a single informative modality,
label signal split across two modalities so neither is informative alone
(xor-cross), and the same signal repeated in every informative modality
(redundant). Every mode keeps one designated pure-noise modality, and
signals live in the shape of the series rather than its level so that
per-sample normalization cannot erase them.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ContractViolation, DataError

_MMTS_MAGIC = b"MMTS"
_MMTS_HEADER = struct.Struct("<4sIII")  # magic, variates, length, reserved


@dataclass(frozen=True)
class ModalityInfo:
    name: str
    hz: float
    variates: int
    length: int


@dataclass
class SampleRecord:
    sample_id: str
    label: int
    arrays: dict[str, np.ndarray | None]


@dataclass
class Dataset:
    modalities: list[ModalityInfo]
    n_classes: int
    samples: list[SampleRecord] = field(default_factory=list)

    @property
    def modality_names(self) -> list[str]:
        return [m.name for m in self.modalities]

    def availability(self, sample: SampleRecord) -> np.ndarray:
        return np.array([sample.arrays.get(m.name) is not None
                         for m in self.modalities], dtype=np.int64)

    def subset(self, indices) -> "Dataset":
        return Dataset(self.modalities, self.n_classes,
                       [self.samples[i] for i in indices])

    def labels(self) -> np.ndarray:
        return np.array([s.label for s in self.samples], dtype=np.int64)


def write_series(path, array: np.ndarray) -> None:
    array = np.atleast_2d(np.asarray(array, dtype=np.float64))
    d, t = array.shape
    with open(path, "wb") as fh:
        fh.write(_MMTS_HEADER.pack(_MMTS_MAGIC, d, t, 0))
        fh.write(array.astype("<f4").tobytes(order="C"))


def read_series(path) -> np.ndarray:
    with open(path, "rb") as fh:
        head = fh.read(_MMTS_HEADER.size)
        if len(head) != _MMTS_HEADER.size:
            raise DataError(f"truncated series header: {path}")
        magic, d, t, _ = _MMTS_HEADER.unpack(head)
        if magic != _MMTS_MAGIC:
            raise DataError(f"bad series magic in {path}")
        payload = fh.read(4 * d * t)
        if len(payload) != 4 * d * t:
            raise DataError(f"truncated series payload in {path}")
    return np.frombuffer(payload, dtype="<f4").astype(np.float64).reshape(d, t)


def save_dataset(dataset: Dataset, out_dir) -> Path:
    """Write manifest.json plus one binary per present (sample, modality)."""
    out_dir = Path(out_dir)
    data_dir = out_dir / "data"
    data_dir.mkdir(parents=True, exist_ok=True)
    manifest: dict = {
        "modalities": [vars(m) for m in dataset.modalities],
        "classes": dataset.n_classes,
        "samples": [],
    }
    for sample in dataset.samples:
        paths = {}
        for info in dataset.modalities:
            array = sample.arrays.get(info.name)
            if array is None:
                paths[info.name] = None
            else:
                rel = f"data/{sample.sample_id}__{info.name}.mmts"
                write_series(out_dir / rel, array)
                paths[info.name] = rel
        manifest["samples"].append(
            {"id": sample.sample_id, "label": sample.label, "paths": paths})
    manifest_path = out_dir / "manifest.json"
    manifest_path.write_text(json.dumps(manifest, indent=1, sort_keys=True))
    return manifest_path


def load_dataset(manifest_path) -> Dataset:
    """Load and validate a dataset; errors name the offending sample."""
    manifest_path = Path(manifest_path)
    try:
        manifest = json.loads(manifest_path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read manifest {manifest_path}: {exc}") from exc

    for key in ("modalities", "classes", "samples"):
        if key not in manifest:
            raise DataError(f"manifest missing '{key}'")
    modalities = []
    for entry in manifest["modalities"]:
        try:
            modalities.append(ModalityInfo(
                name=str(entry["name"]), hz=float(entry["hz"]),
                variates=int(entry["variates"]), length=int(entry["length"])))
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"bad modality entry {entry!r}: {exc}") from exc
    if len({m.name for m in modalities}) != len(modalities):
        raise DataError("duplicate modality names")
    for m in modalities:
        if m.variates < 1 or m.length < 1:
            raise DataError(f"modality '{m.name}' has non-positive dimensions")
    n_classes = int(manifest["classes"])
    if n_classes < 2:
        raise DataError("classes must be at least 2")

    names = {m.name for m in modalities}
    base = manifest_path.parent
    samples = []
    seen_ids = set()
    for record in manifest["samples"]:
        try:
            sample_id = str(record["id"])
            label = int(record["label"])
            paths = dict(record["paths"])
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"bad sample record {record!r}: {exc}") from exc
        if sample_id in seen_ids:
            raise DataError(f"duplicate sample id '{sample_id}'")
        seen_ids.add(sample_id)
        if not 1 <= label <= n_classes:
            raise DataError(f"sample '{sample_id}': label {label} outside [1, {n_classes}]")
        if set(paths) - names:
            raise DataError(f"sample '{sample_id}': unknown modality in paths")
        arrays: dict[str, np.ndarray | None] = {}
        for info in modalities:
            rel = paths.get(info.name)
            if rel is None:
                arrays[info.name] = None
                continue
            full = base / rel
            if not full.exists():
                raise DataError(f"sample '{sample_id}': missing file {rel}")
            array = read_series(full)
            if array.shape != (info.variates, info.length):
                raise DataError(
                    f"sample '{sample_id}': modality '{info.name}' has shape "
                    f"{array.shape}, manifest says {(info.variates, info.length)}")
            if not np.isfinite(array).all():
                raise DataError(f"sample '{sample_id}': non-finite values in '{info.name}'")
            arrays[info.name] = array
        samples.append(SampleRecord(sample_id, label, arrays))
    return Dataset(modalities, n_classes, samples)


# ---------------------------------------------------------------------------
# Synthetic generation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SynthSpec:
    mode: str                 # "unimodal" | "xor-cross" | "redundant"
    n_samples: int
    n_modalities: int = 3
    n_variates: int = 1
    length: int = 32
    n_classes: int = 2
    noise: float = 0.3
    seed: int = 0


def _step_pattern(bit: int, length: int) -> np.ndarray:
    half = length // 2
    out = np.empty(length)
    hi, lo = (1.0, -1.0) if bit else (-1.0, 1.0)
    out[:half] = hi
    out[half:] = lo
    return out


def _freq_pattern(cls: int, length: int) -> np.ndarray:
    t = np.arange(length)
    return np.sqrt(2.0) * np.sin(2.0 * np.pi * cls * t / length)


def _signal(kind_bit_or_class: int, length: int, binary: bool) -> np.ndarray:
    if binary:
        return _step_pattern(kind_bit_or_class, length)
    return _freq_pattern(kind_bit_or_class, length)


def generate_synthetic(spec: SynthSpec) -> Dataset:
    """Build an in-memory dataset per the synthesis spec.

    The last modality is always pure noise. Class counts are balanced within
    one sample. In xor-cross mode the label is the XOR of two hidden bits,
    each carried by one modality, so no single modality predicts the label.
    """
    if spec.mode not in ("unimodal", "xor-cross", "redundant"):
        raise ContractViolation(f"unknown synthetic mode '{spec.mode}'")
    if spec.n_modalities < 2:
        raise ContractViolation("need at least two modalities (one is noise)")
    if spec.mode == "xor-cross":
        if spec.n_classes != 2:
            raise ContractViolation("xor-cross is a two-class construction")
        if spec.n_modalities < 3:
            raise ContractViolation("xor-cross needs two signal modalities plus noise")
    if spec.length < 4:
        raise ContractViolation("series too short for shape-coded signals")

    rng = np.random.default_rng([spec.seed, 1001])
    modalities = [ModalityInfo(f"m{j + 1}", 1.0, spec.n_variates, spec.length)
                  for j in range(spec.n_modalities)]
    binary = spec.n_classes == 2

    # per-sample latent assignments, balanced
    if spec.mode == "xor-cross":
        cells = [(0, 0), (0, 1), (1, 0), (1, 1)]
        assign = [cells[i % 4] for i in range(spec.n_samples)]
        labels = [1 + (a ^ b) for a, b in assign]
    else:
        labels = [1 + (i % spec.n_classes) for i in range(spec.n_samples)]
        assign = [(lab - 1, lab - 1) for lab in labels]

    samples = []
    for i in range(spec.n_samples):
        label = labels[i]
        arrays: dict[str, np.ndarray | None] = {}
        for j, info in enumerate(modalities):
            noise_only = j == spec.n_modalities - 1
            base = np.zeros(spec.length)
            if not noise_only:
                if spec.mode == "unimodal":
                    if j == 0:
                        base = _signal(label - 1 if binary else label, spec.length, binary)
                    else:
                        noise_only = True
                elif spec.mode == "xor-cross":
                    if j == 0:
                        base = _step_pattern(assign[i][0], spec.length)
                    elif j == 1:
                        base = _step_pattern(assign[i][1], spec.length)
                    else:
                        noise_only = True
                else:  # redundant: same label signal in every non-noise modality
                    base = _signal(label - 1 if binary else label, spec.length, binary)
            sigma = 1.0 if noise_only else spec.noise
            signal = np.zeros((spec.n_variates, spec.length))
            for d in range(spec.n_variates):
                signal[d] = (0.0 if noise_only else base) + rng.normal(0.0, sigma, spec.length)
            arrays[info.name] = signal
        samples.append(SampleRecord(f"s{i:05d}", label, arrays))
    return Dataset(modalities, spec.n_classes, samples)


# ---------------------------------------------------------------------------
# Certification oracles for the synthetic constructions
# ---------------------------------------------------------------------------


def _halfdiff(array: np.ndarray) -> float:
    half = array.shape[1] // 2
    return float(array[:, :half].mean() - array[:, half:].mean())


def modality_features(dataset: Dataset, name: str) -> np.ndarray:
    """Two scalar summaries per sample: overall mean and half-difference."""
    feats = []
    for sample in dataset.samples:
        array = sample.arrays[name]
        if array is None:
            raise ContractViolation("feature extraction requires present modalities")
        feats.append([float(array.mean()), _halfdiff(array)])
    return np.array(feats)


def best_stump_accuracy(feature: np.ndarray, labels: np.ndarray) -> float:
    """Best threshold-plus-polarity rule on one scalar feature (two classes),
    fit and scored on the same data: the most generous audit of whether the
    feature alone predicts the label."""
    labels = np.asarray(labels)
    classes = np.unique(labels)
    if classes.size != 2:
        raise ContractViolation("stump oracle handles exactly two classes")
    order = np.argsort(feature, kind="stable")
    y = (labels[order] == classes[1]).astype(np.int64)
    n = y.size
    total_pos = y.sum()
    # threshold after position i: left block predicts one class, right the other
    left_pos = np.concatenate([[0], np.cumsum(y)])
    idx = np.arange(n + 1)
    acc_a = ((idx - left_pos) + (total_pos - left_pos)) / n     # left->c0, right->c1
    acc_b = (left_pos + ((n - idx) - (total_pos - left_pos))) / n
    return float(max(acc_a.max(), acc_b.max()))


def unimodal_stump_accuracy(dataset: Dataset) -> dict[str, float]:
    """Best single-feature stump per modality over mean and half-difference."""
    labels = dataset.labels()
    out = {}
    for info in dataset.modalities:
        feats = modality_features(dataset, info.name)
        out[info.name] = max(best_stump_accuracy(feats[:, col], labels)
                             for col in range(feats.shape[1]))
    return out


def joint_rule_accuracy(dataset: Dataset, name_a: str, name_b: str) -> float:
    """Majority rule over the four sign-quadrants of the two modalities'
    half-difference features, fit and scored on the same data."""
    labels = dataset.labels()
    fa = modality_features(dataset, name_a)[:, 1] > 0
    fb = modality_features(dataset, name_b)[:, 1] > 0
    correct = 0
    for qa in (False, True):
        for qb in (False, True):
            cell = (fa == qa) & (fb == qb)
            if cell.any():
                cell_labels = labels[cell]
                counts = np.bincount(cell_labels)
                correct += counts.max()
    return correct / labels.size


def certify_xor_cross(dataset: Dataset) -> tuple[float, float]:
    """(worst-case unimodal stump accuracy, joint two-modality accuracy)."""
    stumps = unimodal_stump_accuracy(dataset)
    joint = joint_rule_accuracy(dataset, dataset.modalities[0].name,
                                dataset.modalities[1].name)
    return max(stumps.values()), joint


# ---------------------------------------------------------------------------
# Corruption
# ---------------------------------------------------------------------------

CORRUPTION_MODES = ("replace_gaussian", "additive_gaussian", "additive_spikes", "drop")


def corrupt(dataset: Dataset, modalities: list[str], mode: str, seed: int,
            sigma: float = 1.0, p_spike: float = 0.01,
            magnitude: float = 5.0) -> Dataset:
    """Return a copy with the named modalities corrupted; untouched
    modalities keep their exact arrays."""
    if mode not in CORRUPTION_MODES:
        raise ContractViolation(f"unknown corruption mode '{mode}'")
    unknown = set(modalities) - set(dataset.modality_names)
    if unknown:
        raise ContractViolation(f"unknown modalities {sorted(unknown)}")
    rng = np.random.default_rng([seed, 2002])
    out_samples = []
    for sample in dataset.samples:
        arrays: dict[str, np.ndarray | None] = {}
        for info in dataset.modalities:
            array = sample.arrays.get(info.name)
            if info.name not in modalities or array is None:
                arrays[info.name] = array
                continue
            if mode == "drop":
                arrays[info.name] = None
            elif mode == "replace_gaussian":
                arrays[info.name] = rng.normal(0.0, sigma, size=array.shape)
            elif mode == "additive_gaussian":
                arrays[info.name] = array + rng.normal(0.0, sigma, size=array.shape)
            else:  # additive_spikes: x + eps + M * S, Bernoulli mask, +/- magnitude
                eps = rng.normal(0.0, sigma, size=array.shape)
                mask = rng.random(array.shape) < p_spike
                signs = np.where(rng.random(array.shape) < 0.5, -1.0, 1.0)
                arrays[info.name] = array + eps + mask * signs * magnitude
        out_samples.append(SampleRecord(sample.sample_id, sample.label, arrays))
    return Dataset(dataset.modalities, dataset.n_classes, out_samples)


# ---------------------------------------------------------------------------
# Splitting
# ---------------------------------------------------------------------------


def stratified_split(dataset: Dataset, fractions: tuple[float, float, float],
                     seed: int) -> dict[str, Dataset]:
    """Seeded stratified train/val/test split; per-class counts follow the
    fractions within one sample."""
    if len(fractions) != 3 or abs(sum(fractions) - 1.0) > 1e-9 or min(fractions) <= 0:
        raise ContractViolation("fractions must be three positives summing to 1")
    rng = np.random.default_rng([seed, 3003])
    labels = dataset.labels()
    buckets: dict[str, list[int]] = {"train": [], "val": [], "test": []}
    for cls in sorted(set(labels.tolist())):
        idx = np.flatnonzero(labels == cls)
        rng.shuffle(idx)
        n = idx.size
        n_train = int(round(fractions[0] * n))
        n_val = int(round(fractions[1] * n))
        n_test = n - n_train - n_val
        if min(n_train, n_val, n_test) <= 0:
            raise DataError(f"class {cls} too small for a three-way split")
        buckets["train"].extend(idx[:n_train].tolist())
        buckets["val"].extend(idx[n_train:n_train + n_val].tolist())
        buckets["test"].extend(idx[n_train + n_val:].tolist())
    return {name: dataset.subset(sorted(ids)) for name, ids in buckets.items()}
