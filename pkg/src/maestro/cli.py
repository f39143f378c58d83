"""Command-line entry point.

Subcommands: tokenize, synth, corrupt, train, eval, ablate, experts,
attn-map, count-ops. Exit codes: 0 success, 1 usage or configuration error,
2 data error, 3 numeric fault. Every artifact-producing command writes a
run_manifest.json with the resolved configuration, the seed, a source
version string, and a sha256 per output file.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import subprocess
import sys
from pathlib import Path

import numpy as np

from . import fusion as F
from . import moe as X
from . import sax as S
from .config import DEFAULT_SEED, load_config
from .data import (SynthSpec, certify_xor_cross, corrupt, generate_synthetic,
                   load_dataset, save_dataset, stratified_split,
                   unimodal_stump_accuracy)
from .errors import (ConfigError, ContractViolation, DataError, MaestroError,
                     NumericFault, UsageError)
from .metrics import (attention_scaling_rows, eval_report, missingness_sweep,
                      write_ops_csv)
from .model import Model
from .training import blank_grids, evaluate, prepare_samples, train


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage; the contract here is exit 1
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _source_version() -> str:
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty"],
                             capture_output=True, text=True, timeout=10,
                             cwd=Path(__file__).parent)
        if out.returncode == 0:
            return out.stdout.strip()
    except OSError:
        pass
    return "unknown"


def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            digest.update(block)
    return digest.hexdigest()


def _write_run_manifest(out_dir: Path, command: str, config: dict, seed: int,
                        outputs: list[Path]) -> None:
    manifest = {
        "command": command,
        "config": config,
        "seed": seed,
        "source_version": _source_version(),
        "outputs": {str(p.relative_to(out_dir)): _sha256(p)
                    for p in sorted(outputs)},
    }
    (out_dir / "run_manifest.json").write_text(json.dumps(manifest, indent=1,
                                                          sort_keys=True))


def _out_dir(args) -> Path:
    if args.out is None:
        raise UsageError("this command requires --out")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _out_file(args, default_name: str) -> Path:
    if args.out is None:
        return Path(default_name)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    return out


def _seed(args) -> int:
    return DEFAULT_SEED if args.seed is None else args.seed


def _tree_files(root: Path) -> list[Path]:
    return [p for p in root.rglob("*")
            if p.is_file() and p.name != "run_manifest.json"]


def _check_dataset_matches(model: Model, dataset) -> None:
    expected = [dataclasses.asdict(m) if dataclasses.is_dataclass(m) else vars(m)
                for m in model.modalities]
    got = [vars(m) for m in dataset.modalities]
    if expected != got:
        raise DataError("dataset modality table does not match the checkpoint")
    if dataset.n_classes != model.n_classes:
        raise DataError("dataset class count does not match the checkpoint")


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_synth(args) -> int:
    out = _out_dir(args)
    seed = _seed(args)
    spec = SynthSpec(mode=args.mode, n_samples=args.samples,
                     n_modalities=args.modalities, n_variates=args.variates,
                     length=args.length, n_classes=args.classes,
                     noise=args.noise, seed=seed)
    dataset = generate_synthetic(spec)
    save_dataset(dataset, out)
    report: dict = {"mode": args.mode, "n_samples": args.samples,
                    "stump_accuracy": unimodal_stump_accuracy(dataset)}
    if args.mode == "xor-cross":
        worst_stump, joint = certify_xor_cross(dataset)
        report["certification"] = {"max_unimodal_stump": worst_stump,
                                   "joint_rule": joint}
    (out / "synth_report.json").write_text(json.dumps(report, indent=1,
                                                      sort_keys=True))
    _write_run_manifest(out, "synth", dataclasses.asdict(spec), seed,
                        _tree_files(out))
    print(f"wrote {args.samples} samples to {out}")
    return 0


def cmd_tokenize(args) -> int:
    out = _out_dir(args)
    seed = _seed(args)
    dataset = load_dataset(args.data)
    codec = S.SymbolCodec.from_alphabet(args.alpha)
    for sample in dataset.samples:
        for info in dataset.modalities:
            array = sample.arrays.get(info.name)
            n_segments = -(-info.length // args.word_length)
            if array is None:
                symbols = S.missing_tokens(info.variates, n_segments)
            else:
                symbols = S.tokenize(array, n_segments, codec)
            S.write_symbols(out / f"{sample.sample_id}__{info.name}.msax",
                            symbols, args.alpha)
    config = {"alpha": args.alpha, "word_length": args.word_length,
              "data": str(args.data)}
    _write_run_manifest(out, "tokenize", config, seed, _tree_files(out))
    print(f"tokenized {len(dataset.samples)} samples into {out}")
    return 0


def cmd_corrupt(args) -> int:
    out = _out_dir(args)
    seed = _seed(args)
    dataset = load_dataset(args.data)
    targets = (args.modalities.split(",") if args.modalities
               else dataset.modality_names)
    corrupted = corrupt(dataset, targets, args.mode, seed, sigma=args.sigma,
                        p_spike=args.spike_p, magnitude=args.spike_mag)
    save_dataset(corrupted, out)
    config = {"mode": args.mode, "modalities": targets, "sigma": args.sigma,
              "spike_p": args.spike_p, "spike_mag": args.spike_mag,
              "data": str(args.data)}
    _write_run_manifest(out, "corrupt", config, seed, _tree_files(out))
    print(f"corrupted {targets} with {args.mode} into {out}")
    return 0


def _train_pipeline(args, command: str, model_overrides: dict | None = None,
                    no_dropout: bool = False, ablation: dict | None = None) -> int:
    out = _out_dir(args)
    rc = load_config(args.config, seed_override=args.seed,
                     model_overrides=model_overrides)
    if no_dropout:
        rc = dataclasses.replace(
            rc, curriculum=dataclasses.replace(rc.curriculum, p_max=0.0))
    dataset = load_dataset(args.data)
    splits = stratified_split(dataset, (0.8, 0.1, 0.1), rc.seed)
    model = Model(rc.model, dataset.modalities, dataset.n_classes, rc.seed)

    result = train(model, splits["train"], splits["val"], rc.train,
                   rc.curriculum,
                   log=None if args.quiet else
                   lambda e: print(f"epoch {e['epoch']:3d} p={e['dropout_rate']:.2f} "
                                   f"train {e['train_loss']:.4f} "
                                   f"val {e['val_loss']:.4f} acc {e['val_acc']:.3f}"))

    test_prepared = prepare_samples(model, splits["test"])
    test_loss, test_acc, test_preds = evaluate(model, test_prepared)
    test_labels = [label for _, _, label in test_prepared]
    report = eval_report(test_preds, test_labels, dataset.n_classes, rc.seed, 0.0)

    meta = {"best_epoch": result.best_epoch, "val_loss": result.best_val_loss,
            "val_acc": result.best_val_acc}
    results = {
        "best_epoch": result.best_epoch,
        "best_val_loss": result.best_val_loss,
        "best_val_acc": result.best_val_acc,
        "stopped_early": result.stopped_early,
        "test_loss": test_loss,
        "test_report": report,
    }
    if ablation is not None:
        meta["ablation"] = dict(ablation)
        results["ablation"] = dict(ablation)
    model.save(out / "checkpoint.ckpt", meta=meta)
    (out / "history.json").write_text(json.dumps(result.history, indent=1))
    (out / "splits.json").write_text(json.dumps(
        {name: [s.sample_id for s in ds.samples] for name, ds in splits.items()},
        indent=1, sort_keys=True))
    (out / "results.json").write_text(json.dumps(results, indent=1,
                                                 sort_keys=True))
    _write_run_manifest(out, command, rc.resolved(), rc.seed, _tree_files(out))
    print(f"best epoch {result.best_epoch} val_acc {result.best_val_acc:.3f} "
          f"test_acc {test_acc:.3f}")
    return 0


def cmd_train(args) -> int:
    return _train_pipeline(args, "train")


def cmd_ablate(args) -> int:
    overrides: dict = {}
    if args.no_sax:
        overrides["use_sax"] = False
    if args.no_modality_embedding:
        overrides["use_modality_embedding"] = False
    if args.no_adaptive_budget:
        overrides["use_adaptive_budget"] = False
    if args.no_moe:
        overrides["n_experts"] = 1
        overrides["top_k"] = 1
    if not overrides and not args.no_dropout:
        raise UsageError("ablate needs at least one --no-* toggle")
    ablation = dict(overrides)
    if args.no_dropout:
        ablation["curriculum_dropout"] = False
    return _train_pipeline(args, "ablate", model_overrides=overrides or None,
                           no_dropout=args.no_dropout, ablation=ablation)


def cmd_eval(args) -> int:
    model, _ = Model.load(args.checkpoint)
    dataset = load_dataset(args.data)
    _check_dataset_matches(model, dataset)
    if args.split_file:
        ids = set(json.loads(Path(args.split_file).read_text())[args.split])
        keep = [i for i, s in enumerate(dataset.samples) if s.sample_id in ids]
        if not keep:
            raise DataError(f"split '{args.split}' matches no samples")
        dataset = dataset.subset(keep)
    seed = _seed(args)
    levels = [float(v) for v in args.missing.split(",")]
    prepared = prepare_samples(model, dataset)
    sweep = missingness_sweep(model, prepared, levels, args.trials, seed)
    out = _out_file(args, "report.json")
    report = {"checkpoint": str(args.checkpoint), "data": str(args.data),
              "n_samples": len(prepared), "trials": args.trials,
              "seed": seed, "sweep": sweep}
    out.write_text(json.dumps(report, indent=1, sort_keys=True))
    for row in sweep:
        print(f"missing {row['level']:.2f}: acc {row['accuracy_mean']:.3f} "
              f"+/- {row['accuracy_std']:.3f}")
    print(f"report written to {out}")
    return 0


def _load_patterns(path: Path, names: list[str]) -> dict[str, np.ndarray]:
    """Pattern file: JSON object, pattern name -> list of present modalities."""
    try:
        spec = json.loads(Path(path).read_text())
    except OSError as exc:
        raise DataError(f"cannot read patterns file {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"patterns file {path} is not valid JSON: {exc}") from exc
    if not isinstance(spec, dict) or not spec:
        raise DataError("patterns file must be a non-empty JSON object")
    patterns = {}
    for pname, present in spec.items():
        if not isinstance(present, list):
            raise DataError(f"pattern '{pname}' must list present modalities")
        unknown = set(present) - set(names)
        if unknown:
            raise DataError(f"pattern '{pname}' names unknown modalities: "
                            f"{sorted(unknown)}")
        patterns[pname] = np.array([1 if n in present else 0 for n in names],
                                   dtype=np.int64)
    return patterns


def cmd_experts(args) -> int:
    model, _ = Model.load(args.checkpoint)
    dataset = load_dataset(args.data)
    _check_dataset_matches(model, dataset)
    prepared = prepare_samples(model, dataset)
    blanks = blank_grids(model)
    names = [m.name for m in model.modalities]

    if args.patterns is not None:
        patterns = _load_patterns(args.patterns, names)
    else:
        patterns = {"full": np.ones(len(names), dtype=np.int64)}
        for j, name in enumerate(names):
            mask = np.ones(len(names), dtype=np.int64)
            mask[j] = 0
            patterns[f"drop_{name}"] = mask

    histograms = {}
    for pname, forced in patterns.items():
        decisions = []
        for inputs, avail, _ in prepared:
            mask = avail & forced
            if mask.sum() == 0:
                continue
            eff = {name: (inputs[name] if mask[j] else blanks[name])
                   for j, name in enumerate(names)}
            collect: dict = {}
            model.forward(eff, mask, collect=collect)
            decisions.append(collect["routing"])
        histograms[pname] = X.routing_histogram(decisions, model.config.n_experts)

    out = _out_file(args, "experts.csv")
    with out.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["pattern"] + [f"expert_{e}"
                                       for e in range(model.config.n_experts)])
        for pname, counts in histograms.items():
            writer.writerow([pname] + [int(c) for c in counts])

    keys = list(histograms)
    for i, a in enumerate(keys):
        for b in keys[i + 1:]:
            dist = X.total_variation(histograms[a].astype(np.float64),
                                     histograms[b].astype(np.float64))
            print(f"TV {a}|{b}: {dist:.3f}")
    print(f"expert histogram written to {out}")
    return 0


def cmd_attn_map(args) -> int:
    model, _ = Model.load(args.checkpoint)
    dataset = load_dataset(args.data)
    _check_dataset_matches(model, dataset)
    by_id = {s.sample_id: s for s in dataset.samples}
    if args.sample not in by_id:
        raise DataError(f"sample '{args.sample}' not in dataset")
    sample = by_id[args.sample]
    inputs = model.prepare(sample.arrays)
    mask = model.availability(sample.arrays)
    collect: dict = {}
    model.forward(inputs, mask, collect=collect)
    out = _out_file(args, "attn_map.csv")
    F.export_attention_map(collect["fusion"]["weights"],
                           collect["boundaries"], out)
    masses = F.segment_masses(collect["fusion"]["weights"],
                              collect["boundaries"])
    for (qname, kname), mass in sorted(masses.items()):
        print(f"{qname} -> {kname}: {mass:.3f}")
    print(f"attention map written to {out}")
    return 0


def cmd_count_ops(args) -> int:
    lengths = [int(v) for v in args.lengths.split(",")]
    if any(length < 1 for length in lengths):
        raise UsageError("lengths must be positive")
    rows = attention_scaling_rows(lengths, args.d_model, args.heads, args.budget)
    out = _out_file(args, "ops.csv")
    write_ops_csv(rows, out)
    for row in rows:
        print(f"L={row['length']}: sparse {row['sparse_total']} "
              f"dense {row['dense_total']}")
    print(f"op counts written to {out}")
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None,
                        help="global RNG seed (default: config or 2711)")
    common.add_argument("--out", default=None, help="output directory or file")

    parser = _Parser(prog="maestro",
                     description="Multimodal symbolic time-series pipeline")
    sub = parser.add_subparsers(dest="command", required=True,
                                parser_class=_Parser)

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic dataset")
    p.add_argument("--mode", required=True,
                   choices=["unimodal", "xor-cross", "redundant"])
    p.add_argument("--samples", type=int, default=3000)
    p.add_argument("--modalities", type=int, default=3)
    p.add_argument("--variates", type=int, default=1)
    p.add_argument("--length", type=int, default=32)
    p.add_argument("--classes", type=int, default=2)
    p.add_argument("--noise", type=float, default=0.3)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("tokenize", parents=[common],
                       help="write symbol files for every sample")
    p.add_argument("--data", required=True, help="dataset manifest path")
    p.add_argument("--alpha", type=int, default=20)
    p.add_argument("--word-length", type=int, default=2)
    p.set_defaults(func=cmd_tokenize)

    p = sub.add_parser("corrupt", parents=[common], help="corrupt a dataset copy")
    p.add_argument("--data", required=True)
    p.add_argument("--mode", required=True,
                   choices=["replace_gaussian", "additive_gaussian",
                            "additive_spikes", "drop"])
    p.add_argument("--modalities", default=None,
                   help="comma-separated target modalities (default: all)")
    p.add_argument("--sigma", type=float, default=0.5)
    p.add_argument("--spike-p", type=float, default=0.01)
    p.add_argument("--spike-mag", type=float, default=5.0)
    p.set_defaults(func=cmd_corrupt)

    p = sub.add_parser("train", parents=[common], help="train a model")
    p.add_argument("--config", default=None, help="TOML run configuration")
    p.add_argument("--data", required=True)
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("ablate", parents=[common],
                       help="train with components disabled")
    p.add_argument("--config", default=None)
    p.add_argument("--data", required=True)
    p.add_argument("--quiet", action="store_true")
    p.add_argument("--no-sax", action="store_true",
                   help="continuous segment means instead of symbols")
    p.add_argument("--no-modality-embedding", action="store_true")
    p.add_argument("--no-dropout", action="store_true",
                   help="disable curriculum modality dropout")
    p.add_argument("--no-adaptive-budget", action="store_true",
                   help="fixed attention budget instead of the gate")
    p.add_argument("--no-moe", action="store_true",
                   help="single FFN instead of the expert mixture")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("eval", parents=[common],
                       help="evaluate a checkpoint under missingness")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--missing", default="0.0,0.1,0.2,0.3,0.4",
                   help="comma-separated drop probabilities")
    p.add_argument("--trials", type=int, default=3)
    p.add_argument("--split-file", default=None,
                   help="splits.json from training, to evaluate one split")
    p.add_argument("--split", default="test")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("experts", parents=[common],
                       help="expert routing per availability pattern")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--patterns",
                   help="JSON file: pattern name -> present modalities "
                        "(default: full plus each single-modality drop)")
    p.set_defaults(func=cmd_experts)

    p = sub.add_parser("attn-map", parents=[common],
                       help="export one sample's cross-modal attention map")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--sample", required=True, help="sample id")
    p.set_defaults(func=cmd_attn_map)

    p = sub.add_parser("count-ops", parents=[common],
                       help="analytic MAC counts for the attention stages")
    p.add_argument("--lengths", default="64,128,256,512,1024,2048,4096")
    p.add_argument("--d-model", type=int, default=64)
    p.add_argument("--heads", type=int, default=4)
    p.add_argument("--budget", type=int, default=1)
    p.set_defaults(func=cmd_count_ops)

    return parser


_EXIT_CODES = [
    (UsageError, 1), (ConfigError, 1), (ContractViolation, 1),
    (DataError, 2), (NumericFault, 3),
]


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except MaestroError as exc:
        print(f"maestro: error: {exc}", file=sys.stderr)
        for kind, code in _EXIT_CODES:
            if isinstance(exc, kind):
                return code
        return 1


if __name__ == "__main__":
    sys.exit(main())
