#!/usr/bin/env python3
"""Convert WESAD subject recordings into a maestro dataset directory.

Expects the published per-subject pickles (S2.pkl, S3.pkl, ...) under a root
directory, each holding synchronized chest (700 Hz) and wrist (32/64/4 Hz)
signal dicts plus a 700 Hz label stream. Ten modalities come out, matching
the device channel list; the three task classes are baseline, stress, and
amusement.

Assumptions this script makes (the source description does not pin them):
  - Window length defaults to 8 s with no overlap; both are flags. A window
    is kept only when every 700 Hz label sample inside it carries the same
    protocol condition and that condition is baseline (1), stress (2), or
    amusement (3); transient, meditation, and unlabeled stretches are
    dropped.
  - Slower channels are windowed by the same wall-clock boundaries, so a
    window holds hz * seconds samples per modality and all modalities stay
    aligned by construction.
  - No resampling, filtering, or unit conversion is applied; raw device
    values go straight into the fp32 container files.

Outputs are not part of the package's test gate; treat them as plumbing for
experiments on the real data.

Usage:
    python scripts/convert_wesad.py --root /data/WESAD --out wesad_ds \
        [--window-seconds 8] [--overlap-seconds 0] [--subjects S2,S3]
"""

import argparse
import pickle
import sys
from pathlib import Path

import numpy as np

from maestro.data import Dataset, ModalityInfo, SampleRecord, save_dataset

# (manifest name, pickle location, hz, variates)
CHANNELS = [
    ("chest_acc", ("chest", "ACC"), 700, 3),
    ("chest_ecg", ("chest", "ECG"), 700, 1),
    ("chest_emg", ("chest", "EMG"), 700, 1),
    ("chest_resp", ("chest", "Resp"), 700, 1),
    ("chest_eda", ("chest", "EDA"), 700, 1),
    ("chest_temp", ("chest", "Temp"), 700, 1),
    ("wrist_acc", ("wrist", "ACC"), 32, 3),
    ("wrist_bvp", ("wrist", "BVP"), 64, 1),
    ("wrist_eda", ("wrist", "EDA"), 4, 1),
    ("wrist_temp", ("wrist", "TEMP"), 4, 1),
]

LABEL_HZ = 700
# protocol condition -> class id (everything else is discarded)
CLASS_OF_CONDITION = {1: 1, 2: 2, 3: 3}


def _as_matrix(raw) -> np.ndarray:
    """(T,) or (T, D) device arrays -> (D, T) float64."""
    arr = np.asarray(raw, dtype=np.float64)
    if arr.ndim == 1:
        return arr[None, :]
    return arr.T


def convert_subject(pkl_path: Path, window_s: float, shift_s: float):
    with open(pkl_path, "rb") as fh:
        record = pickle.load(fh, encoding="latin1")
    signal = record["signal"]
    labels = np.asarray(record["label"]).reshape(-1)

    streams = {name: _as_matrix(signal[loc[0]][loc[1]])
               for name, loc, _, _ in CHANNELS}
    total_seconds = labels.size / LABEL_HZ
    samples = []
    start = 0.0
    while start + window_s <= total_seconds + 1e-9:
        lab_lo = int(round(start * LABEL_HZ))
        lab_hi = int(round((start + window_s) * LABEL_HZ))
        window_labels = labels[lab_lo:lab_hi]
        uniform = window_labels.size and (window_labels == window_labels[0]).all()
        cls = CLASS_OF_CONDITION.get(int(window_labels[0])) if uniform else None
        if cls is not None:
            arrays = {}
            complete = True
            for name, _, hz, _ in CHANNELS:
                lo = int(round(start * hz))
                hi = int(round((start + window_s) * hz))
                chunk = streams[name][:, lo:hi]
                if chunk.shape[1] != hi - lo:
                    complete = False
                    break
                arrays[name] = chunk
            if complete:
                samples.append((cls, arrays))
        start += shift_s
    return samples


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--root", required=True,
                        help="directory holding S*/S*.pkl or flat S*.pkl files")
    parser.add_argument("--out", required=True)
    parser.add_argument("--window-seconds", type=float, default=8.0)
    parser.add_argument("--overlap-seconds", type=float, default=0.0)
    parser.add_argument("--subjects",
                        help="comma-separated subject ids, default all found")
    args = parser.parse_args(argv)

    if not 0 <= args.overlap_seconds < args.window_seconds:
        parser.error("overlap must be shorter than the window")
    shift = args.window_seconds - args.overlap_seconds

    root = Path(args.root)
    pickles = sorted(set(root.glob("S*.pkl")) | set(root.glob("S*/S*.pkl")))
    if args.subjects:
        wanted = set(args.subjects.split(","))
        pickles = [p for p in pickles if p.stem in wanted]
    if not pickles:
        print(f"no subject pickles under {root}", file=sys.stderr)
        return 2

    modalities = [ModalityInfo(name, float(hz), variates,
                               int(round(hz * args.window_seconds)))
                  for name, _, hz, variates in CHANNELS]
    dataset = Dataset(modalities, n_classes=3)
    for pkl_path in pickles:
        windows = convert_subject(pkl_path, args.window_seconds, shift)
        subject = pkl_path.stem
        for i, (cls, arrays) in enumerate(windows):
            dataset.samples.append(
                SampleRecord(f"{subject}_w{i:05d}", cls, arrays))
        print(f"{subject}: {len(windows)} labeled windows")

    if not dataset.samples:
        print("no usable windows; nothing written", file=sys.stderr)
        return 2
    manifest = save_dataset(dataset, args.out)
    counts = np.bincount(dataset.labels(), minlength=4)[1:]
    print(f"wrote {len(dataset.samples)} samples "
          f"(baseline/stress/amusement = {counts.tolist()}) -> {manifest}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
