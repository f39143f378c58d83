#!/usr/bin/env python3
"""Convert PPG-DaLiA recordings into an activity-recognition dataset.

Reads the published per-subject pickles (S1.pkl ... S15.pkl) holding
synchronized chest and wrist sensor streams plus a 4 Hz activity track, and
windows them into a 7-class activity task over five modalities
(chest accelerometer, wrist accelerometer, BVP, EDA, temperature).

Windowing is 8 s with 2 s overlap (6 s shift) by default. A window is kept
only when every activity sample inside it agrees; the sitting/baseline and
transient activities are excluded, and the remaining seven (stairs, soccer,
cycling, driving, lunch, walking, working) are relabeled 1..7 in that order.

Assumptions this script makes beyond that:
  - The activity track is sampled at 4 Hz and aligned to the signal start,
    so window boundaries map to activity indices by simple scaling.
  - Slower channels are windowed by wall-clock boundaries (hz * seconds
    samples per window); no resampling or filtering is applied.

Outputs are not part of the package's test gate.

Usage:
    python scripts/convert_daliahar.py --root /data/PPG_FieldStudy \
        --out dalia_ds [--window-seconds 8] [--overlap-seconds 2]
"""

import argparse
import pickle
import sys
from pathlib import Path

import numpy as np

from maestro.data import Dataset, ModalityInfo, SampleRecord, save_dataset

CHANNELS = [
    ("chest_acc", ("chest", "ACC"), 700, 3),
    ("wrist_acc", ("wrist", "ACC"), 32, 3),
    ("wrist_bvp", ("wrist", "BVP"), 64, 1),
    ("wrist_eda", ("wrist", "EDA"), 4, 1),
    ("wrist_temp", ("wrist", "TEMP"), 4, 1),
]

ACTIVITY_HZ = 4
# source activity id -> class id; 0 (transient) and 1 (sitting) are dropped
CLASS_OF_ACTIVITY = {2: 1, 3: 2, 4: 3, 5: 4, 6: 5, 7: 6, 8: 7}
CLASS_NAMES = ["stairs", "soccer", "cycling", "driving", "lunch", "walking",
               "working"]


def _as_matrix(raw) -> np.ndarray:
    arr = np.asarray(raw, dtype=np.float64)
    if arr.ndim == 1:
        return arr[None, :]
    return arr.T


def convert_subject(pkl_path: Path, window_s: float, shift_s: float):
    with open(pkl_path, "rb") as fh:
        record = pickle.load(fh, encoding="latin1")
    signal = record["signal"]
    activity = np.asarray(record["activity"]).reshape(-1)

    streams = {name: _as_matrix(signal[loc[0]][loc[1]])
               for name, loc, _, _ in CHANNELS}
    total_seconds = activity.size / ACTIVITY_HZ
    samples = []
    start = 0.0
    while start + window_s <= total_seconds + 1e-9:
        act_lo = int(round(start * ACTIVITY_HZ))
        act_hi = int(round((start + window_s) * ACTIVITY_HZ))
        window_act = activity[act_lo:act_hi]
        uniform = window_act.size and (window_act == window_act[0]).all()
        cls = CLASS_OF_ACTIVITY.get(int(window_act[0])) if uniform else None
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
    parser.add_argument("--overlap-seconds", type=float, default=2.0)
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
    dataset = Dataset(modalities, n_classes=len(CLASS_NAMES))
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
    counts = np.bincount(dataset.labels(), minlength=8)[1:]
    summary = ", ".join(f"{n}={c}" for n, c in zip(CLASS_NAMES, counts))
    print(f"wrote {len(dataset.samples)} samples ({summary}) -> {manifest}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
