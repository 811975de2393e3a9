#!/usr/bin/env python3
"""Convert UEA .ts multivariate sequence files into the dtkc dataset layout.

Output directory contents:
  meta.json    {"name", "kind": "sequence", "n", "k", "dim", "min_length", "max_length", "has_labels"}
  data.f32     n x (max_length * dim) float32, row-major, time-major rows, zero padded
  lengths.i32  n int32
  labels.i32   n int32 in [0, k), class names mapped in sorted order

Several input files (e.g. the train and test splits) are concatenated in the
order given.

  python3 tools/convert_sequences.py --name CharacterTrajectories \
      --out data/ct CharacterTrajectories_TRAIN.ts CharacterTrajectories_TEST.ts
"""

import argparse
import json
import math
import struct
import sys
from pathlib import Path


def read_ts(path):
    sequences, labels = [], []
    in_data = False
    with open(path, encoding="utf-8") as f:
        for raw in f:
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if not in_data:
                if line.lower() == "@data":
                    in_data = True
                continue
            *dims, label = line.split(":")
            channels = [[float(v) if v != "?" else math.nan for v in d.split(",")] for d in dims]
            length = len(channels[0])
            if any(len(c) != length for c in channels):
                raise ValueError(f"{path}: channels of unequal length")
            # Trailing missing values pad shorter series in some archives.
            while length > 0 and all(math.isnan(c[length - 1]) for c in channels):
                length -= 1
            if length == 0 or any(math.isnan(c[t]) for c in channels for t in range(length)):
                raise ValueError(f"{path}: missing values inside a sequence")
            sequences.append([[c[t] for c in channels] for t in range(length)])
            labels.append(label.strip())
    if not in_data:
        raise ValueError(f"{path}: no @data section")
    return sequences, labels


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("inputs", nargs="+", type=Path)
    parser.add_argument("--out", required=True, type=Path)
    parser.add_argument("--name", default="")
    args = parser.parse_args()

    sequences, names = [], []
    for path in args.inputs:
        s, l = read_ts(path)
        sequences += s
        names += l
    dims = {len(s[0]) for s in sequences}
    if len(dims) != 1:
        sys.exit("sequences disagree on the number of channels")
    dim = dims.pop()
    classes = sorted(set(names))
    lengths = [len(s) for s in sequences]
    max_length = max(lengths)

    args.out.mkdir(parents=True, exist_ok=True)
    meta = {
        "name": args.name,
        "kind": "sequence",
        "n": len(sequences),
        "k": len(classes),
        "dim": dim,
        "min_length": min(lengths),
        "max_length": max_length,
        "has_labels": True,
    }
    (args.out / "meta.json").write_text(json.dumps(meta, indent=2) + "\n")
    with open(args.out / "data.f32", "wb") as f:
        for s in sequences:
            row = [v for step in s for v in step]
            row += [0.0] * (max_length * dim - len(row))
            f.write(struct.pack(f"<{len(row)}f", *row))
    with open(args.out / "lengths.i32", "wb") as f:
        f.write(struct.pack(f"<{len(lengths)}i", *lengths))
    index = {c: i for i, c in enumerate(classes)}
    with open(args.out / "labels.i32", "wb") as f:
        f.write(struct.pack(f"<{len(names)}i", *(index[n] for n in names)))
    print(json.dumps(meta))


if __name__ == "__main__":
    main()
