#!/usr/bin/env python3
"""Run the desk-scale combiner comparison end to end.

Generates the synthetic dataset if it is not already on disk, writes a
compare spec covering the requested combiners/frame counts/seeds, and
hands it to `geomtl compare`. The default setting (two-frame models with
summed streams, five seeds, equal vs gls) reproduces the qualitative
ordering study; --quick shrinks everything for a smoke run.
"""

import argparse
import json
import sys
from pathlib import Path

from geomtl.cli import main as cli_main


def parse_args(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--out", default="results/desk_comparison",
                   help="sweep output directory")
    p.add_argument("--data", default=None,
                   help="dataset directory (default <out>/data; generated "
                        "when absent)")
    p.add_argument("--combiners", default="equal,gls",
                   help="comma list; fls entries as fls:m, e.g. fls:1")
    p.add_argument("--seeds", default="0,1,2,3,4", help="comma list of ints")
    p.add_argument("--frames", default="2", help="comma list from {1,2}")
    p.add_argument("--samples", type=int, default=500)
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--base-channels", type=int, default=4)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--quick", action="store_true",
                   help="tiny dataset, 3 epochs, 2 seeds")
    return p.parse_args(argv)


def combiner_entries(text):
    entries = []
    for token in text.split(","):
        token = token.strip()
        if not token:
            continue
        if token.startswith("fls:"):
            entries.append({"name": "fls", "fls_m": int(token[4:])})
        else:
            entries.append(token)
    return entries


def main(argv=None) -> int:
    args = parse_args(argv)
    samples = 60 if args.quick else args.samples
    epochs = 3 if args.quick else args.epochs
    seeds = [0, 1] if args.quick else [int(s) for s in args.seeds.split(",")]

    data = Path(args.data) if args.data else Path(args.out) / "data"
    if not (data / "index.json").exists():
        rc = cli_main([
            "generate", "--out", str(data), "--count", str(samples),
            "--seed", "11", "--moving-fraction", "0.7"])
        if rc != 0:
            return rc
    else:
        print(f"reusing dataset at {data}")

    spec = {
        "base": {
            "dataset": str(data),
            "aggregation": "sum",
            "epochs": epochs,
            "batch_size": 8,
            "base_channels": args.base_channels,
            "dtype": "float32",
        },
        "combiners": combiner_entries(args.combiners),
        "frame_counts": [int(f) for f in args.frames.split(",")],
        "task_sets": [["segmentation", "depth", "motion"]],
        "seeds": seeds,
    }
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    spec_path = out / "compare_spec.json"
    spec_path.write_text(json.dumps(spec, indent=2, sort_keys=True) + "\n")
    print(f"wrote {spec_path}")

    rc = cli_main(["compare", "--spec", str(spec_path), "--out", str(out),
                   "--jobs", str(args.jobs)])
    if rc == 0:
        print()
        print((out / "summary.txt").read_text())
    return rc


if __name__ == "__main__":
    sys.exit(main())
