#!/usr/bin/env python3
"""Plot validation-loss curves from training metrics CSVs.

Accepts individual metrics.csv paths or a compare sweep's runs/ directory
(each metrics.csv becomes one curve, labelled by its run id). Writes a
PNG. Needs matplotlib; install the package's `plots` extra.
"""

import argparse
import csv
import sys
from pathlib import Path


def parse_args(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("inputs", nargs="+",
                   help="metrics.csv files or directories holding them")
    p.add_argument("--out", default="loss_curves.png", help="output PNG path")
    p.add_argument("--column", default="combined_val_loss",
                   help="which CSV column to plot (default combined_val_loss)")
    p.add_argument("--logy", action="store_true", help="log-scale loss axis")
    p.add_argument("--title", default="validation loss")
    return p.parse_args(argv)


def find_csvs(inputs):
    found = []
    for raw in inputs:
        path = Path(raw)
        if path.is_dir():
            found += sorted(path.rglob("metrics.csv"))
        elif path.is_file():
            found.append(path)
        else:
            raise OSError(f"{path} is neither a file nor a directory")
    return found


def read_curve(path, column):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ValueError(f"{path} has no data rows")
    if column not in rows[0]:
        raise ValueError(f"{path} has no column '{column}'; has: "
                         f"{', '.join(rows[0])}")
    return ([int(r["epoch"]) for r in rows],
            [float(r[column]) for r in rows])


def label_for(path):
    parent = path.parent.name
    return parent if parent not in ("", ".") else path.stem


def main(argv=None) -> int:
    args = parse_args(argv)
    try:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        print("matplotlib is not installed; install the 'plots' extra "
              "(pip install -e '.[plots]')", file=sys.stderr)
        return 1

    try:
        csvs = find_csvs(args.inputs)
    except OSError as err:
        print(err, file=sys.stderr)
        return 1
    if not csvs:
        print("no metrics.csv files found", file=sys.stderr)
        return 1

    fig, ax = plt.subplots(figsize=(8, 5))
    for path in csvs:
        try:
            epochs, values = read_curve(path, args.column)
        except (OSError, ValueError) as err:
            print(err, file=sys.stderr)
            return 1
        ax.plot(epochs, values, label=label_for(path), linewidth=1.5)
    ax.set_xlabel("epoch")
    ax.set_ylabel(args.column)
    ax.set_title(args.title)
    if args.logy:
        ax.set_yscale("log")
    ax.grid(True, alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(args.out, dpi=150)
    print(f"wrote {args.out} ({len(csvs)} curves)")
    return 0


if __name__ == "__main__":
    sys.exit(main())
