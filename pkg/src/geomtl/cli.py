"""Command-line front end: dataset generation, training, evaluation, and
combiner-comparison sweeps.

Exit codes are a stable contract: 0 success, 1 usage or configuration
error, 2 data error (unreadable or malformed dataset/checkpoint, placement
failure, unwritable output), 3 numeric abort during training. Every
command is deterministic given the same inputs and seeds.
"""

from __future__ import annotations

import argparse
import json
import statistics
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

from .data import (
    DataFormatError,
    PlacementError,
    SceneSpec,
    generate_dataset,
    load_dataset,
    split,
    write_dataset,
)
from .losses import LabelError
from .model import (
    CheckpointError,
    EncoderConfig,
    TASKS,
    build_model,
    load_checkpoint,
    save_checkpoint,
)
from .training import (
    ExperimentConfig,
    NumericAbort,
    evaluate,
    train,
    write_metrics_csv,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3

_TASK_ABBREV = {"segmentation": "seg", "depth": "dep", "motion": "mot"}


class _Parser(argparse.ArgumentParser):
    """argparse exits with code 2 on bad flags; the contract reserves 2 for
    data errors, so usage failures are remapped to 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _read_json_object(path, what: str) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            loaded = json.load(fh)
    except OSError as err:
        raise ValueError(f"cannot read {what} {path}: {err}") from err
    except json.JSONDecodeError as err:
        raise ValueError(f"{what} {path} is not valid JSON: {err}") from err
    if not isinstance(loaded, dict):
        raise ValueError(f"{what} {path} must hold a JSON object")
    return loaded


# ---- generate -------------------------------------------------------------------


_GENERATE_KEYS = (
    "height", "width", "num_classes", "min_objects", "max_objects",
    "min_size", "max_size", "depth_min", "depth_max", "moving_fraction",
    "max_displacement", "noise_sigma", "seed", "count", "png",
)


def cmd_generate(args) -> int:
    values = {}
    if args.config:
        loaded = _read_json_object(args.config, "scene config")
        unknown = sorted(set(loaded) - set(_GENERATE_KEYS))
        if unknown:
            raise ValueError(
                f"unknown scene config keys {unknown}; valid keys: "
                f"{', '.join(_GENERATE_KEYS)}")
        values.update(loaded)
    for key in _GENERATE_KEYS:
        flag = getattr(args, key, None)
        if flag is not None:
            values[key] = flag
    count = int(values.pop("count", 500))
    png = bool(values.pop("png", False))
    spec = SceneSpec(**values)
    samples = generate_dataset(spec, count)
    write_dataset(samples, args.out, spec, png=png)
    if not args.quiet:
        moving = int(sum(int(s.motion.sum()) for s in samples))
        print(f"wrote {len(samples)} samples ({spec.height}x{spec.width}, "
              f"{spec.num_classes} classes, {moving} motion-positive pixels) "
              f"to {args.out}")
    return EXIT_OK


# ---- train ----------------------------------------------------------------------


_TRAIN_OVERRIDES = (
    "dataset", "out", "seed", "combiner", "fls_m", "epochs", "batch_size",
    "lr", "optimizer", "num_frames", "aggregation", "base_channels",
    "decoder_channels", "num_classes", "dtype", "train_fraction",
    "dwa_temperature",
)


def _resolve_experiment(args) -> ExperimentConfig:
    values = {}
    if args.config:
        values.update(_read_json_object(args.config, "experiment config"))
    for key in _TRAIN_OVERRIDES:
        flag = getattr(args, key, None)
        if flag is not None:
            values[key] = flag
    if getattr(args, "tasks", None) is not None:
        values["tasks"] = [t.strip() for t in args.tasks.split(",") if t.strip()]
    if getattr(args, "weights", None) is not None:
        values["weights"] = [float(w) for w in args.weights.split(",")]
    return ExperimentConfig.from_dict(values)


def _epoch_printer(cfg: ExperimentConfig):
    def show(rec):
        accs = " ".join(f"{_TASK_ABBREV.get(t, t)}={rec.accuracy[t]:.4f}"
                        for t in cfg.tasks)
        print(f"epoch {rec.epoch:3d}  combined val loss "
              f"{rec.combined_val_loss:.6f}  acc {accs}  "
              f"({rec.wall_clock:.1f}s)")
    return show


def cmd_train(args) -> int:
    cfg = _resolve_experiment(args)
    if cfg.out is None:
        raise ValueError(
            "train needs an output directory: pass --out or set 'out' in the config")
    outdir = Path(cfg.out)
    outdir.mkdir(parents=True, exist_ok=True)
    model, records = train(
        cfg, on_epoch=None if args.quiet else _epoch_printer(cfg))
    write_metrics_csv(records, cfg.tasks, outdir / "metrics.csv")
    save_checkpoint(model, outdir / "model.ckpt")
    with open(outdir / "config.json", "w", encoding="utf-8", newline="\n") as fh:
        json.dump(cfg.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    if not args.quiet:
        last = records[-1]
        accs = " ".join(f"{_TASK_ABBREV.get(t, t)}={last.accuracy[t]:.4f}"
                        for t in cfg.tasks)
        print(f"done: {cfg.epochs} epochs, final val accuracy {accs}; "
              f"wrote {outdir / 'metrics.csv'} and {outdir / 'model.ckpt'}")
    return EXIT_OK


# ---- eval -----------------------------------------------------------------------


_EVAL_KEYS = ("batch_size", "huber_delta", "depth_tol", "combiner",
              "split", "train_fraction", "seed")


def cmd_eval(args) -> int:
    values = {"batch_size": 8, "huber_delta": 250.0, "depth_tol": 0.1,
              "combiner": "equal", "split": "all", "train_fraction": 0.8,
              "seed": 42}
    if args.config:
        loaded = _read_json_object(args.config, "eval config")
        unknown = sorted(set(loaded) - set(_EVAL_KEYS))
        if unknown:
            raise ValueError(
                f"unknown eval config keys {unknown}; valid keys: "
                f"{', '.join(_EVAL_KEYS)}")
        values.update(loaded)
    for key in _EVAL_KEYS:
        flag = getattr(args, key, None)
        if flag is not None:
            values[key] = flag
    if values["split"] not in ("all", "train", "val"):
        raise ValueError(
            f"split must be one of all, train, val; got '{values['split']}'")
    if values["combiner"] not in ("equal", "gls"):
        raise ValueError(
            f"eval supports the parameter-free combiners equal and gls; "
            f"got '{values['combiner']}'")

    model = load_checkpoint(args.checkpoint)
    samples, index = load_dataset(args.dataset)
    if index["num_classes"] != model.num_classes:
        raise DataFormatError(
            f"dataset declares {index['num_classes']} classes but the "
            f"checkpoint's segmentation head has {model.num_classes}")
    if values["split"] != "all":
        train_part, val_part = split(samples, values["train_fraction"],
                                     values["seed"])
        samples = train_part if values["split"] == "train" else val_part

    cfg = ExperimentConfig(
        tasks=model.tasks, num_frames=model.num_frames,
        aggregation=model.aggregation, combiner=values["combiner"],
        batch_size=int(values["batch_size"]),
        huber_delta=float(values["huber_delta"]),
        depth_tol=float(values["depth_tol"]),
        base_channels=model.enc.base_channels,
        decoder_channels=model.decoder_channels,
        num_classes=model.num_classes, dtype=model.dtype.name,
        seed=int(values["seed"]),
        train_fraction=float(values["train_fraction"]))
    res = evaluate(model, samples, cfg)

    rows = [(t, res["loss"][t], res["accuracy"][t]) for t in cfg.tasks]
    if not args.quiet:
        print(f"{len(samples)} samples, split={values['split']}")
        print(f"{'task':<14} {'loss':>14} {'accuracy':>10}")
        for task, loss, acc in rows:
            print(f"{task:<14} {loss:>14.6f} {acc:>10.4f}")
        print(f"combined ({values['combiner']}): {res['combined_loss']:.6f}")
    if args.out:
        outdir = Path(args.out)
        outdir.mkdir(parents=True, exist_ok=True)
        lines = ["task,loss,accuracy"]
        lines += [f"{t},{loss!r},{acc!r}" for t, loss, acc in rows]
        lines.append(f"combined_{values['combiner']},{res['combined_loss']!r},")
        with open(outdir / "eval.csv", "w", encoding="ascii", newline="\n") as fh:
            fh.write("\n".join(lines) + "\n")
    return EXIT_OK


# ---- compare --------------------------------------------------------------------


@dataclass(frozen=True)
class CompareSpec:
    """One sweep: the cross product of combiner configurations, frame
    counts, task subsets, and seeds over a shared experiment base."""

    combiners: tuple
    seeds: tuple
    frame_counts: tuple
    task_sets: tuple
    base: dict

    def __post_init__(self):
        if not self.combiners:
            raise ValueError("compare spec needs at least one combiner")
        if not self.seeds:
            raise ValueError("compare spec needs at least one seed")


_COMBINER_ENTRY_KEYS = ("name", "label", "fls_m", "weights",
                        "dwa_temperature", "init_s")


def _normalize_combiner_entry(entry) -> dict:
    if isinstance(entry, str):
        entry = {"name": entry}
    if not isinstance(entry, dict) or "name" not in entry:
        raise ValueError(
            "each combiner entry must be a name string or an object with a "
            f"'name' key; got {entry!r}")
    unknown = sorted(set(entry) - set(_COMBINER_ENTRY_KEYS))
    if unknown:
        raise ValueError(
            f"unknown combiner entry keys {unknown}; valid keys: "
            f"{', '.join(_COMBINER_ENTRY_KEYS)}")
    return dict(entry)


def _combiner_label(entry: dict) -> str:
    if entry.get("label"):
        return str(entry["label"])
    if entry["name"] == "fls" and "fls_m" in entry:
        return f"fls_m{entry['fls_m']}"
    return str(entry["name"])


def parse_compare_spec(raw: dict) -> CompareSpec:
    valid = ("base", "combiners", "frame_counts", "task_sets", "seeds")
    unknown = sorted(set(raw) - set(valid))
    if unknown:
        raise ValueError(
            f"unknown compare spec keys {unknown}; valid keys: {', '.join(valid)}")
    base = raw.get("base", {})
    if not isinstance(base, dict):
        raise ValueError("compare spec 'base' must be a JSON object")
    combiners = tuple(_normalize_combiner_entry(e)
                      for e in raw.get("combiners", ()))
    labels = [_combiner_label(e) for e in combiners]
    if len(set(labels)) != len(labels):
        raise ValueError(
            f"combiner labels must be unique, got {labels}; add 'label' "
            f"keys to distinguish repeated strategies")
    seeds = tuple(int(s) for s in raw.get("seeds", ()))
    frame_counts = tuple(int(f)
                         for f in raw.get("frame_counts",
                                          [base.get("num_frames", 1)]))
    for f in frame_counts:
        if f not in (1, 2):
            raise ValueError(f"frame_counts entries must be 1 or 2, got {f}")
    if not frame_counts:
        raise ValueError("frame_counts must not be empty")
    task_sets = raw.get("task_sets", [list(base.get("tasks", TASKS))])
    if not task_sets:
        raise ValueError("task_sets must not be empty")
    normalized_sets = []
    for ts in task_sets:
        if isinstance(ts, str):
            ts = [ts]
        ts = tuple(ts)
        if not ts:
            raise ValueError("task_sets entries must not be empty")
        normalized_sets.append(ts)
    return CompareSpec(combiners=combiners, seeds=seeds,
                       frame_counts=frame_counts,
                       task_sets=tuple(normalized_sets), base=base)


def _taskset_slug(task_set) -> str:
    return "+".join(_TASK_ABBREV.get(t, t) for t in task_set)


@dataclass(frozen=True)
class _Job:
    task_set: tuple
    label: str
    frames: int
    seed: int
    cfg_dict: dict

    @property
    def run_id(self) -> str:
        slug = _taskset_slug(self.task_set).replace("+", "-")
        return f"{slug}_{self.label}_f{self.frames}_s{self.seed}"


def _build_jobs(spec: CompareSpec) -> list:
    jobs = []
    for task_set in spec.task_sets:
        for entry in spec.combiners:
            for frames in spec.frame_counts:
                for seed in spec.seeds:
                    cfg = dict(spec.base)
                    # per-entry combiner params replace any base-level ones
                    cfg.pop("fls_m", None)
                    cfg.pop("weights", None)
                    cfg.pop("out", None)
                    cfg.update(tasks=list(task_set), num_frames=frames,
                               seed=seed, combiner=entry["name"])
                    for key in ("fls_m", "weights", "dwa_temperature",
                                "init_s"):
                        if key in entry:
                            cfg[key] = entry[key]
                    jobs.append(_Job(task_set=task_set,
                                     label=_combiner_label(entry),
                                     frames=frames, seed=seed, cfg_dict=cfg))
    return jobs


def _execute_job(job: _Job, samples, runs_dir: Path, quiet: bool) -> dict:
    row = {"task_set": _taskset_slug(job.task_set), "combiner": job.label,
           "frames": job.frames, "seed": job.seed, "status": "ok",
           "metrics": {}, "combined_val_loss": None, "params_total": None,
           "error": ""}
    try:
        cfg = ExperimentConfig.from_dict(job.cfg_dict)
        model, records = train(cfg, samples=samples)
        run_dir = runs_dir / job.run_id
        run_dir.mkdir(parents=True, exist_ok=True)
        write_metrics_csv(records, cfg.tasks, run_dir / "metrics.csv")
        last = records[-1]
        row["metrics"] = {t: (last.val_loss[t], last.accuracy[t])
                          for t in cfg.tasks}
        row["combined_val_loss"] = last.combined_val_loss
        row["params_total"] = model.count_params().total
    except Exception as err:  # a failed run is a result, not a crash
        row["status"] = "failed"
        row["error"] = f"{type(err).__name__}: {err}"
    if not quiet:
        if row["status"] == "ok":
            accs = " ".join(f"{_TASK_ABBREV.get(t, t)}={a:.4f}"
                            for t, (_, a) in row["metrics"].items())
            print(f"[{job.run_id}] ok  {accs}")
        else:
            print(f"[{job.run_id}] failed  {row['error']}")
    return row


def _row_sort_key(row):
    return (row["task_set"].count("+"), row["task_set"], row["combiner"],
            row["frames"], row["seed"])


def _median_rows(rows) -> list:
    groups = {}
    for row in rows:
        groups.setdefault(
            (row["task_set"], row["combiner"], row["frames"]), []).append(row)
    out = []
    for (task_set, combiner, frames), members in groups.items():
        ok = [r for r in members if r["status"] == "ok"]
        med = {"task_set": task_set, "combiner": combiner, "frames": frames,
               "seed": "median", "metrics": {}, "combined_val_loss": None,
               "params_total": None, "error": ""}
        if not ok:
            med["status"] = "failed"
            med["error"] = "no successful runs"
        else:
            med["status"] = "ok"
            for task in ok[0]["metrics"]:
                med["metrics"][task] = (
                    statistics.median(r["metrics"][task][0] for r in ok),
                    statistics.median(r["metrics"][task][1] for r in ok))
            med["combined_val_loss"] = statistics.median(
                r["combined_val_loss"] for r in ok)
            med["params_total"] = int(statistics.median(
                r["params_total"] for r in ok))
        out.append(med)
    return out


def _summary_csv_lines(rows) -> list:
    cols = ["task_set", "combiner", "frames", "seed", "status"]
    for task in TASKS:
        cols += [f"val_loss_{task}", f"acc_{task}"]
    cols += ["combined_val_loss", "params_total", "error"]
    lines = [",".join(cols)]
    for row in rows:
        cells = [row["task_set"], row["combiner"], str(row["frames"]),
                 str(row["seed"]), row["status"]]
        for task in TASKS:
            if task in row["metrics"]:
                loss, acc = row["metrics"][task]
                cells += [repr(loss), repr(acc)]
            else:
                cells += ["", ""]
        cells.append("" if row["combined_val_loss"] is None
                     else repr(row["combined_val_loss"]))
        cells.append("" if row["params_total"] is None
                     else str(row["params_total"]))
        cells.append(row["error"].replace(",", ";").replace("\n", " "))
        lines.append(",".join(cells))
    return lines


def _summary_text(rows, medians) -> str:
    by_set = {}
    for row in rows:
        by_set.setdefault(row["task_set"], []).append(row)
    med_by_group = {(m["task_set"], m["combiner"], m["frames"]): m
                    for m in medians}
    chunks = []
    for task_set in sorted(by_set, key=lambda s: (s.count("+"), s)):
        members = by_set[task_set]
        tasks = [t for t in TASKS
                 if any(t in r["metrics"] for r in members)]
        header = (["combiner", "frames", "seed"]
                  + [f"acc_{_TASK_ABBREV[t]}" for t in tasks]
                  + ["combined_val", "status"])
        table = [header]

        def cells_for(row):
            cells = [row["combiner"], str(row["frames"]), str(row["seed"])]
            for task in tasks:
                if task in row["metrics"]:
                    cells.append(f"{row['metrics'][task][1]:.4f}")
                else:
                    cells.append("-")
            cells.append("-" if row["combined_val_loss"] is None
                         else f"{row['combined_val_loss']:.6f}")
            cells.append(row["status"])
            return cells

        seen_groups = []
        for row in members:
            key = (row["task_set"], row["combiner"], row["frames"])
            if key not in seen_groups:
                seen_groups.append(key)
        for key in seen_groups:
            for row in members:
                if (row["task_set"], row["combiner"], row["frames"]) == key:
                    table.append(cells_for(row))
            if key in med_by_group:
                table.append(cells_for(med_by_group[key]))
        widths = [max(len(r[i]) for r in table) for i in range(len(header))]
        lines = [f"== {task_set.count('+') + 1}-task: {task_set} =="]
        for r in table:
            lines.append("  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip())
        chunks.append("\n".join(lines))
    return "\n\n".join(chunks) + "\n"


def _params_csv_lines(jobs) -> list:
    lines = ["task_set,frames,aggregation,encoder_params,"
             + ",".join(f"decoder_params_{t}" for t in TASKS)
             + ",total_params"]
    seen = set()
    for job in jobs:
        key = (job.task_set, job.frames)
        if key in seen:
            continue
        seen.add(key)
        try:
            cfg = ExperimentConfig.from_dict(job.cfg_dict)
            model = build_model(
                EncoderConfig(base_channels=cfg.base_channels), cfg.tasks,
                cfg.num_frames, cfg.aggregation, cfg.num_classes, seed=0,
                decoder_channels=cfg.decoder_channels)
        except Exception:
            continue  # the summary row already records the failure
        report = model.count_params()
        cells = [_taskset_slug(job.task_set), str(job.frames),
                 cfg.aggregation, str(report.encoder_params)]
        for task in TASKS:
            cells.append(str(report.decoder_params.get(task, "")))
        cells.append(str(report.total))
        lines.append(",".join(cells))
    return lines


def cmd_compare(args) -> int:
    spec = parse_compare_spec(_read_json_object(args.spec, "compare spec"))
    if "dataset" not in spec.base:
        raise ValueError("compare spec base must set 'dataset'")
    samples, index = load_dataset(spec.base["dataset"])
    expected_classes = int(spec.base.get("num_classes", 4))
    if index["num_classes"] != expected_classes:
        raise ValueError(
            f"dataset declares {index['num_classes']} classes, compare base "
            f"expects {expected_classes}")

    jobs = _build_jobs(spec)
    outdir = Path(args.out)
    runs_dir = outdir / "runs"
    outdir.mkdir(parents=True, exist_ok=True)

    if args.jobs > 1:
        with ThreadPoolExecutor(max_workers=args.jobs) as pool:
            rows = list(pool.map(
                lambda j: _execute_job(j, samples, runs_dir, args.quiet),
                jobs))
    else:
        rows = [_execute_job(j, samples, runs_dir, args.quiet) for j in jobs]

    rows.sort(key=_row_sort_key)
    medians = _median_rows(rows)
    medians.sort(key=lambda m: (m["task_set"].count("+"), m["task_set"],
                                m["combiner"], m["frames"]))

    with open(outdir / "summary.csv", "w", encoding="ascii", newline="\n") as fh:
        fh.write("\n".join(_summary_csv_lines(rows + medians)) + "\n")
    with open(outdir / "params.csv", "w", encoding="ascii", newline="\n") as fh:
        fh.write("\n".join(_params_csv_lines(jobs)) + "\n")
    with open(outdir / "summary.txt", "w", encoding="ascii", newline="\n") as fh:
        fh.write(_summary_text(rows, medians))

    failures = sum(r["status"] == "failed" for r in rows)
    if not args.quiet:
        print(f"{len(rows)} runs, {failures} failed; wrote "
              f"{outdir / 'summary.csv'}, {outdir / 'summary.txt'}, "
              f"{outdir / 'params.csv'}")
    return EXIT_OK


# ---- parser ---------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="geomtl",
                     description="Multi-task learning testbed: synthetic "
                                 "scenes, combiner training, and sweeps.")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    gen = sub.add_parser("generate", help="write a synthetic dataset")
    gen.add_argument("--out", required=True, help="output directory")
    gen.add_argument("--config", help="JSON file of scene keys; flags override")
    gen.add_argument("--count", type=int, help="number of samples (default 500)")
    gen.add_argument("--seed", type=int, help="generator seed (default 0)")
    gen.add_argument("--height", type=int)
    gen.add_argument("--width", type=int)
    gen.add_argument("--num-classes", type=int, dest="num_classes")
    gen.add_argument("--min-objects", type=int, dest="min_objects")
    gen.add_argument("--max-objects", type=int, dest="max_objects")
    gen.add_argument("--min-size", type=int, dest="min_size")
    gen.add_argument("--max-size", type=int, dest="max_size")
    gen.add_argument("--depth-min", type=float, dest="depth_min")
    gen.add_argument("--depth-max", type=float, dest="depth_max")
    gen.add_argument("--moving-fraction", type=float, dest="moving_fraction")
    gen.add_argument("--max-displacement", type=int, dest="max_displacement")
    gen.add_argument("--noise-sigma", type=float, dest="noise_sigma")
    gen.add_argument("--png", action="store_const", const=True, default=None,
                     help="also mirror frames and labels as PNGs")
    gen.add_argument("--quiet", action="store_true")
    gen.set_defaults(func=cmd_generate)

    tr = sub.add_parser("train", help="train one model from a config")
    tr.add_argument("--config", help="JSON experiment config; flags override")
    tr.add_argument("--dataset", help="dataset directory")
    tr.add_argument("--out", help="output directory for CSV and checkpoint")
    tr.add_argument("--seed", type=int)
    tr.add_argument("--tasks", help="comma list, e.g. segmentation,depth")
    tr.add_argument("--combiner")
    tr.add_argument("--fls-m", type=int, dest="fls_m")
    tr.add_argument("--weights", help="comma list of positive floats")
    tr.add_argument("--dwa-temperature", type=float, dest="dwa_temperature")
    tr.add_argument("--epochs", type=int)
    tr.add_argument("--batch-size", type=int, dest="batch_size")
    tr.add_argument("--lr", type=float)
    tr.add_argument("--optimizer")
    tr.add_argument("--num-frames", type=int, dest="num_frames")
    tr.add_argument("--aggregation")
    tr.add_argument("--base-channels", type=int, dest="base_channels")
    tr.add_argument("--decoder-channels", type=int, dest="decoder_channels")
    tr.add_argument("--num-classes", type=int, dest="num_classes")
    tr.add_argument("--dtype")
    tr.add_argument("--train-fraction", type=float, dest="train_fraction")
    tr.add_argument("--quiet", action="store_true")
    tr.set_defaults(func=cmd_train)

    ev = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--dataset", required=True)
    ev.add_argument("--config", help="JSON file of eval keys; flags override")
    ev.add_argument("--out", help="directory for eval.csv")
    ev.add_argument("--batch-size", type=int, dest="batch_size")
    ev.add_argument("--huber-delta", type=float, dest="huber_delta")
    ev.add_argument("--depth-tol", type=float, dest="depth_tol")
    ev.add_argument("--combiner", choices=("equal", "gls"))
    ev.add_argument("--split", choices=("all", "train", "val"))
    ev.add_argument("--train-fraction", type=float, dest="train_fraction")
    ev.add_argument("--seed", type=int, help="split seed (default 42)")
    ev.add_argument("--quiet", action="store_true")
    ev.set_defaults(func=cmd_eval)

    cp = sub.add_parser("compare", help="sweep combiners and summarize")
    cp.add_argument("--spec", "--config", dest="spec", required=True,
                    help="JSON compare spec")
    cp.add_argument("--out", required=True, help="output directory")
    cp.add_argument("--jobs", type=int, default=1,
                    help="concurrent runs (default 1)")
    cp.add_argument("--quiet", action="store_true")
    cp.set_defaults(func=cmd_compare)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    try:
        return args.func(args)
    except NumericAbort as err:
        print(f"numeric abort: {err}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataFormatError, CheckpointError, PlacementError, LabelError) as err:
        print(f"data error: {err}", file=sys.stderr)
        return EXIT_DATA
    except OSError as err:
        print(f"data error: {err}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
