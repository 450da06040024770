"""End-to-end command-line checks: exit codes, byte-level determinism of
written artifacts, and consistency between the compare sweep and single
training runs."""

import json
from pathlib import Path

import pytest

from geomtl.cli import main, parse_compare_spec

GEN_FLAGS = ["--count", "16", "--seed", "3", "--height", "16", "--width", "24",
             "--min-objects", "1", "--max-objects", "2",
             "--min-size", "3", "--max-size", "5"]
TRAIN_FLAGS = ["--epochs", "2", "--base-channels", "2", "--batch-size", "8",
               "--dtype", "float32", "--quiet"]


def make_data(path, *extra):
    rc = main(["generate", "--out", str(path), *GEN_FLAGS, *extra, "--quiet"])
    assert rc == 0
    return path


def dir_bytes(root):
    root = Path(root)
    return {p.relative_to(root).as_posix(): p.read_bytes()
            for p in sorted(root.rglob("*")) if p.is_file()}


# ---- exit codes ------------------------------------------------------------------


def test_usage_errors_exit_one(tmp_path, capsys):
    assert main([]) == 1
    assert main(["frobnicate"]) == 1
    assert main(["generate"]) == 1  # --out is required
    assert main(["train", "--dataset", str(tmp_path), "--out",
                 str(tmp_path / "o"), "--epochs", "not-a-number"]) == 1
    capsys.readouterr()


def test_help_exits_zero(capsys):
    assert main(["--help"]) == 0
    assert main(["train", "--help"]) == 0
    capsys.readouterr()


def test_unknown_combiner_lists_valid_names(tmp_path, capsys):
    data = make_data(tmp_path / "d")
    rc = main(["train", "--dataset", str(data), "--out", str(tmp_path / "o"),
               "--combiner", "harmonic", *TRAIN_FLAGS])
    assert rc == 1
    err = capsys.readouterr().err
    for name in ("gls", "fls", "equal", "weighted", "uncertainty", "dwa"):
        assert name in err


def test_missing_dataset_exits_two(tmp_path, capsys):
    rc = main(["train", "--dataset", str(tmp_path / "nowhere"),
               "--out", str(tmp_path / "o"), *TRAIN_FLAGS])
    assert rc == 2
    assert "error" in capsys.readouterr().err


def test_corrupt_checkpoint_exits_two(tmp_path, capsys):
    data = make_data(tmp_path / "d")
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(b"\x00" * 32)
    rc = main(["eval", "--checkpoint", str(bad), "--dataset", str(data),
               "--quiet"])
    assert rc == 2
    capsys.readouterr()


@pytest.mark.filterwarnings("ignore:overflow encountered")
def test_numeric_abort_exits_three_and_names_task(tmp_path, capsys):
    data = make_data(tmp_path / "d")
    rc = main(["train", "--dataset", str(data), "--out", str(tmp_path / "o"),
               "--combiner", "equal", "--optimizer", "sgd", "--lr", "1e30",
               "--epochs", "3", "--base-channels", "2", "--batch-size", "8",
               "--dtype", "float32", "--quiet"])
    assert rc == 3
    err = capsys.readouterr().err
    assert "numeric abort" in err
    assert "task" in err


def test_infeasible_scene_exits_two(tmp_path, capsys):
    rc = main(["generate", "--out", str(tmp_path / "d"), "--count", "4",
               "--height", "24", "--width", "24", "--min-objects", "4",
               "--max-objects", "5", "--min-size", "11", "--max-size", "11",
               "--quiet"])
    assert rc == 2
    assert "place" in capsys.readouterr().err
    capsys.readouterr()


# ---- generate ---------------------------------------------------------------------


def test_generate_byte_identical(tmp_path, capsys):
    make_data(tmp_path / "a")
    make_data(tmp_path / "b")
    assert dir_bytes(tmp_path / "a") == dir_bytes(tmp_path / "b")
    capsys.readouterr()


def test_generate_summary_reports_motion_pixels(tmp_path, capsys):
    rc = main(["generate", "--out", str(tmp_path / "d"), *GEN_FLAGS,
               "--moving-fraction", "0"])
    assert rc == 0
    out = capsys.readouterr().out
    assert "0 motion-positive pixels" in out
    assert "16 samples" in out


def test_generate_config_file_with_flag_override(tmp_path, capsys):
    cfg = tmp_path / "scene.json"
    cfg.write_text(json.dumps({"height": 16, "width": 24, "count": 16,
                               "seed": 3, "min_objects": 1, "max_objects": 2,
                               "min_size": 3, "max_size": 5}))
    rc = main(["generate", "--out", str(tmp_path / "a"), "--config", str(cfg),
               "--quiet"])
    assert rc == 0
    # flags win over config file values
    rc = main(["generate", "--out", str(tmp_path / "b"), "--config", str(cfg),
               "--count", "4", "--quiet"])
    assert rc == 0
    a = json.loads((tmp_path / "a" / "index.json").read_text())
    b = json.loads((tmp_path / "b" / "index.json").read_text())
    assert len(a["samples"]) == 16
    assert len(b["samples"]) == 4
    capsys.readouterr()


def test_generate_rejects_unknown_config_key(tmp_path, capsys):
    cfg = tmp_path / "scene.json"
    cfg.write_text(json.dumps({"heigth": 16}))
    rc = main(["generate", "--out", str(tmp_path / "d"), "--config", str(cfg),
               "--quiet"])
    assert rc == 1
    assert "heigth" in capsys.readouterr().err


# ---- train ------------------------------------------------------------------------


def test_train_rerun_byte_identical_csv(tmp_path, capsys):
    data = make_data(tmp_path / "d")
    for name in ("r1", "r2"):
        rc = main(["train", "--dataset", str(data),
                   "--out", str(tmp_path / name), *TRAIN_FLAGS])
        assert rc == 0
    assert ((tmp_path / "r1" / "metrics.csv").read_bytes()
            == (tmp_path / "r2" / "metrics.csv").read_bytes())
    assert ((tmp_path / "r1" / "model.ckpt").read_bytes()
            == (tmp_path / "r2" / "model.ckpt").read_bytes())
    capsys.readouterr()


def test_train_artifacts_complete_and_loadable(tmp_path, capsys):
    from geomtl.model import load_checkpoint
    from geomtl.training import ExperimentConfig

    data = make_data(tmp_path / "d")
    out = tmp_path / "run"
    rc = main(["train", "--dataset", str(data), "--out", str(out),
               "--combiner", "dwa", *TRAIN_FLAGS])
    assert rc == 0
    model = load_checkpoint(out / "model.ckpt")
    assert model.tasks == ("segmentation", "depth", "motion")
    cfg = ExperimentConfig.from_dict(json.loads((out / "config.json").read_text()))
    assert cfg.combiner == "dwa"
    header = (out / "metrics.csv").read_text().splitlines()[0]
    assert "val_loss_segmentation" in header
    assert "val_loss_depth" in header
    assert "val_loss_motion" in header
    capsys.readouterr()


def test_train_config_file_with_flag_override(tmp_path, capsys):
    data = make_data(tmp_path / "d")
    cfg = tmp_path / "exp.json"
    cfg.write_text(json.dumps({
        "dataset": str(data), "epochs": 1, "base_channels": 2,
        "batch_size": 8, "dtype": "float32", "combiner": "gls"}))
    out = tmp_path / "run"
    rc = main(["train", "--config", str(cfg), "--out", str(out),
               "--combiner", "equal", "--quiet"])
    assert rc == 0
    saved = json.loads((out / "config.json").read_text())
    assert saved["combiner"] == "equal"
    assert saved["epochs"] == 1
    capsys.readouterr()


def test_train_unknown_config_key_exits_one(tmp_path, capsys):
    data = make_data(tmp_path / "d")
    cfg = tmp_path / "exp.json"
    cfg.write_text(json.dumps({"dataset": str(data), "learning_rate": 0.1}))
    rc = main(["train", "--config", str(cfg), "--out", str(tmp_path / "o"),
               "--quiet"])
    assert rc == 1
    assert "learning_rate" in capsys.readouterr().err


def test_train_requires_out(tmp_path, capsys):
    data = make_data(tmp_path / "d")
    rc = main(["train", "--dataset", str(data), *TRAIN_FLAGS])
    assert rc == 1
    assert "--out" in capsys.readouterr().err


# ---- eval -------------------------------------------------------------------------


def trained_run(tmp_path, capsys):
    data = make_data(tmp_path / "d")
    out = tmp_path / "run"
    assert main(["train", "--dataset", str(data), "--out", str(out),
                 *TRAIN_FLAGS]) == 0
    capsys.readouterr()
    return data, out


def test_eval_prints_and_writes_csv(tmp_path, capsys):
    data, run = trained_run(tmp_path, capsys)
    rc = main(["eval", "--checkpoint", str(run / "model.ckpt"),
               "--dataset", str(data), "--out", str(tmp_path / "ev"),
               "--split", "val", "--seed", "42", "--train-fraction", "0.8"])
    assert rc == 0
    out = capsys.readouterr().out
    assert "segmentation" in out and "depth" in out and "motion" in out
    lines = (tmp_path / "ev" / "eval.csv").read_text().splitlines()
    assert lines[0] == "task,loss,accuracy"
    assert len(lines) == 5  # three tasks plus the combined row


def test_eval_class_mismatch_exits_two(tmp_path, capsys):
    data, run = trained_run(tmp_path, capsys)
    other = make_data(tmp_path / "d6", "--num-classes", "6")
    rc = main(["eval", "--checkpoint", str(run / "model.ckpt"),
               "--dataset", str(other), "--quiet"])
    assert rc == 2
    assert "classes" in capsys.readouterr().err


def test_eval_val_split_matches_final_train_record(tmp_path, capsys):
    data, run = trained_run(tmp_path, capsys)
    rc = main(["eval", "--checkpoint", str(run / "model.ckpt"),
               "--dataset", str(data), "--out", str(tmp_path / "ev"),
               "--split", "val", "--seed", "42", "--train-fraction", "0.8",
               "--quiet"])
    assert rc == 0
    rows = {line.split(",")[0]: line.split(",")
            for line in (tmp_path / "ev" / "eval.csv").read_text().splitlines()[1:]}
    metrics = (run / "metrics.csv").read_text().splitlines()
    header = metrics[0].split(",")
    final = metrics[-1].split(",")
    for task in ("segmentation", "depth", "motion"):
        got = float(rows[task][1])
        want = float(final[header.index(f"val_loss_{task}")])
        assert got == pytest.approx(want, rel=1e-6)
        assert float(rows[task][2]) == float(final[header.index(f"acc_{task}")])


# ---- compare ----------------------------------------------------------------------


def test_compare_spec_validation():
    with pytest.raises(ValueError, match="combiner"):
        parse_compare_spec({"combiners": [], "seeds": [0]})
    with pytest.raises(ValueError, match="seed"):
        parse_compare_spec({"combiners": ["gls"], "seeds": []})
    with pytest.raises(ValueError, match="frame_counts"):
        parse_compare_spec({"combiners": ["gls"], "seeds": [0],
                            "frame_counts": [3]})
    with pytest.raises(ValueError, match="unknown compare spec keys"):
        parse_compare_spec({"combiners": ["gls"], "seeds": [0], "combiner": "x"})
    with pytest.raises(ValueError, match="unique"):
        parse_compare_spec({"combiners": ["gls", "gls"], "seeds": [0]})
    with pytest.raises(ValueError, match="name"):
        parse_compare_spec({"combiners": [{"fls_m": 1}], "seeds": [0]})


def compare_spec_file(tmp_path, data, **overrides):
    spec = {
        "base": {"dataset": str(data), "epochs": 2, "base_channels": 2,
                 "batch_size": 8, "dtype": "float32"},
        "combiners": ["gls"],
        "seeds": [0],
    }
    spec.update(overrides)
    path = tmp_path / "spec.json"
    path.write_text(json.dumps(spec))
    return path


def test_compare_single_run_matches_train(tmp_path, capsys):
    data = make_data(tmp_path / "d")
    run_out = tmp_path / "run"
    assert main(["train", "--dataset", str(data), "--out", str(run_out),
                 "--combiner", "gls", "--seed", "0", *TRAIN_FLAGS]) == 0
    spec = compare_spec_file(tmp_path, data)
    sweep = tmp_path / "sweep"
    assert main(["compare", "--spec", str(spec), "--out", str(sweep),
                 "--quiet"]) == 0
    capsys.readouterr()

    metrics = (run_out / "metrics.csv").read_text().splitlines()
    header, final = metrics[0].split(","), metrics[-1].split(",")
    summary = (sweep / "summary.csv").read_text().splitlines()
    scol = summary[0].split(",")
    seed_row = next(line.split(",") for line in summary[1:]
                    if line.split(",")[scol.index("seed")] == "0")
    for task in ("segmentation", "depth", "motion"):
        assert (seed_row[scol.index(f"val_loss_{task}")]
                == final[header.index(f"val_loss_{task}")])
        assert (seed_row[scol.index(f"acc_{task}")]
                == final[header.index(f"acc_{task}")])
    # the per-run curve file matches the standalone train run byte for byte
    run_csvs = list((sweep / "runs").rglob("metrics.csv"))
    assert len(run_csvs) == 1
    assert run_csvs[0].read_bytes() == (run_out / "metrics.csv").read_bytes()


def test_compare_median_and_grouping(tmp_path, capsys):
    data = make_data(tmp_path / "d")
    spec = compare_spec_file(tmp_path, data, combiners=["gls", "equal"],
                             seeds=[0, 1, 2])
    sweep = tmp_path / "sweep"
    assert main(["compare", "--spec", str(spec), "--out", str(sweep),
                 "--quiet"]) == 0
    capsys.readouterr()
    lines = (sweep / "summary.csv").read_text().splitlines()
    cols = lines[0].split(",")
    rows = [line.split(",") for line in lines[1:]]
    seeds = [r[cols.index("seed")] for r in rows]
    assert seeds.count("median") == 2
    med = next(r for r in rows if r[cols.index("seed")] == "median"
               and r[cols.index("combiner")] == "gls")
    gls_accs = sorted(float(r[cols.index("acc_segmentation")]) for r in rows
                      if r[cols.index("combiner")] == "gls"
                      and r[cols.index("seed")] != "median")
    assert float(med[cols.index("acc_segmentation")]) == gls_accs[1]
    text = (sweep / "summary.txt").read_text()
    assert "== 3-task: seg+dep+mot ==" in text
    assert "median" in text


def test_compare_param_accounting(tmp_path, capsys):
    data = make_data(tmp_path / "d")
    spec = compare_spec_file(
        tmp_path, data, frame_counts=[1, 2],
        task_sets=[["segmentation"], ["segmentation", "depth", "motion"]])
    sweep = tmp_path / "sweep"
    assert main(["compare", "--spec", str(spec), "--out", str(sweep),
                 "--quiet"]) == 0
    capsys.readouterr()
    lines = (sweep / "params.csv").read_text().splitlines()
    cols = lines[0].split(",")
    rows = [line.split(",") for line in lines[1:]]
    assert len(rows) == 4
    encoders = {r[cols.index("encoder_params")] for r in rows}
    assert len(encoders) == 1  # shared encoder is identical everywhere
    by_key = {(r[cols.index("task_set")], r[cols.index("frames")]): r
              for r in rows}
    # two-frame concat rows grow over one-frame rows by decoder input width only
    for ts in ("seg", "seg+dep+mot"):
        one = int(by_key[(ts, "1")][cols.index("total_params")])
        two = int(by_key[(ts, "2")][cols.index("total_params")])
        assert two > one
    growth_1task = (int(by_key[("seg", "2")][cols.index("total_params")])
                    - int(by_key[("seg", "1")][cols.index("total_params")]))
    growth_seg_in_3task = (
        int(by_key[("seg+dep+mot", "2")][cols.index("decoder_params_segmentation")])
        - int(by_key[("seg+dep+mot", "1")][cols.index("decoder_params_segmentation")]))
    assert growth_1task == growth_seg_in_3task


def test_compare_records_failures_and_continues(tmp_path, capsys):
    data = make_data(tmp_path / "d")
    # weighted without weights cannot build a config; gls still runs
    spec = compare_spec_file(tmp_path, data, combiners=["gls", "weighted"])
    sweep = tmp_path / "sweep"
    assert main(["compare", "--spec", str(spec), "--out", str(sweep),
                 "--quiet"]) == 0
    capsys.readouterr()
    lines = (sweep / "summary.csv").read_text().splitlines()
    cols = lines[0].split(",")
    status = {r.split(",")[cols.index("combiner")]:
              r.split(",")[cols.index("status")] for r in lines[1:]}
    assert status["gls"] == "ok"
    assert status["weighted"] == "failed"


def test_compare_threaded_matches_serial(tmp_path, capsys):
    data = make_data(tmp_path / "d")
    spec = compare_spec_file(tmp_path, data, combiners=["gls", "equal"],
                             seeds=[0, 1])
    for name, jobs in (("s1", "1"), ("s2", "2")):
        assert main(["compare", "--spec", str(spec),
                     "--out", str(tmp_path / name), "--jobs", jobs,
                     "--quiet"]) == 0
    capsys.readouterr()
    assert ((tmp_path / "s1" / "summary.csv").read_bytes()
            == (tmp_path / "s2" / "summary.csv").read_bytes())
    assert dir_bytes(tmp_path / "s1" / "runs") == dir_bytes(tmp_path / "s2" / "runs")
