"""CLI tests: subcommands, exit codes, output files."""

import json

import numpy as np
import pytest

from damflow.cli import main
from damflow.data import ingest_dataset
from damflow.lstm import LstmDims, init_weights, load_checkpoint

TRAIN_ARGS = ["--train-start", "1990-01-01", "--train-end", "1991-12-31",
              "--test-start", "1992-01-01", "--test-end", "1992-03-01"]


@pytest.fixture(scope="module")
def synth_root(tmp_path_factory):
    root = tmp_path_factory.mktemp("synth")
    code = main(["--out", str(root), "synthgen", "--n-per-regime", "2",
                 "--days", "800", "--master-seed", "31"])
    assert code == 0
    return root


def test_help_exits_zero(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["--help"])
    assert exc.value.code == 0
    out = capsys.readouterr().out
    for sub in ("ingest", "stratify", "train", "evaluate", "experiment", "synthgen", "report"):
        assert sub in out


def test_unknown_flag_fails_fast():
    with pytest.raises(SystemExit) as exc:
        main(["ingest", "--bogus"])
    assert exc.value.code == 1


def test_missing_data_root_is_data_error(tmp_path, monkeypatch):
    monkeypatch.delenv("DAMFLOW_DATA", raising=False)
    assert main(["ingest"]) == 2
    assert main(["--data", str(tmp_path / "nope"), "ingest"]) == 2


def test_ingest_valid_root(synth_root, capsys):
    assert main(["--data", str(synth_root), "ingest"]) == 0
    assert "loaded 6 basins" in capsys.readouterr().out


def test_ingest_env_var_default(synth_root, monkeypatch):
    monkeypatch.setenv("DAMFLOW_DATA", str(synth_root))
    assert main(["ingest"]) == 0


def test_ingest_reports_rejections(synth_root, tmp_path, capsys):
    import shutil

    bad_root = tmp_path / "bad"
    shutil.copytree(synth_root, bad_root)
    flow = bad_root / "flow" / "syn-zero-000.csv"
    lines = flow.read_text().splitlines()
    day = lines[3].split(",")[0]
    lines[3] = f"{day},-5.0"
    flow.write_text("\n".join(lines) + "\n")
    assert main(["--data", str(bad_root), "ingest"]) == 2
    out = capsys.readouterr().out
    assert "rejected" in out and "syn-zero-000" in out


def test_stratify_writes_csv(synth_root, tmp_path, capsys):
    assert main(["--data", str(synth_root), "--out", str(tmp_path), "stratify"]) == 0
    text = (tmp_path / "stratification.csv").read_text().splitlines()
    assert text[0] == "gauge_id,dor,category,major_purposes,diversion,excluded_reason"
    assert len(text) == 7  # header + 6 basins
    assert "zero=2 small=2 large=2" in capsys.readouterr().out


def test_train_zero_epochs_checkpoint_is_initialization(synth_root, tmp_path):
    code = main([
        "--data", str(synth_root), "--out", str(tmp_path), "train",
        "--composition", "Z", "--epochs", "0", "--hidden", "4",
        "--batch", "4", "--sequence", "90", "--seeds", "7", "--no-eval",
        *TRAIN_ARGS,
    ])
    assert code == 0
    ckpt = tmp_path / "lstm-z" / "checkpoints" / "7" / "epoch0.json"
    weights, seed = load_checkpoint(ckpt)
    assert seed == 7
    expected = init_weights(LstmDims(d_in_raw=37, hidden=4), rng_seed=7)
    for (_, a), (_, b) in zip(weights.params(), expected.params()):
        np.testing.assert_array_equal(a, b)


def _plan_doc(synth_root):
    dataset, _ = ingest_dataset(synth_root)
    zero_ids = sorted(g for g in dataset.gauge_ids if g.startswith("syn-zero"))
    return {
        "name": "cli-exp",
        "train_ids": zero_ids,
        "test_sets": {"zero": zero_ids},
        "train_window": ["1990-01-01", "1991-12-31"],
        "test_window": ["1992-01-01", "1992-03-01"],
        "config": {
            "batch_size": 4, "sequence_length": 90, "hidden_size": 4,
            "dropout_p": 0.3, "epochs": 1, "iterations_per_epoch": 2,
            "warmup_days": 120,
        },
        "seeds": [3],
    }


def test_experiment_run_idempotent(synth_root, tmp_path):
    plan_path = tmp_path / "plan.json"
    plan_path.write_text(json.dumps(_plan_doc(synth_root)))
    out_a, out_b = tmp_path / "a", tmp_path / "b"
    assert main(["--data", str(synth_root), "--out", str(out_a),
                 "experiment", "run", str(plan_path)]) == 0
    assert main(["--data", str(synth_root), "--out", str(out_b),
                 "experiment", "run", str(plan_path)]) == 0
    a = (out_a / "cli-exp" / "metrics_zero.csv").read_bytes()
    b = (out_b / "cli-exp" / "metrics_zero.csv").read_bytes()
    assert a == b


def test_experiment_missing_plan(synth_root, tmp_path):
    assert main(["--data", str(synth_root), "--out", str(tmp_path),
                 "experiment", "run", str(tmp_path / "absent.json")]) == 2


def test_evaluate_reproduces_metrics(synth_root, tmp_path):
    plan_path = tmp_path / "plan.json"
    plan_path.write_text(json.dumps(_plan_doc(synth_root)))
    out = tmp_path / "run"
    assert main(["--data", str(synth_root), "--out", str(out),
                 "experiment", "run", str(plan_path)]) == 0
    before = (out / "cli-exp" / "metrics_zero.csv").read_bytes()
    assert main(["--data", str(synth_root), "evaluate",
                 "--run", str(out / "cli-exp")]) == 0
    after = (out / "cli-exp" / "metrics_zero.csv").read_bytes()
    assert before == after


def test_evaluate_missing_run(synth_root, tmp_path):
    assert main(["--data", str(synth_root), "evaluate",
                 "--run", str(tmp_path / "ghost")]) == 2


def test_report_annotates_infinite_flv(synth_root, tmp_path):
    # zero out the low flows of one test basin so its FLV is the sentinel
    import shutil

    root = tmp_path / "data"
    shutil.copytree(synth_root, root)
    gid = "syn-zero-000"
    flow = root / "flow" / f"{gid}.csv"
    lines = flow.read_text().splitlines()
    # test window starts 1992-01-01 = row 731 (+1 header); zero out 20 days
    for k in range(732, 752):
        day = lines[k].split(",")[0]
        lines[k] = f"{day},0.0"
    flow.write_text("\n".join(lines) + "\n")

    plan_path = tmp_path / "plan.json"
    plan_path.write_text(json.dumps(_plan_doc(root)))
    out = tmp_path / "run"
    assert main(["--data", str(root), "--out", str(out),
                 "experiment", "run", str(plan_path)]) == 0

    rep = tmp_path / "report"
    assert main(["--data", str(root), "--out", str(rep), "report",
                 "--run", str(out / "cli-exp"), "--test-set", "zero"]) == 0

    cdf = (rep / "cdf_flv.csv").read_text().splitlines()
    assert cdf[0].startswith("#") and "n_infinite_excluded=1" in cdf[0]
    assert cdf[1] == "value,cum_fraction"

    table = (rep / "basin_report.csv").read_text().splitlines()
    assert table[0].startswith("gauge_id,dor,category,major_purposes,diversion,")
    row = next(line for line in table if line.startswith(gid))
    assert ",inf" in row

    box = (rep / "boxplot_nse.csv").read_text().splitlines()
    assert box[1] == "min,q1,median,q3,max"


def test_report_missing_artifacts(synth_root, tmp_path):
    assert main(["--data", str(synth_root), "--out", str(tmp_path), "report",
                 "--run", str(tmp_path / "nothing")]) == 2
