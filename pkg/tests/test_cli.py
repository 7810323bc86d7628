import csv
import json
import subprocess
import sys

import pytest

from statexplain.cli import COMMANDS, main
from statexplain.evaluators import METRICS
from statexplain.policy import load_weights


def run(*argv):
    return main([str(a) for a in argv])


def _data_columns(path):
    """Attribution CSV without the wall-clock column."""
    with open(path, newline="") as fh:
        return [row[:-1] for row in csv.reader(fh)]


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert run("train-policy", "--env", "cartpole", "--out", root / "p.bin", "--seed", 0, "--max-steps", 8000) == 0
    assert run("generate-dataset", "--env", "cartpole", "--policy", root / "p.bin", "--episodes", 5,
               "--max-steps", 80, "--out", root / "d.csv", "--seed", 1) == 0
    return root


def test_missing_env_is_usage_error(capsys, tmp_path):
    assert run("train-policy", "--out", tmp_path / "p.bin", "--seed", 1) == 1
    assert "usage" in capsys.readouterr().err


def test_bogus_metric_lists_choices(capsys):
    code = run("evaluate", "--metric", "bogus", "--env", "cartpole", "--policy", "p", "--dataset", "d",
               "--attributions", "a", "--seed", 0)
    assert code == 1
    err = capsys.readouterr().err
    assert all(m in err for m in METRICS)


def test_unknown_flag_rejected():
    assert run("report", "--input", "x", "--format", "json", "--out", "y", "--colour", "red") == 1


@pytest.mark.parametrize("command", ["train-policy", "generate-dataset", "explain", "evaluate"])
def test_seed_is_mandatory(command, capsys):
    base = {
        "train-policy": ["--env", "cartpole", "--out", "p.bin"],
        "generate-dataset": ["--env", "cartpole", "--policy", "p", "--episodes", "1", "--out", "d.csv"],
        "explain": ["--method", "sarfa", "--env", "cartpole", "--policy", "p", "--dataset", "d", "--samples", "1",
                    "--out", "a.csv"],
        "evaluate": ["--metric", "aim", "--env", "cartpole", "--policy", "p", "--dataset", "d", "--attributions", "a"],
    }[command]
    assert run(command, *base) == 1
    assert "--seed" in capsys.readouterr().err


@pytest.mark.parametrize("command", sorted(COMMANDS))
def test_help(command, capsys):
    assert run(command, "--help") == 0
    assert "usage:" in capsys.readouterr().out


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "statexplain", "--help"], capture_output=True, text=True)
    assert out.returncode == 0
    assert all(c in out.stdout for c in COMMANDS)


def test_missing_file_is_data_error(tmp_path, capsys):
    code = run("generate-dataset", "--env", "cartpole", "--policy", tmp_path / "nope.bin", "--episodes", 1,
               "--out", tmp_path / "d.csv", "--seed", 0)
    assert code == 2


def test_corrupt_dataset_is_data_error(pipeline, tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("state_0,state_1,action\n1,2,0\n")
    code = run("explain", "--method", "sarfa", "--env", "cartpole", "--policy", pipeline / "p.bin", "--dataset", bad,
               "--samples", 1, "--out", tmp_path / "a.csv", "--seed", 0)
    assert code == 2
    assert "line 1" in capsys.readouterr().err


def test_policy_env_mismatch_is_data_error(pipeline, tmp_path):
    code = run("generate-dataset", "--env", "synthetic-linear", "--policy", pipeline / "p.bin", "--episodes", 1,
               "--out", tmp_path / "d.csv", "--seed", 0)
    assert code == 2


@pytest.mark.parametrize("method", ["integrated_gradients", "sarfa", "tabular_shap"])
def test_explain_then_evaluate(pipeline, tmp_path, method, capsys):
    att = tmp_path / "a.csv"
    assert run("explain", "--method", method, "--env", "cartpole", "--policy", pipeline / "p.bin",
               "--dataset", pipeline / "d.csv", "--samples", 12, "--out", att, "--seed", 4) == 0
    rows = _data_columns(att)
    assert rows[0] == ["sample_idx", "action", "phi_0", "phi_1", "phi_2", "phi_3"]
    assert len(rows) == 13
    for metric in METRICS:
        extra = ["--method", method] if metric == "ris" else []
        out = tmp_path / f"{metric}.json"
        assert run("evaluate", "--metric", metric, "--env", "cartpole", "--policy", pipeline / "p.bin",
                   "--dataset", pipeline / "d.csv", "--attributions", att, "--seed", 4, "--out", out, *extra) == 0
        result = json.loads(out.read_text())
        assert {"metric", "mode_chosen", "per_k", "auc", "n_samples", "seed"} <= set(result)
        assert result["metric"] == metric and result["n_samples"] == 12
        if metric in ("aim", "aum"):
            assert 0.0 <= result["auc"] <= 1.0
            assert sorted(result["per_k"]) == ["1", "2", "3", "4"]


def test_evaluate_to_stdout(pipeline, tmp_path, capsys):
    att = tmp_path / "a.csv"
    run("explain", "--method", "gradient_shap", "--env", "cartpole", "--policy", pipeline / "p.bin",
        "--dataset", pipeline / "d.csv", "--samples", 5, "--out", att, "--seed", 4)
    capsys.readouterr()
    assert run("evaluate", "--metric", "pgi", "--env", "cartpole", "--policy", pipeline / "p.bin",
               "--dataset", pipeline / "d.csv", "--attributions", att, "--seed", 4) == 0
    assert json.loads(capsys.readouterr().out)["metric"] == "pgi"


def test_ris_needs_method(pipeline, tmp_path, capsys):
    att = tmp_path / "a.csv"
    run("explain", "--method", "sarfa", "--env", "cartpole", "--policy", pipeline / "p.bin",
        "--dataset", pipeline / "d.csv", "--samples", 3, "--out", att, "--seed", 4)
    assert run("evaluate", "--metric", "ris", "--env", "cartpole", "--policy", pipeline / "p.bin",
               "--dataset", pipeline / "d.csv", "--attributions", att, "--seed", 4) == 1
    assert "--method" in capsys.readouterr().err


def test_explain_workers_do_not_change_output(pipeline, tmp_path):
    outs = []
    for workers in (1, 3):
        att = tmp_path / f"a{workers}.csv"
        assert run("explain", "--method", "tabular_lime", "--env", "cartpole", "--policy", pipeline / "p.bin",
                   "--dataset", pipeline / "d.csv", "--samples", 10, "--out", att, "--seed", 9,
                   "--workers", workers) == 0
        outs.append(_data_columns(att))
    assert outs[0] == outs[1]


def test_synthetic_linear_policy_is_planted(tmp_path, planted):
    assert run("train-policy", "--env", "synthetic-linear", "--out", tmp_path / "p.bin", "--seed", 0) == 0
    policy = load_weights(tmp_path / "p.bin")
    _, W = planted
    assert (policy.weights[2][:, :8] == W).all()


def test_benchmark_and_report(pipeline, tmp_path):
    cfg = tmp_path / "bench.cfg"
    cfg.write_text(
        f"env = cartpole\npolicy = {pipeline / 'p.bin'}\ndataset = {pipeline / 'd.csv'}\nseed = 2\nsamples = 8\n"
        "explainers = sarfa, integrated_gradients\nmetrics = aim, pgu\noutput_dir = out\n"
    )
    assert run("benchmark", "--config", cfg) == 0
    out = tmp_path / "out"
    assert (out / "report.json").exists() and (out / "report.md").exists()
    assert run("report", "--input", out / "report.json", "--format", "csv", "--out", tmp_path / "again.csv") == 0
    assert (tmp_path / "again.csv").read_text() == (out / "report.csv").read_text()
    assert run("report", "--input", out / "report.json", "--format", "markdown", "--out", tmp_path / "r.md") == 0
    assert (tmp_path / "r.md").read_text() == (out / "report.md").read_text()


def test_report_rejects_non_json(tmp_path):
    bad = tmp_path / "r.json"
    bad.write_text("not json")
    assert run("report", "--input", bad, "--format", "csv", "--out", tmp_path / "r.csv") == 2


def test_bad_workers(pipeline, tmp_path):
    assert run("explain", "--method", "sarfa", "--env", "cartpole", "--policy", pipeline / "p.bin",
               "--dataset", pipeline / "d.csv", "--samples", 3, "--out", tmp_path / "a.csv", "--seed", 4,
               "--workers", 0) == 1
