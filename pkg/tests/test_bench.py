import csv
import json
import math
import time

import numpy as np
import pytest

from statexplain import bench
from statexplain.bench import (
    BenchConfig,
    BenchReport,
    emit_report,
    load_config,
    load_report,
    parse_config,
    report_markdown,
    run_benchmark,
    time_explainer,
    write_all,
)
from statexplain.datasets import collect, write_csv
from statexplain.envs import make_env
from statexplain.evaluators import METRICS
from statexplain.exceptions import ConfigurationError, FormatError, InputError
from statexplain.explainers import METHODS, explain_ig
from statexplain.policy import MlpPolicy, save_weights

FAST = dict(student_rounds=5, lime_samples=200, gshap_samples=16, ig_steps=16, n_pert=8, n_nbr=4)


@pytest.fixture(scope="module")
def linear_files(planted, tmp_path_factory):
    model, W = planted
    root = tmp_path_factory.mktemp("linear")
    save_weights(MlpPolicy.from_linear(W), root / "policy.bin")
    write_csv(collect(make_env("synthetic-linear"), model, episodes=5, max_steps=100, seed=0), root / "data.csv")
    return root


def _config(root, **overrides):
    values = dict(env="synthetic-linear", policy=str(root / "policy.bin"), dataset=str(root / "data.csv"), seed=3,
                  samples=24, output_dir=str(root / "out"), **FAST)
    values.update(overrides)
    return BenchConfig(**values)


@pytest.fixture(scope="module")
def full_report(linear_files):
    return run_benchmark(_config(linear_files))


def test_single_cell(linear_files):
    report = run_benchmark(_config(linear_files, explainers=("integrated_gradients",), metrics=("aim",), samples=10))
    assert len(report.cells) == 1
    cell = report.cells[0]
    assert cell.skipped is None and 0.0 <= cell.auc <= 1.0
    assert set(cell.per_k) == set(range(1, 9))


def test_grid_is_complete(full_report):
    assert {(c.explainer, c.metric) for c in full_report.cells} == {(e, m) for e in METHODS for m in METRICS}
    for c in full_report.cells:
        assert c.skipped is None, c
        if c.metric in ("aim", "aum"):
            assert 0.0 <= c.auc <= 1.0
        assert c.auc >= 0.0
    for t in full_report.timing.values():
        assert 0 < t["mean_seconds"] and t["n"] == 24


def test_rerun_is_byte_identical(linear_files, full_report):
    again = run_benchmark(_config(linear_files))
    assert json.dumps(again.data_dict(), sort_keys=True) == json.dumps(full_report.data_dict(), sort_keys=True)


def test_worker_count_does_not_change_numbers(linear_files, full_report):
    parallel = run_benchmark(_config(linear_files), workers=2)
    assert json.dumps(parallel.data_dict(), sort_keys=True) == json.dumps(full_report.data_dict(), sort_keys=True)


def test_hash_ignores_output_and_workers(linear_files):
    a = _config(linear_files)
    assert a.hash() == _config(linear_files, output_dir="elsewhere", workers=4).hash()
    assert a.hash() != _config(linear_files, seed=4).hash()


def test_csv_is_a_lossless_projection(full_report, tmp_path):
    emit_report(full_report, "json", tmp_path / "r.json")
    emit_report(full_report, "csv", tmp_path / "r.csv")
    data = json.loads((tmp_path / "r.json").read_text())
    with open(tmp_path / "r.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    for cell in data["cells"]:
        mine = [r for r in rows if r["explainer"] == cell["explainer"] and r["metric"] == cell["metric"]]
        auc_row = [r for r in mine if r["k"] == "auc"]
        assert len(auc_row) == 1
        assert abs(float(auc_row[0]["value"]) - cell["auc"]) <= 1e-9
        for k, v in cell["per_k"].items():
            (row,) = [r for r in mine if r["k"] == k]
            assert abs(float(row["value"]) - v) <= 1e-9
        if cell["per_k"]:
            curve = [float(r["value"]) for r in mine if r["k"] != "auc"]
            assert abs(sum(curve) / len(curve) - cell["auc"]) <= 1e-9


def test_json_round_trip(full_report, tmp_path):
    emit_report(full_report, "json", tmp_path / "r.json")
    back = load_report(tmp_path / "r.json")
    assert back.to_dict() == full_report.to_dict()


def test_markdown_shape_and_markers(full_report):
    lines = report_markdown(full_report).splitlines()
    header = lines[0]
    for marker in ("AIM↓", "AUM↑", "PGI↑", "PGU↓", "RIS↓"):
        assert marker in header
    grid = lines[2:2 + len(METHODS)]
    assert [row.split("|")[1].strip() for row in grid] == list(METHODS)
    assert all(row.count("|") == len(METRICS) + 2 for row in grid)


def test_failing_cell_is_skipped_not_fatal(linear_files, monkeypatch):
    real = bench.ris

    def broken(*args, **kwargs):
        raise RuntimeError("boom")

    monkeypatch.setattr(bench, "ris", broken)
    report = run_benchmark(_config(linear_files, explainers=("sarfa", "integrated_gradients"), metrics=("aim", "ris"),
                                   samples=10))
    monkeypatch.setattr(bench, "ris", real)
    assert "boom" in report.cell("sarfa", "ris").skipped
    assert report.cell("sarfa", "aim").skipped is None
    assert report.cell("integrated_gradients", "aim").auc is not None
    rows = list(bench.report_csv_rows(report))
    assert any(r[1] == "ris" and "boom" in r[-1] for r in rows)
    assert "skipped" in report_markdown(report)


def test_write_all(full_report, tmp_path):
    out = write_all(full_report, tmp_path / "nested" / "out")
    assert sorted(p.name for p in out.iterdir()) == ["report.csv", "report.json", "report.md"]


def test_emit_to_unwritable_path(full_report, tmp_path):
    with pytest.raises(OSError):
        emit_report(full_report, "json", tmp_path / "missing-dir" / "r.json")


def test_report_without_nan(full_report):
    text = json.dumps(full_report.to_dict(), allow_nan=False)
    assert "NaN" not in text


def test_parse_config(tmp_path):
    text = """
    # toy run
    env = cartpole
    policy = p.bin
    dataset = d.csv   # relative to the config
    seed = 5
    samples = 40
    explainers = sarfa, tabular_lime
    metrics = aim,ris
    lime_kernel_width = none
    eps_den = 1e-5
    """
    cfg = parse_config(text, base_dir=tmp_path)
    assert cfg.env == "cartpole" and cfg.seed == 5 and cfg.samples == 40
    assert cfg.policy == str(tmp_path / "p.bin")
    assert cfg.explainers == ("sarfa", "tabular_lime") and cfg.metrics == ("aim", "ris")
    assert cfg.lime_kernel_width is None and cfg.eps_den == 1e-5
    (tmp_path / "b.cfg").write_text(text)
    assert load_config(tmp_path / "b.cfg") == cfg


@pytest.mark.parametrize(
    "text,error",
    [
        ("env = cartpole\npolicy = p\ndataset = d\n", ConfigurationError),
        ("env = cartpole\npolicy = p\ndataset = d\nseed = 1\ncolour = red\n", FormatError),
        ("env = cartpole\npolicy = p\ndataset = d\nseed = x\n", FormatError),
        ("env = cartpole\npolicy = p\ndataset = d\nseed = 1\nmetrics = aim, bogus\n", ConfigurationError),
        ("env = cartpole\npolicy = p\ndataset = d\nseed = 1\nexplainers =\n", ConfigurationError),
        ("just words\n", FormatError),
    ],
)
def test_config_errors(text, error):
    with pytest.raises(error):
        parse_config(text)


def test_too_many_samples(linear_files):
    with pytest.raises(ConfigurationError):
        run_benchmark(_config(linear_files, samples=10_000))


def test_time_explainer():
    mean, p95 = time_explainer(lambda s: time.sleep(0.001), range(20))
    assert 0 < mean and 0 < p95
    assert mean <= p95 * 1.5
    with pytest.raises(InputError):
        time_explainer(lambda s: None, range(19))


def test_timing_measured_on_real_explainer():
    policy = MlpPolicy.random(8, 3, seed=0)
    X = np.random.default_rng(0).normal(size=(40, 8))
    mean, p95 = time_explainer(lambda s: explain_ig(policy, s, 0), X)
    assert 0 < mean <= p95 < 1.0


def test_from_dict_rejects_garbage():
    with pytest.raises(FormatError):
        BenchReport.from_dict({"cells": [{"nope": 1}], "provenance": {}, "timing": {}})


def test_provenance(full_report, linear_files):
    prov = full_report.provenance
    assert prov["seed"] == 3 and prov["samples"] == 24 and prov["dataset_rows"] == 500
    assert prov["config_hash"] == _config(linear_files).hash()
    assert not math.isnan(prov["stability"]["eps_den"])
