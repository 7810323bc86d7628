"""End-to-end benchmark: every explainer against every metric on a dataset sample."""

import csv
import hashlib
import json
import logging
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np
from joblib import Parallel, delayed

from .datasets import read_csv, subsample_indices
from .envs import get_spec
from .evaluators import (
    DIRECTION_MARKERS,
    METRICS,
    FidelityConfig,
    StabilityConfig,
    TopKMode,
    aim,
    aum,
    curve_and_auc,
    pgi,
    pgu,
    ris,
)
from .exceptions import ConfigurationError, FormatError, InputError
from .explainers import METHODS, ExplainContext, ExplainerConfig, explain
from .policy import load_weights
from .trees import fit_gbdt

log = logging.getLogger(__name__)

REPORT_FORMATS = ("json", "csv", "markdown")


@dataclass(frozen=True)
class BenchConfig:
    env: str
    policy: str
    dataset: str
    seed: int
    output_dir: str = "bench-out"
    samples: int = 500
    explainers: tuple = METHODS
    metrics: tuple = METRICS
    workers: int = 1
    # explainer settings
    ig_steps: int = 64
    ig_baseline: str = "zero"
    gshap_samples: int = 64
    lime_samples: int = 1000
    lime_kernel_width: Optional[float] = None
    lime_ridge: float = 1e-3
    perturbation: str = "mean_replace"
    sigma_scale: float = 0.5
    # tabular_shap student
    student_rounds: int = 100
    student_max_depth: int = 4
    student_learning_rate: float = 0.1
    student_min_leaf: int = 5
    # fidelity / stability
    fidelity_noise_scale: float = 0.1
    n_pert: int = 32
    stability_noise_scale: float = 0.05
    n_nbr: int = 32
    eps_min: float = 1e-4
    ris_p: int = 2
    eps_den: float = 1e-6

    def __post_init__(self):
        get_spec(self.env)
        if not self.explainers or not self.metrics:
            raise ConfigurationError("explainer and metric lists must be non-empty")
        bad = [m for m in self.explainers if m not in METHODS]
        if bad:
            raise ConfigurationError(f"unknown explainers {bad}; choose from {', '.join(METHODS)}")
        bad = [m for m in self.metrics if m not in METRICS]
        if bad:
            raise ConfigurationError(f"unknown metrics {bad}; choose from {', '.join(METRICS)}")
        if self.samples < 1 or self.workers < 1:
            raise ConfigurationError("samples and workers must be positive")

    def explainer_config(self):
        return ExplainerConfig(
            ig_steps=self.ig_steps, ig_baseline=self.ig_baseline, gshap_samples=self.gshap_samples,
            lime_samples=self.lime_samples, lime_kernel_width=self.lime_kernel_width,
            lime_ridge=self.lime_ridge, perturbation=self.perturbation, sigma_scale=self.sigma_scale,
            seed=self.seed,
        )

    def hash(self):
        """Digest of every setting that can change numeric output."""
        payload = {k: v for k, v in asdict(self).items() if k not in ("output_dir", "workers")}
        blob = json.dumps(payload, sort_keys=True, default=list).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


_LIST_KEYS = {"explainers", "metrics"}
_PATH_KEYS = {"policy", "dataset", "output_dir"}


def _coerce(name, raw, annotation):
    if name in _LIST_KEYS:
        return tuple(item.strip() for item in raw.split(",") if item.strip())
    if annotation in (int, "int"):
        return int(raw)
    if annotation in (float, "float", Optional[float], "Optional[float]"):
        return None if raw.lower() in ("", "none") else float(raw)
    return raw


def parse_config(text, base_dir="."):
    """Parse ``key = value`` lines (``#`` comments) into a :class:`BenchConfig`.

    Relative paths resolve against ``base_dir``.
    """
    known = {f.name: f.type for f in fields(BenchConfig)}
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise FormatError(f"config line {lineno}: expected 'key = value'")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key not in known:
            raise FormatError(f"config line {lineno}: unknown key {key!r}")
        try:
            value = _coerce(key, raw, known[key])
        except ValueError:
            raise FormatError(f"config line {lineno}: bad value {raw!r} for {key}") from None
        if key in _PATH_KEYS:
            value = str(Path(base_dir, value))
        values[key] = value
    missing = [k for k in ("env", "policy", "dataset", "seed") if k not in values]
    if missing:
        raise ConfigurationError(f"config is missing required keys: {', '.join(missing)}")
    return BenchConfig(**values)


def load_config(path):
    path = Path(path)
    return parse_config(path.read_text(), base_dir=path.parent)


@dataclass
class Cell:
    explainer: str
    metric: str
    mode: Optional[str] = None
    per_k: dict = field(default_factory=dict)
    auc: Optional[float] = None
    alternatives: dict = field(default_factory=dict)
    n_undefined: int = 0
    skipped: Optional[str] = None

    @property
    def direction(self):
        return DIRECTION_MARKERS[self.metric]


@dataclass
class BenchReport:
    provenance: dict
    cells: list
    timing: dict

    def cell(self, explainer, metric):
        for c in self.cells:
            if c.explainer == explainer and c.metric == metric:
                return c
        raise KeyError((explainer, metric))

    def to_dict(self):
        cells = []
        for c in self.cells:
            d = asdict(c)
            d["direction"] = c.direction
            d["per_k"] = {str(k): v for k, v in c.per_k.items()}
            cells.append(d)
        return {"provenance": self.provenance, "cells": cells, "timing": self.timing}

    @classmethod
    def from_dict(cls, data):
        try:
            cells = []
            for d in data["cells"]:
                d = {k: v for k, v in d.items() if k != "direction"}
                d["per_k"] = {int(k): v for k, v in d["per_k"].items()}
                cells.append(Cell(**d))
            return cls(data["provenance"], cells, data["timing"])
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"malformed report: {exc}") from None

    def data_dict(self):
        """Report without the timing block (the run-to-run deterministic part)."""
        d = self.to_dict()
        d.pop("timing")
        return d


def latency_summary(seconds):
    """(mean, 95th percentile) of per-sample durations."""
    arr = np.asarray(seconds, dtype=np.float64)
    return float(arr.mean()), float(np.quantile(arr, 0.95))


def time_explainer(explain_fn, samples):
    """Time ``explain_fn`` once per sample and summarise; needs at least 20 samples."""
    samples = list(samples)
    if len(samples) < 20:
        raise InputError("timing needs at least 20 samples for a stable 95th percentile")
    seconds = []
    for s in samples:
        start = time.perf_counter()
        explain_fn(s)
        seconds.append(time.perf_counter() - start)
    return latency_summary(seconds)


def parallel_map(fn, items, workers):
    """Ordered map; results are independent of ``workers``."""
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(*item) for item in items]
    return Parallel(n_jobs=workers)(delayed(fn)(*item) for item in items)


def _explain_one(method, ctx, state, action, stream):
    att = explain(method, ctx, state, action, stream=stream)
    return att.values, att.seconds


def _gap_table(policy, x, e, fcfg, stream):
    d = x.shape[0]
    out = np.empty((2, len(TopKMode), d))
    for m, mode in enumerate(TopKMode):
        for k in range(1, d + 1):
            out[0, m, k - 1] = pgi(policy, x, e, k, mode, fcfg, sample_index=stream)
            out[1, m, k - 1] = pgu(policy, x, e, k, mode, fcfg, sample_index=stream)
    return out


def _ris_one(method, ctx, policy, x, e, action, scfg, stream):
    def explain_fn(s):
        return explain(method, ctx, s, action, stream=stream).values

    return ris(explain_fn, policy, x, scfg, sample_index=stream, e_x=e)


def _curve_cell(explainer, curve):
    return Cell(explainer, curve.metric, curve.mode.value, dict(curve.per_k), curve.auc, dict(curve.alternatives))


def run_benchmark(config, workers=None):
    workers = config.workers if workers is None else workers
    spec = get_spec(config.env)
    policy = load_weights(config.policy)
    if (policy.state_dim, policy.action_count) != (spec.state_dim, spec.action_count):
        raise ConfigurationError("policy dimensions do not match the environment")
    dataset = read_csv(config.dataset, spec)
    if config.samples > len(dataset):
        raise ConfigurationError(f"samples={config.samples} exceeds dataset size {len(dataset)}")
    rows = subsample_indices(len(dataset), config.samples, config.seed)
    X = dataset.states[rows]
    actions = [policy.act_greedy(x) for x in X]
    d = spec.state_dim

    student = None
    if "tabular_shap" in config.explainers:
        log.info("fitting tabular_shap student on %d rows", len(dataset))
        student = fit_gbdt(dataset, config.student_rounds, config.student_max_depth,
                           config.student_learning_rate, config.student_min_leaf)
    ctx = ExplainContext(policy=policy, student=student, dataset=dataset, config=config.explainer_config())
    fcfg = FidelityConfig(reference_state=spec.reference, feature_std=dataset.feature_std,
                          noise_scale=config.fidelity_noise_scale, n_pert=config.n_pert, seed=config.seed)
    scfg = StabilityConfig(feature_std=dataset.feature_std, n_nbr=config.n_nbr,
                           noise_scale=config.stability_noise_scale, eps_min=config.eps_min,
                           p=config.ris_p, eps_den=config.eps_den, seed=config.seed)

    cells, timing = [], {}
    for method in config.explainers:
        log.info("explaining %d samples with %s", len(rows), method)
        try:
            results = parallel_map(_explain_one, [(method, ctx, X[i], actions[i], int(rows[i]))
                                                  for i in range(len(rows))], workers)
        except Exception as exc:  # skip-and-record
            reason = f"explainer failed: {type(exc).__name__}: {exc}"
            log.warning("%s: %s", method, reason)
            cells.extend(Cell(method, m, skipped=reason) for m in config.metrics)
            continue
        E = np.array([r[0] for r in results])
        mean_s, p95_s = latency_summary([r[1] for r in results])
        timing[method] = {"mean_seconds": mean_s, "p95_seconds": p95_s, "n": len(results)}

        gaps = None
        for metric in config.metrics:
            log.info("  %s / %s", method, metric)
            try:
                if metric in ("aim", "aum"):
                    fn = aim if metric == "aim" else aum
                    curve = curve_and_auc(lambda k, mode, fn=fn: fn(policy, X, E, k, mode, fcfg), range(1, d + 1), metric)
                    cells.append(_curve_cell(method, curve))
                elif metric in ("pgi", "pgu"):
                    if gaps is None:
                        gaps = np.array(parallel_map(
                            _gap_table, [(policy, X[i], E[i], fcfg, int(rows[i])) for i in range(len(rows))], workers))
                    table = gaps[:, 0 if metric == "pgi" else 1].mean(axis=0)
                    modes = list(TopKMode)
                    curve = curve_and_auc(lambda k, mode: table[modes.index(mode), k - 1], range(1, d + 1), metric)
                    cells.append(_curve_cell(method, curve))
                else:
                    scores = np.array(parallel_map(
                        _ris_one, [(method, ctx, policy, X[i], E[i], actions[i], scfg, int(rows[i]))
                                   for i in range(len(rows))], workers))
                    defined = scores[~np.isnan(scores)]
                    auc = float(defined.mean()) if defined.size else None
                    cells.append(Cell(method, metric, auc=auc, n_undefined=int(np.isnan(scores).sum()),
                                      skipped=None if defined.size else "no sample had a prediction-preserving neighbour"))
            except Exception as exc:  # skip-and-record
                reason = f"{type(exc).__name__}: {exc}"
                log.warning("%s/%s skipped: %s", method, metric, reason)
                cells.append(Cell(method, metric, skipped=reason))

    provenance = {
        "env": config.env,
        "seed": config.seed,
        "config_hash": config.hash(),
        "dataset_rows": len(dataset),
        "samples": len(rows),
        "explainers": list(config.explainers),
        "metrics": list(config.metrics),
        "explainer_config": asdict(ctx.config),
        "fidelity": {"noise_scale": config.fidelity_noise_scale, "n_pert": config.n_pert,
                     "reference_state": list(spec.reference_state)},
        "stability": {"noise_scale": config.stability_noise_scale, "n_nbr": config.n_nbr,
                      "eps_min": config.eps_min, "p": config.ris_p, "eps_den": config.eps_den},
    }
    return BenchReport(provenance, cells, timing)


def _fmt(value):
    return "" if value is None else repr(float(value))


def report_csv_rows(report):
    yield ["explainer", "metric", "direction", "mode", "k", "value", "skip_reason"]
    for c in report.cells:
        if c.skipped is not None and c.auc is None:
            yield [c.explainer, c.metric, c.direction, "", "auc", "", c.skipped]
            continue
        for k, v in c.per_k.items():
            yield [c.explainer, c.metric, c.direction, c.mode or "", str(k), _fmt(v), ""]
        yield [c.explainer, c.metric, c.direction, c.mode or "", "auc", _fmt(c.auc), ""]


def report_markdown(report):
    explainers = list(dict.fromkeys(c.explainer for c in report.cells))
    metrics = list(dict.fromkeys(c.metric for c in report.cells))
    lines = [
        "| Explainer | " + " | ".join(f"{m.upper()}{DIRECTION_MARKERS[m]}" for m in metrics) + " |",
        "|---|" + "---|" * len(metrics),
    ]
    for e in explainers:
        row = []
        for m in metrics:
            c = report.cell(e, m)
            row.append("skipped" if c.auc is None else f"{c.auc:.3f}")
        lines.append(f"| {e} | " + " | ".join(row) + " |")
    if report.timing:
        lines += ["", "| Explainer | mean s/sample | p95 s/sample |", "|---|---|---|"]
        for e in explainers:
            if e not in report.timing:
                continue
            t = report.timing[e]
            lines.append(f"| {e} | {t['mean_seconds']:.4f} | {t['p95_seconds']:.4f} |")
    return "\n".join(lines) + "\n"


def emit_report(report, fmt, path):
    if fmt not in REPORT_FORMATS:
        raise InputError(f"unknown report format {fmt!r}; choose from {', '.join(REPORT_FORMATS)}")
    path = Path(path)
    if fmt == "json":
        path.write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True, allow_nan=False) + "\n")
    elif fmt == "csv":
        with open(path, "w", newline="") as fh:
            csv.writer(fh, lineterminator="\n").writerows(report_csv_rows(report))
    else:
        path.write_text(report_markdown(report))


def write_all(report, output_dir):
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    for fmt, name in (("json", "report.json"), ("csv", "report.csv"), ("markdown", "report.md")):
        emit_report(report, fmt, out / name)
    return out


def load_report(path):
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: not valid JSON ({exc})") from None
    return BenchReport.from_dict(data)


