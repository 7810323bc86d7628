"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 data/format error, 3 runtime error.
"""

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .bench import REPORT_FORMATS, emit_report, load_config, load_report, parallel_map, run_benchmark, write_all
from .datasets import collect, read_csv, subsample_indices, write_csv
from .dqn import DqnConfig, train_dqn
from .envs import ENV_SPECS, get_spec, make_env, planted_truth_model
from .evaluators import METRICS, FidelityConfig, StabilityConfig, TopKMode, aim, aum, curve_and_auc, pgi, pgu, ris
from .exceptions import ConfigurationError, FormatError, InputError, StatexplainError
from .explainers import METHODS, ExplainContext, ExplainerConfig, explain
from .policy import MlpPolicy, load_weights, save_weights
from .trees import fit_gbdt

log = logging.getLogger("statexplain")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_RUNTIME = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _add_common(p, stochastic=True):
    p.add_argument("--workers", type=int, default=1, help="sample-level parallelism (output is identical for any value)")
    if stochastic:
        p.add_argument("--seed", type=int, required=True, help="random seed (mandatory)")


def build_parser():
    parser = _Parser(prog="statexplain", description="Train, explain and evaluate small RL policies.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    envs = sorted(ENV_SPECS)

    p = sub.add_parser("train-policy", help="train a DQN policy and write its weight file")
    p.add_argument("--env", required=True, choices=envs)
    p.add_argument("--out", required=True, help="weight file to write")
    p.add_argument("--max-steps", type=int, default=200_000)
    p.add_argument("--threshold", type=float, default=195.0, help="trailing-100 mean return that stops training")
    p.add_argument("--learning-rate", type=float, default=1e-3)
    p.add_argument("--seed", type=int, required=True, help="random seed (mandatory)")

    p = sub.add_parser("generate-dataset", help="roll out a policy and write a state-action CSV")
    p.add_argument("--env", required=True, choices=envs)
    p.add_argument("--policy", required=True)
    p.add_argument("--episodes", type=int, required=True)
    p.add_argument("--max-steps", type=int, default=None, help="per-episode cap (default: environment limit)")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, required=True, help="random seed (mandatory)")

    p = sub.add_parser("explain", help="explain a sample of dataset states")
    p.add_argument("--method", required=True, choices=METHODS)
    p.add_argument("--env", required=True, choices=envs)
    p.add_argument("--policy", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--samples", type=int, required=True)
    p.add_argument("--out", required=True, help="attribution CSV to write")
    _add_common(p)

    p = sub.add_parser("evaluate", help="score an attribution CSV with one metric")
    p.add_argument("--metric", required=True, choices=METRICS)
    p.add_argument("--env", required=True, choices=envs)
    p.add_argument("--policy", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--attributions", required=True)
    p.add_argument("--method", choices=METHODS, help="explainer that produced the attributions (required for ris)")
    p.add_argument("--out", help="JSON file to write (default: stdout)")
    _add_common(p)

    p = sub.add_parser("benchmark", help="run the full explainer x metric grid from a config file")
    p.add_argument("--config", required=True, help="flat 'key = value' config file")
    p.add_argument("--workers", type=int, default=None, help="override the config's worker count")

    p = sub.add_parser("report", help="re-render an existing report.json")
    p.add_argument("--input", required=True)
    p.add_argument("--format", required=True, choices=REPORT_FORMATS)
    p.add_argument("--out", required=True)
    return parser


def _load_policy(path, spec):
    policy = load_weights(path)
    if (policy.state_dim, policy.action_count) != (spec.state_dim, spec.action_count):
        raise InputError(f"policy dims {policy.dims} do not match environment {spec.name}")
    return policy


def cmd_train_policy(args):
    spec = get_spec(args.env)
    if spec.name == "synthetic-linear":
        _, W = planted_truth_model(spec)
        save_weights(MlpPolicy.from_linear(W), args.out)
        log.info("wrote the planted linear scorer encoded as an MLP")
        return EXIT_OK
    config = DqnConfig(max_steps=args.max_steps, solve_threshold=args.threshold,
                       learning_rate=args.learning_rate, seed=args.seed)
    result = train_dqn(make_env(args.env), config)
    save_weights(result.policy, args.out)
    log.info("trained %d steps / %d episodes, trailing-100 mean %.2f", result.steps, result.episodes,
             result.trailing_mean)
    return EXIT_OK


def cmd_generate_dataset(args):
    spec = get_spec(args.env)
    policy = _load_policy(args.policy, spec)
    dataset = collect(make_env(args.env), policy, args.episodes, args.max_steps or spec.max_episode_steps, args.seed)
    write_csv(dataset, args.out)
    log.info("wrote %d state-action pairs", len(dataset))
    return EXIT_OK


def _explain_row(method, ctx, state, action, stream):
    att = explain(method, ctx, state, action, stream=stream)
    return att.values, att.seconds


def cmd_explain(args):
    spec = get_spec(args.env)
    policy = _load_policy(args.policy, spec)
    dataset = read_csv(args.dataset, spec)
    rows = subsample_indices(len(dataset), args.samples, args.seed)
    student = fit_gbdt(dataset) if args.method == "tabular_shap" else None
    ctx = ExplainContext(policy, student, dataset, ExplainerConfig(seed=args.seed))
    actions = [policy.act_greedy(dataset.states[i]) for i in rows]
    results = parallel_map(_explain_row, [(args.method, ctx, dataset.states[i], a, int(i))
                                          for i, a in zip(rows, actions)], args.workers)
    with open(args.out, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["sample_idx", "action"] + [f"phi_{j}" for j in range(spec.state_dim)] + ["millis"])
        for i, a, (values, seconds) in zip(rows, actions, results):
            writer.writerow([str(int(i)), str(a)] + [repr(float(v)) for v in values] + [f"{1000 * seconds:.6f}"])
    return EXIT_OK


def read_attributions(path, spec, n_rows):
    """Parse an attribution CSV into (row indices, actions, matrix)."""
    header = ["sample_idx", "action"] + [f"phi_{j}" for j in range(spec.state_dim)] + ["millis"]
    idx, actions, values = [], [], []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if lineno == 1:
                if row != header:
                    raise FormatError(f"line 1: expected header {header}")
                continue
            if len(row) != len(header):
                raise FormatError(f"line {lineno}: expected {len(header)} columns, got {len(row)}")
            try:
                i, a = int(row[0]), int(row[1])
                values.append([float(v) for v in row[2:-1]])
            except ValueError:
                raise FormatError(f"line {lineno}: unparsable cell") from None
            if not 0 <= i < n_rows:
                raise FormatError(f"line {lineno}: sample_idx {i} not in dataset")
            if not 0 <= a < spec.action_count:
                raise FormatError(f"line {lineno}: action {a} out of range")
            idx.append(i)
            actions.append(a)
    if not idx:
        raise FormatError(f"{path}: no attribution rows")
    return np.array(idx), actions, np.array(values)


def _gap_row(metric, policy, x, e, fcfg, stream):
    fn = pgi if metric == "pgi" else pgu
    d = x.shape[0]
    return [[fn(policy, x, e, k, mode, fcfg, sample_index=stream) for k in range(1, d + 1)] for mode in TopKMode]


def _ris_row(method, ctx, policy, x, e, action, scfg, stream):
    return ris(lambda s: explain(method, ctx, s, action, stream=stream).values, policy, x, scfg,
               sample_index=stream, e_x=e)


def cmd_evaluate(args):
    spec = get_spec(args.env)
    policy = _load_policy(args.policy, spec)
    dataset = read_csv(args.dataset, spec)
    rows, actions, E = read_attributions(args.attributions, spec, len(dataset))
    X = dataset.states[rows]
    d = spec.state_dim
    result = {"metric": args.metric, "n_samples": int(len(rows)), "seed": args.seed}
    if args.metric == "ris":
        if args.method is None:
            raise UsageError("--method is required for --metric ris")
        student = fit_gbdt(dataset) if args.method == "tabular_shap" else None
        ctx = ExplainContext(policy, student, dataset, ExplainerConfig(seed=args.seed))
        scfg = StabilityConfig(feature_std=dataset.feature_std, seed=args.seed)
        scores = np.array(parallel_map(_ris_row, [(args.method, ctx, policy, X[j], E[j], actions[j], scfg, int(rows[j]))
                                                  for j in range(len(rows))], args.workers))
        defined = scores[~np.isnan(scores)]
        result.update(mode_chosen=None, per_k={}, auc=float(defined.mean()) if defined.size else None,
                      n_undefined=int(np.isnan(scores).sum()))
    else:
        fcfg = FidelityConfig(reference_state=spec.reference, feature_std=dataset.feature_std, seed=args.seed)
        if args.metric in ("aim", "aum"):
            fn = aim if args.metric == "aim" else aum
            curve = curve_and_auc(lambda k, mode: fn(policy, X, E, k, mode, fcfg), range(1, d + 1), args.metric)
        else:
            tables = np.array(parallel_map(_gap_row, [(args.metric, policy, X[j], E[j], fcfg, int(rows[j]))
                                                      for j in range(len(rows))], args.workers)).mean(axis=0)
            modes = list(TopKMode)
            curve = curve_and_auc(lambda k, mode: tables[modes.index(mode), k - 1], range(1, d + 1), args.metric)
        result.update(mode_chosen=curve.mode.value, per_k={str(k): v for k, v in curve.per_k.items()}, auc=curve.auc)
    text = json.dumps(result, indent=2, sort_keys=True) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_benchmark(args):
    config = load_config(args.config)
    report = run_benchmark(config, workers=args.workers)
    out = write_all(report, config.output_dir)
    log.info("wrote report.json, report.csv and report.md to %s", out)
    return EXIT_OK


def cmd_report(args):
    emit_report(load_report(args.input), args.format, args.out)
    return EXIT_OK


COMMANDS = {
    "train-policy": cmd_train_policy,
    "generate-dataset": cmd_generate_dataset,
    "explain": cmd_explain,
    "evaluate": cmd_evaluate,
    "benchmark": cmd_benchmark,
    "report": cmd_report,
}


def main(argv=None):
    if hasattr(sys.stdout, "reconfigure"):
        sys.stdout.reconfigure(line_buffering=True)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if getattr(args, "workers", None) is not None and args.workers < 1:
            parser.error("--workers must be at least 1")
    except SystemExit as exc:  # argparse exits on --help and usage errors
        return exc.code
    logging.basicConfig(stream=sys.stderr, level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (UsageError, ConfigurationError) as exc:
        print(f"statexplain {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FormatError, InputError, OSError) as exc:
        print(f"statexplain {args.command}: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (StatexplainError, Exception) as exc:  # noqa: BLE001
        print(f"statexplain {args.command}: runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
