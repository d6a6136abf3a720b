"""Command-line front end: synth, extract, train-eval, naive, importance.

Exit codes: 0 success, 2 usage or configuration error, 3 training failure.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path
from typing import Optional, Sequence

import yaml

from . import capture, evaluation, features, learn, synth
from .learn import serialize

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_TRAINING = 3


class ConfigError(Exception):
    pass


class TrainingError(Exception):
    pass


def _write_text(path: Optional[str], text: str) -> None:
    if path:
        Path(path).write_text(text, encoding="utf-8", newline="")


def _parse_params(pairs: Sequence[str]) -> dict:
    params = {}
    for pair in pairs or ():
        name, sep, value = pair.partition("=")
        if not sep or not name:
            raise ConfigError(f"--param expects NAME=VALUE, got {pair!r}")
        params[name.replace("-", "_")] = yaml.safe_load(value)
    return params


def _load_features(path: str) -> features.LabeledDataset:
    try:
        return features.load_feature_csv(path)
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror or exc}") from exc
    except (ValueError, IndexError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def _fmt(value) -> str:
    return "undefined" if value is None else f"{value:.6f}"


def _print_scores(result: evaluation.MetricsReport) -> None:
    print(f"accuracy {_fmt(result.accuracy)}")
    print(f"f1 {_fmt(result.f1)}")


# --------------------------------------------------------------------------
# subcommands


def cmd_synth(args) -> int:
    try:
        scenario = synth.load_scenario(args.scenario)
    except OSError as exc:
        raise ConfigError(f"cannot read scenario {args.scenario}: {exc.strerror or exc}") from exc
    except (yaml.YAMLError, synth.ScenarioError) as exc:
        raise ConfigError(f"{args.scenario}: {exc}") from exc
    if args.seed is not None:
        scenario = scenario.with_seed(args.seed)
    try:
        cap, sidecar = scenario.generate()
    except synth.ScenarioError as exc:
        raise ConfigError(str(exc)) from exc
    capture.save_pcap(cap, args.pcap)
    _write_text(args.labels, sidecar.to_csv())
    counts = sidecar.counts()
    print(f"{len(cap)} frames, {counts.get(features.ANOMALOUS, 0)} anomalous", file=sys.stderr)
    return EXIT_OK


def cmd_extract(args) -> int:
    try:
        cap = capture.load_pcap(args.pcap)
        sidecar = features.load_sidecar(args.labels)
    except OSError as exc:
        raise ConfigError(f"cannot read input: {exc.strerror or exc}") from exc
    except (capture.CaptureError, features.LabelError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    records, warnings = capture.records_from_capture(cap)
    for message in warnings:
        print(f"warning: {message}", file=sys.stderr)
    try:
        dataset = features.dataset_from_records(records, sidecar, source_name=str(args.pcap))
    except features.LabelError as exc:
        raise ConfigError(str(exc)) from exc
    _write_text(args.output, features.dataset_to_csv(dataset))
    return EXIT_OK


def cmd_train_eval(args) -> int:
    dataset = _load_features(args.features)
    params = _parse_params(args.param)
    if args.algo == "kmeans" and args.split is not None:
        print("warning: k-means is unsupervised; --split is ignored", file=sys.stderr)
    try:
        result = evaluation.run_experiment(
            dataset, args.algo, train_fraction=args.split if args.split is not None else 0.7,
            seed=args.seed, stratified=not args.no_stratify, positive_class=args.positive_class,
            params=params, importance_repeats=args.repeats, with_importance=not args.no_importance,
            record_timings=args.timings, dataset_name=Path(args.features).name)
    except TypeError as exc:
        raise ConfigError(f"bad hyperparameter: {exc}") from exc
    except (learn.SingleClassTrainingSet, features.TooFewRows) as exc:
        raise TrainingError(str(exc)) from exc
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    _print_scores(result.metrics)
    _write_text(args.report, result.report_json())
    if args.model:
        serialize.save_model(result.model, args.model)
    return EXIT_OK


def cmd_naive(args) -> int:
    dataset = _load_features(args.features)
    try:
        rules = learn.load_rules(synth.resolve_path(args.rules))
    except OSError as exc:
        raise ConfigError(f"cannot read rules {args.rules}: {exc.strerror or exc}") from exc
    except (yaml.YAMLError, KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"{args.rules}: {exc}") from exc
    matrix = features.encode(dataset)
    try:
        predictions = rules.predict_matrix(matrix)
    except learn.UnknownFeature as exc:
        raise ConfigError(str(exc.args[0] if exc.args else exc)) from exc
    result = evaluation.metrics(evaluation.confusion(predictions, matrix.y, args.positive_class))
    report = evaluation.build_report(Path(args.features).name, "naive", None, None, None,
                                     args.positive_class, result, evaluation.ImportanceReport(),
                                     extra={"rules": rules.to_dict()["rules"]})
    _print_scores(result)
    _write_text(args.report, evaluation.dumps_report(report))
    return EXIT_OK


def cmd_importance(args) -> int:
    dataset = _load_features(args.features)
    params = _parse_params(args.param)
    try:
        result = evaluation.run_experiment(
            dataset, args.algo, train_fraction=args.split, seed=args.seed,
            stratified=not args.no_stratify, params=params, importance_repeats=args.repeats,
            dataset_name=Path(args.features).name)
    except TypeError as exc:
        raise ConfigError(f"bad hyperparameter: {exc}") from exc
    except (learn.SingleClassTrainingSet, features.TooFewRows) as exc:
        raise TrainingError(str(exc)) from exc
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    by_name = {f.feature: f for f in result.importance.features}
    for name in result.importance.ranking()[:args.top]:
        item = by_name[name]
        line = f"{name:28s} {item.mean_decrease_accuracy:.6f}"
        if item.mean_decrease_gini is not None:
            line += f" {item.mean_decrease_gini:.6f}"
        print(line)
    _write_text(args.report, result.report_json())
    return EXIT_OK


# --------------------------------------------------------------------------
# argument parsing


def _add_learning_args(p: argparse.ArgumentParser, split_default) -> None:
    p.add_argument("features", help="feature CSV written by 'extract'")
    p.add_argument("--algo", required=True, choices=learn.ALGORITHMS)
    p.add_argument("--param", action="append", metavar="NAME=VALUE",
                   help="hyperparameter for the trainer, e.g. n_trees=500 (repeatable)")
    p.add_argument("--split", type=float, default=split_default, metavar="FRACTION",
                   help="training fraction (default 0.7)")
    p.add_argument("--no-stratify", action="store_true", help="plain shuffled split")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--repeats", type=int, default=10, help="permutations per feature")
    p.add_argument("--report", help="write the JSON report here")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="modbus-anomaly", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("synth", help="generate a labeled capture from a scenario file")
    p.add_argument("scenario", help="YAML scenario file, or a bundled name: ds1, ds2, ds3")
    p.add_argument("--pcap", required=True, help="output capture")
    p.add_argument("--labels", required=True, help="output label sidecar CSV")
    p.add_argument("--seed", type=int, help="override the seeds in the scenario file")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("extract", help="dissect a capture into the feature CSV")
    p.add_argument("pcap")
    p.add_argument("labels", help="label sidecar CSV")
    p.add_argument("-o", "--output", required=True, help="output feature CSV")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("train-eval", help="train on a split and score the held-out rows")
    _add_learning_args(p, None)
    p.add_argument("--model", help="write the trained model as JSON here")
    p.add_argument("--positive-class", default=features.NORMAL, choices=features.LABELS)
    p.add_argument("--no-importance", action="store_true", help="skip permutation importance")
    p.add_argument("--timings", action="store_true",
                   help="record wall-clock timings (reports stop being byte-identical)")
    p.set_defaults(func=cmd_train_eval)

    p = sub.add_parser("naive", help="apply threshold rules to a feature CSV")
    p.add_argument("features")
    p.add_argument("rules", help="YAML rules file, or the bundled name naive_ds1")
    p.add_argument("--positive-class", default=features.NORMAL, choices=features.LABELS)
    p.add_argument("--report")
    p.set_defaults(func=cmd_naive)

    p = sub.add_parser("importance", help="rank features by permutation importance")
    _add_learning_args(p, 0.7)
    p.add_argument("--top", type=int, default=10, help="rows to print")
    p.set_defaults(func=cmd_importance)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TrainingError as exc:
        print(f"training failed: {exc}", file=sys.stderr)
        return EXIT_TRAINING


if __name__ == "__main__":
    sys.exit(main())
