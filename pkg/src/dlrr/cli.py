"""Command-line entry point.

Exit codes: 0 success, 1 configuration error, 2 data error, 3 solver failure.
"""

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import __version__
from .classifiers import write_outcomes_csv
from .data import (
    CorruptionSpec,
    DatasetManifest,
    corrupt,
    load_dataset,
    load_samples,
    read_image,
    save_samples,
    synth_multisubspace,
    write_matrix,
)
from .errors import ConfigError, DataError, SolverError, StageError
from .experiment import METHODS, load_config, run_experiment
from .pipeline import evaluate, load_model, predict, save_model, train
from .solver import TRACE_HEADER, SolverConfig, recover_dictionary

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_SOLVER = 0, 1, 2, 3

log = logging.getLogger("dlrr")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _common(p, out_required=True):
    p.add_argument("--config", help="experiment/solver INI file")
    p.add_argument("--seed", type=int, help="random seed")
    p.add_argument("--out", required=out_required, help="output directory")
    p.add_argument("--trace", action="store_true", help="write solver iteration CSV")


def _solver_args(p):
    p.add_argument("--lam", type=float, help="error-term weight (default 0.02)")
    p.add_argument("--eta", type=float, help="incoherence weight (default 0.001)")
    p.add_argument("--max-iter", type=int)


def build_parser():
    parser = _Parser(prog="dlrr", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="generate a union-of-subspaces dataset")
    _common(p)
    p.add_argument("--classes", type=int, default=3)
    p.add_argument("--rank", type=int, default=2)
    p.add_argument("--per-class", type=int, default=20)
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--scale", type=float, default=1.0)
    p.add_argument("--height", type=int, default=10)
    p.add_argument("--width", type=int, default=10)
    p.add_argument("--orthogonal", action="store_true")

    p = sub.add_parser("corrupt", help="corrupt a sample matrix or manifest dataset")
    _common(p)
    p.add_argument("--input", required=True, help="sample matrix file or manifest CSV")
    p.add_argument("--kind", choices=("pixel", "block"), required=True)
    p.add_argument("--fraction", type=float, required=True)
    p.add_argument("--extent", type=float, required=True)
    p.add_argument("--occluder", help="occluder image for block corruption")
    p.add_argument("--height", type=int)
    p.add_argument("--width", type=int)

    p = sub.add_parser("recover", help="recover the clean dictionary")
    _common(p)
    _solver_args(p)
    p.add_argument("--input", required=True)

    p = sub.add_parser("train", help="train a model")
    _common(p)
    _solver_args(p)
    p.add_argument("--input", required=True)
    p.add_argument("--dim", type=int, required=True)
    p.add_argument("--method", default="dlrr-cr", choices=sorted(METHODS))
    p.add_argument("--beta", type=float, default=1.1)
    p.add_argument("--dictionary-source", choices=("original", "clean"), default="original")

    p = sub.add_parser("predict", help="classify query columns")
    _common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--beta", type=float)

    p = sub.add_parser("evaluate", help="accuracy report on a labelled test set")
    _common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--beta", type=float)

    p = sub.add_parser("benchmark", help="run a methods x dims x seeds sweep")
    _common(p)
    return parser


def _solver_config(args):
    cfg = SolverConfig()
    if args.config:
        cfg = load_config(args.config).solver
    over = {}
    if getattr(args, "lam", None) is not None:
        over["lam"] = args.lam
    if getattr(args, "eta", None) is not None:
        over["eta"] = args.eta
    if getattr(args, "max_iter", None) is not None:
        over["max_iter"] = args.max_iter
    return cfg.with_(**over) if over else cfg


def _load_input(path, split="train"):
    if str(path).lower().endswith(".csv"):
        train_set, test_set = load_dataset(DatasetManifest.read(path))
        return train_set if split == "train" else test_set
    return load_samples(path)


def _trace_writer(args, out):
    if not args.trace:
        return None, None
    fh = open(out / "trace.csv", "w", encoding="utf-8")
    fh.write(TRACE_HEADER + "\n")
    return (lambda line: fh.write(line + "\n")), fh


def cmd_synth(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    X, clean = synth_multisubspace(
        args.classes,
        args.height * args.width,
        args.rank,
        args.per_class,
        args.noise,
        args.seed or 0,
        orthogonal=args.orthogonal,
        geometry=(args.height, args.width),
        scale=args.scale,
    )
    save_samples(out / "samples.mat", X)
    write_matrix(out / "clean.mat", clean)
    return EXIT_OK


def cmd_corrupt(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    seed = args.seed or 0
    occluder = read_image(args.occluder) if args.occluder else None
    if str(args.input).lower().endswith(".csv"):
        geometry = (args.height, args.width) if args.height and args.width else None
        parts = dict(zip(("train", "test"), load_dataset(DatasetManifest.read(args.input, geometry))))
    else:
        parts = {"samples": load_samples(args.input)}
    record = {"input": str(args.input), "occluder": args.occluder, "outputs": {}}
    for i, (name, X) in enumerate(parts.items()):
        if args.height and args.width and X.geometry is None:
            X = type(X)(X.data, X.labels, (args.height, args.width))
        spec = CorruptionSpec(args.kind, args.fraction, args.extent, seed + i)
        Xc, info = corrupt(X, spec, occluder, return_info=True)
        save_samples(out / f"{name}.mat", Xc)
        record["outputs"][name] = {"spec": spec.to_dict(), **info}
    (out / "corruption.json").write_text(json.dumps(record, indent=2, sort_keys=True), encoding="utf-8")
    return EXIT_OK


def cmd_recover(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    X = _load_input(args.input).sorted_by_class()
    cfg = _solver_config(args)
    sink, fh = _trace_writer(args, out)
    try:
        r = recover_dictionary(X, cfg, trace=sink)
    finally:
        if fh:
            fh.close()
    save_samples(out / "clean_dictionary.mat", X.with_data(r.clean_dictionary))
    write_matrix(out / "error.mat", r.error)
    for c, Z in zip(r.class_ids, r.per_class_Z):
        write_matrix(out / f"Z_{c}.mat", Z)
    summary = {"class_ids": r.class_ids, "converged": r.converged, "iterations": r.iterations}
    (out / "recovery.json").write_text(json.dumps(summary, sort_keys=True), encoding="utf-8")
    if not r.all_converged:
        log.warning("some classes hit max_iter: %s", summary)
    return EXIT_OK


def cmd_train(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    X = _load_input(args.input)
    eta_zero, opts = METHODS[args.method]
    opts = replace(opts, beta=args.beta)
    if opts.recover:
        opts = replace(opts, dictionary_source=args.dictionary_source)
    cfg = _solver_config(args)
    if eta_zero:
        cfg = cfg.with_(eta=0.0)
    sink, fh = _trace_writer(args, out)
    try:
        model = train(X, cfg, args.dim, opts, trace=sink)
    finally:
        if fh:
            fh.close()
    save_model(model, out)
    return EXIT_OK


def cmd_predict(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    model = load_model(args.model)
    Q = _load_input(args.input, split="test")
    outcomes = []
    for j in range(Q.n_samples):
        outcomes.append(predict(model, Q.data[:, j], args.beta))
    write_outcomes_csv(out / "predictions.csv", outcomes, model.classes, Q.labels)
    return EXIT_OK


def cmd_evaluate(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    model = load_model(args.model)
    T = _load_input(args.input, split="test")
    report = evaluate(model, T, args.beta)
    report.write_csv(out / "evaluation.csv")
    summary = {
        "n_queries": report.n_queries,
        "accuracy": report.accuracy,
        "per_class_accuracy": {str(k): v for k, v in report.per_class_accuracy.items()},
        "confusion": [[t, p, n] for (t, p), n in sorted(report.confusion.items(), key=str)],
        "failures": {str(k): v for k, v in report.failures.items()},
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True), encoding="utf-8")
    acc = "undefined (empty test set)" if report.accuracy is None else f"{report.accuracy:.4f}"
    print(f"accuracy: {acc} over {report.n_queries} queries")
    return EXIT_OK


def cmd_benchmark(args):
    if not args.config:
        raise ConfigError("benchmark needs --config")
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.seeds = [args.seed]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    sink, fh = _trace_writer(args, out)
    try:
        result = run_experiment(cfg, trace=sink)
    finally:
        if fh:
            fh.close()
    result.write(out)
    with open(out / "results_table.csv", encoding="utf-8") as t:
        sys.stdout.write(t.read())
    return EXIT_OK


COMMANDS = {
    "synth": cmd_synth,
    "corrupt": cmd_corrupt,
    "recover": cmd_recover,
    "train": cmd_train,
    "predict": cmd_predict,
    "evaluate": cmd_evaluate,
    "benchmark": cmd_benchmark,
}


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SolverError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except StageError as exc:
        print(f"stage failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER if exc.stage == "recover" else EXIT_DATA
    except (DataError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
