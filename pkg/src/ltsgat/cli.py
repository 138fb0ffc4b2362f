"""Command-line entry point.

Subcommands: synth, extract, train, eval, cv-dependent, cv-independent,
export-attention, gradcheck. Results go to declared output files; logs are
JSON lines on stderr. Exit codes: 0 success, 2 a fold failed, 3 data
format error, 64 usage error, 78 bad configuration.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from . import dataio, evaluation
from .config import PRESETS, load_config
from .errors import ConfigError, DataFormatError, TrainingDiverged
from .features import bands_by_name, extract_features, gen_synthetic
from .jsonlog import setup_logging
from .training import train

EXIT_OK = 0
EXIT_FOLD_FAILED = 2
EXIT_DATA_FORMAT = 3
EXIT_USAGE = 64
EXIT_CONFIG = 78

log = logging.getLogger("ltsgat.cli")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"error: {message}\n")
        raise SystemExit(EXIT_USAGE)


# flags every model-building subcommand shares
_CONFIG_FLAGS = [
    ("--epochs", int), ("--batch-size", int), ("--learning-rate", float),
    ("--lstm-hidden", int), ("--gat-layers", int), ("--gat-hidden", int),
    ("--attention-heads", int), ("--segments", int),
]


def _add_config_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--preset", choices=sorted(PRESETS) + ["custom"],
                   help="named hyperparameter preset")
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--seed", type=int)
    p.add_argument("--bands", help="comma-separated band subset")
    p.add_argument("--disable-temporal", action="store_true", default=None)
    p.add_argument("--disable-spatial", action="store_true", default=None)
    p.add_argument("--disable-da", action="store_true", default=None,
                   help="drop the adversarial domain head")
    for flag, typ in _CONFIG_FLAGS:
        p.add_argument(flag, type=typ)


def _overrides_from(args: argparse.Namespace) -> dict:
    mapping = {
        "seed": args.seed,
        "epochs": args.epochs,
        "batch_size": args.batch_size,
        "learning_rate": args.learning_rate,
        "lstm_hidden": args.lstm_hidden,
        "gat_layers": args.gat_layers,
        "gat_hidden": args.gat_hidden,
        "attention_heads": args.attention_heads,
        "segments": args.segments,
        "disable_temporal": args.disable_temporal,
        "disable_spatial": args.disable_spatial,
        "disable_domain_adaptation": args.disable_da,
    }
    if args.bands:
        mapping["bands"] = args.bands.split(",")
    return {k: v for k, v in mapping.items() if v is not None}


def _resolve_config(args: argparse.Namespace):
    return load_config(args.config, args.preset, _overrides_from(args))


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ltsgat", description=__doc__)
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    p = sub.add_parser("synth", help="generate a synthetic dataset directory")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--participants", type=int, required=True)
    p.add_argument("--trials", type=int, required=True)
    p.add_argument("--separation", type=float, default=1.0)
    p.add_argument("--shift", type=float, default=0.0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("extract", help="extract DE features from a dataset")
    p.add_argument("--in", dest="in_dir", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--bands", default="theta,alpha,beta,gamma")
    p.add_argument("--k", type=int, default=10)

    p = sub.add_parser("train", help="train one model on a feature set")
    p.add_argument("--features", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--dimension", default="valence",
                   choices=["valence", "arousal"])
    p.add_argument("--target-participants",
                   help="comma-separated ids used as the unlabeled target "
                        "domain (requires domain adaptation)")
    _add_config_args(p)

    p = sub.add_parser("eval", help="score a checkpoint on a feature set")
    p.add_argument("--features", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--dimension", default="valence",
                   choices=["valence", "arousal"])

    for name, paradigm in [("cv-dependent", "dependent"),
                           ("cv-independent", "independent")]:
        p = sub.add_parser(name, help=f"run the {paradigm} protocol")
        p.add_argument("--features", required=True)
        p.add_argument("--out", required=True)
        p.add_argument("--dimensions", default="valence,arousal")
        p.add_argument("--folds", type=int, default=10)
        _add_config_args(p)

    p = sub.add_parser("export-attention",
                       help="write attention importance CSVs")
    p.add_argument("--features", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("gradcheck",
                       help="finite-difference check of every primitive and "
                            "the end-to-end network")
    p.add_argument("--seed", type=int, default=0)

    return parser


# ---------------------------------------------------------------------------
# subcommand implementations
# ---------------------------------------------------------------------------

def _cmd_synth(args) -> int:
    trials = gen_synthetic(args.seed, args.participants, args.trials,
                           args.separation, args.shift)
    dataio.save_dataset(trials, args.out, extra={"generator": {
        "seed": args.seed, "participants": args.participants,
        "trials": args.trials, "separation": args.separation,
        "shift": args.shift}})
    log.info("wrote %d trials to %s", len(trials), args.out)
    return EXIT_OK


def _cmd_extract(args) -> int:
    trials = dataio.load_dataset(args.in_dir)
    bands = bands_by_name(args.bands.split(","))
    samples = []
    for t in trials:
        samples.extend(extract_features(t, bands, k=args.k))
    dataio.save_features(samples, args.out, [b.name for b in bands])
    log.info("extracted %d samples to %s", len(samples), args.out)
    return EXIT_OK


def _cmd_train(args) -> int:
    config = _resolve_config(args)
    samples, manifest = dataio.load_features(args.features)
    config.segments = int(manifest["segments"])
    config.bands = list(manifest["bands"])
    config.n_channels = int(manifest["n_channels"])
    target = None
    if args.target_participants:
        wanted = set(args.target_participants.split(","))
        target = [s for s in samples if s.participant_id in wanted]
        samples = [s for s in samples if s.participant_id not in wanted]
    from .features import standardize
    samples = standardize(samples)
    if target is not None:
        target = standardize(target)
    try:
        model, history = train(samples, target, config, args.dimension)
    except TrainingDiverged as exc:
        log.error("training diverged: %s", exc)
        return 1
    dataio.save_checkpoint(model, args.out)
    dataio.save_history(history, f"{args.out}/history.csv")
    dataio.write_config_echo(config, args.out)
    log.info("checkpoint written to %s", args.out)
    return EXIT_OK


def _cmd_eval(args) -> int:
    model = dataio.load_checkpoint(args.model)
    samples, _ = dataio.load_features(args.features)
    from .features import standardize
    samples = standardize(samples)
    metrics = evaluation.evaluate(model, samples, args.dimension)
    print(json.dumps({
        "dimension": args.dimension,
        "accuracy": metrics.accuracy,
        "f1_pos": metrics.f1_pos,
        "f1_macro": metrics.f1_macro,
        "confusion": {"tp": metrics.tp, "fp": metrics.fp,
                      "tn": metrics.tn, "fn": metrics.fn},
    }, indent=2))
    return EXIT_OK


def _cmd_protocol(args, paradigm: str) -> int:
    config = _resolve_config(args)
    samples, manifest = dataio.load_features(args.features)
    config.segments = int(manifest["segments"])
    config.bands = list(manifest["bands"])
    config.n_channels = int(manifest["n_channels"])
    dimensions = args.dimensions.split(",")
    result = evaluation.run_protocol(samples, paradigm, config, dimensions,
                                     out_dir=args.out, folds=args.folds)
    dataio.write_config_echo(config, args.out)
    if result.failures:
        return EXIT_FOLD_FAILED
    return EXIT_OK


def _cmd_export_attention(args) -> int:
    model = dataio.load_checkpoint(args.model)
    samples, _ = dataio.load_features(args.features)
    from .features import standardize
    samples = standardize(samples)
    evaluation.export_attention(model, samples, args.out)
    log.info("attention CSVs written to %s", args.out)
    return EXIT_OK


def _cmd_gradcheck(args) -> int:
    from .verification import full_gradient_suite
    reports = full_gradient_suite(args.seed)
    worst_name, worst = max(reports.items(),
                            key=lambda kv: kv[1].max_relative_error)
    ok = all(r.passed for r in reports.values())
    for name, report in reports.items():
        print(f"{name}: max_rel_err={report.max_relative_error:.3e} "
              f"{'ok' if report.passed else 'FAIL'}")
    print(f"worst: {worst_name} ({worst.max_relative_error:.3e})")
    return EXIT_OK if ok else 1


def main(argv: list[str] | None = None) -> int:
    setup_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if exc.code is not None else EXIT_USAGE
    if args.command is None:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    handlers = {
        "synth": _cmd_synth,
        "extract": _cmd_extract,
        "train": _cmd_train,
        "eval": _cmd_eval,
        "cv-dependent": lambda a: _cmd_protocol(a, "dependent"),
        "cv-independent": lambda a: _cmd_protocol(a, "independent"),
        "export-attention": _cmd_export_attention,
        "gradcheck": _cmd_gradcheck,
    }
    try:
        return handlers[args.command](args)
    except ConfigError as exc:
        log.error("configuration error: %s", exc)
        return EXIT_CONFIG
    except DataFormatError as exc:
        log.error("data format error: %s", exc)
        return EXIT_DATA_FORMAT


if __name__ == "__main__":
    sys.exit(main())
