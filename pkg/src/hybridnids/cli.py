"""Command-line entry point: ``hybridnids <subcommand> [options]``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 internal error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time

import numpy as np

from . import __version__
from ._random import STREAMS, stream_seed
from .errors import DataError
from .evaluation import (
    bench_throughput,
    export_score_density,
    format_table,
    prepare_split,
    report_to_json,
    run_filter_comparison,
    run_hybrid_comparison,
    run_novelty,
    write_density_csv,
    write_roc_csv,
)
from .features import FeatureSchema, MinMaxNormalizer, extract_dataset, read_samples, write_samples
from .flows import ClassLabel, parse_label, stream_flows
from .forest import RandomForest, balance_binary, balance_multiclass, save_forest
from .pipeline import load_detector, run_pipeline, write_results
from .synth import GenConfig, generate
from .vae import VariationalAutoencoder, load_vae, save_vae

log = logging.getLogger("hybridnids")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _label(text):
    try:
        return parse_label(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="master seed for every random stream")
    common.add_argument("--schema", metavar="PATH", help="feature schema JSON (ports, min_flows, window_seconds)")
    common.add_argument("--quiet", action="store_true", help="print nothing but errors")
    common.add_argument("--threads", type=int, default=None, help="cap on worker threads")

    p = _Parser(prog="hybridnids", description="Hybrid flow-based network anomaly detection.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("gen", parents=[common], help="generate synthetic train/test flow files")
    s.add_argument("--train-out", default="train_flows.csv")
    s.add_argument("--test-out", default="test_flows.csv")
    s.add_argument("--manifest-out", default="gen_manifest.json")
    s.add_argument("--duration", type=float, default=3 * 3600.0, help="simulated seconds per split")
    s.add_argument("--background-sources", type=int, default=100)

    s = sub.add_parser("extract", parents=[common], help="aggregate flows into window samples")
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--visibility", help="write the per-class omission/outvoting report here")

    s = sub.add_parser("fit-filter", parents=[common], help="train the Random Forest prefilter")
    s.add_argument("--train", required=True, help="sample CSV from `extract`")
    s.add_argument("--out", required=True)
    s.add_argument("--mode", choices=["binary", "multiclass"], default="binary")
    s.add_argument("--omit", nargs="+", type=_label, default=[], metavar="CLASS")
    s.add_argument("--trees", type=int, default=100)
    s.add_argument("--per-class", type=int, default=1000)

    s = sub.add_parser("fit-vae", parents=[common], help="train the VAE on background samples")
    s.add_argument("--train", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--loss-csv", help="per-epoch loss CSV (default: OUT.loss.csv)")
    s.add_argument("--k", type=float, default=1.0, help="threshold = mean + k * std of training losses")
    s.add_argument("--epochs", type=int, default=20)
    s.add_argument("--batch-size", type=int, default=1024)
    s.add_argument("--kl-weight", type=float, default=0.01)
    s.add_argument("--lr", type=float, default=1e-3)
    s.add_argument("--weight-decay", type=float, default=0.01)

    s = sub.add_parser("run", parents=[common], help="score a flow file with the hybrid detector")
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--forest", required=True)
    s.add_argument("--vae", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--tau", type=float, help="override the stored threshold")
    s.add_argument("--no-labels", action="store_true", help="deployment mode: omit true labels")

    s = sub.add_parser("eval", parents=[common], help="filter or hybrid comparison experiment")
    s.add_argument("--experiment", choices=["filter", "hybrid"], required=True)
    s.add_argument("--train", required=True)
    s.add_argument("--test", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--vae", help="reuse a trained VAE instead of training one")
    s.add_argument("--roc-out", help="ROC curve CSV (hybrid experiment)")
    s.add_argument("--kde-out", help="score density CSV (hybrid experiment)")
    s.add_argument("--trees", type=int, default=100)
    s.add_argument("--per-class", type=int, default=1000)
    s.add_argument("--epochs", type=int, default=20)

    s = sub.add_parser("novelty", parents=[common], help="novelty test with omitted attack classes")
    s.add_argument("--train", required=True)
    s.add_argument("--test", required=True)
    s.add_argument("--omit", nargs="+", type=_label, required=True, metavar="CLASS")
    s.add_argument("--restricted", action="store_true",
                   help="also evaluate on background plus the omitted classes only")
    s.add_argument("--out", required=True)
    s.add_argument("--vae", help="reuse a trained VAE instead of training one")
    s.add_argument("--trees", type=int, default=100)
    s.add_argument("--per-class", type=int, default=1000)
    s.add_argument("--epochs", type=int, default=20)

    s = sub.add_parser("bench", parents=[common], help="measure per-stage throughput")
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--forest", required=True)
    s.add_argument("--vae", required=True)
    s.add_argument("--repetitions", type=int, default=3)
    s.add_argument("--out", required=True)
    return p


# -- helpers ----------------------------------------------------------------------

def _schema(args) -> FeatureSchema:
    return FeatureSchema.load(args.schema) if args.schema else FeatureSchema()


def _say(args, text):
    if not args.quiet:
        print(text)


def _write_json(path, doc):
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_manifest(args, outputs, schema, started, extra=None):
    doc = {
        "subcommand": args.command,
        "config": {k: (v.value if isinstance(v, ClassLabel) else
                       [x.value if isinstance(x, ClassLabel) else x for x in v] if isinstance(v, list) else v)
                   for k, v in sorted(vars(args).items())},
        "seeds": {name: stream_seed(args.seed, name) for name in STREAMS},
        "outputs": [str(p) for p in outputs],
        "schema_version": schema.version,
        "schema": schema.to_dict(),
        "package_version": __version__,
        "wall_clock_seconds": time.perf_counter() - started,
    }
    if extra:
        doc.update(extra)
    for path in outputs:
        _write_json(f"{path}.manifest.json", doc)


def _model_meta(schema, norm, **extra):
    return {"schema_version": schema.version, "schema": schema.to_dict(),
            "normalizer": norm.to_dict(), **extra}


def _check_model(doc, schema, what):
    schema.check_version(doc.get("schema_version", "?"), what)


# -- subcommands ------------------------------------------------------------------

def cmd_gen(args, schema, started):
    cfg = GenConfig(duration=args.duration, background_sources=args.background_sources,
                    seed=args.seed, window_seconds=schema.window_seconds,
                    min_flows=schema.min_flows)
    manifest = generate(cfg, args.train_out, args.test_out, args.manifest_out)
    for split, info in manifest["splits"].items():
        _say(args, f"{split}: {info['flows']} flows -> {info['path']}")
    _write_manifest(args, [args.train_out, args.test_out, args.manifest_out], schema, started)


def cmd_extract(args, schema, started):
    samples, report = extract_dataset(stream_flows(args.input), schema)
    write_samples(samples, args.out, schema)
    outputs = [args.out]
    if args.visibility:
        _write_json(args.visibility, {"schema_version": schema.version, "classes": report.to_dict()})
        outputs.append(args.visibility)
    _say(args, f"{len(samples)} samples from {sum(report.total.values())} flows -> {args.out}")
    _write_manifest(args, outputs, schema, started, {"inputs": [args.input]})


def cmd_fit_filter(args, schema, started):
    train = read_samples(args.train, schema).without(ClassLabel.BLACKLIST)
    norm = MinMaxNormalizer().fit(train.X)
    train.X = norm.transform(train.X)
    bseed = stream_seed(args.seed, "balance")
    if args.mode == "binary":
        sub = balance_binary(train, args.omit, bseed, args.per_class)
        y = sub.y_binary
    else:
        sub = balance_multiclass(train, bseed, args.per_class, omitted=args.omit)
        y = sub.labels
    forest = RandomForest(n_estimators=args.trees, random_state=stream_seed(args.seed, "forest"))
    forest.fit(sub.X, y)
    omitted = sorted(c.value for c in args.omit)
    save_forest(forest, args.out, **_model_meta(schema, norm, omitted_classes=omitted,
                                                training_samples=len(sub)))
    _say(args, f"{args.mode} forest, {args.trees} trees on {len(sub)} samples -> {args.out}")
    _write_manifest(args, [args.out], schema, started,
                    {"inputs": [args.train], "omitted_classes": omitted})


def cmd_fit_vae(args, schema, started):
    train = read_samples(args.train, schema).without(ClassLabel.BLACKLIST)
    norm = MinMaxNormalizer().fit(train.X)
    bg = train.subset(np.array([lab is ClassLabel.BACKGROUND for lab in train.labels]))
    if len(bg) == 0:
        raise DataError("training file holds no background samples")
    vae = VariationalAutoencoder(
        learning_rate=args.lr, weight_decay=args.weight_decay, batch_size=args.batch_size,
        epochs=args.epochs, kl_weight=args.kl_weight, threshold_k=args.k,
        random_state=args.seed, verbose=not args.quiet,
    ).fit(norm.transform(bg.X))
    save_vae(vae, args.out, **_model_meta(schema, norm))
    loss_csv = args.loss_csv or f"{args.out}.loss.csv"
    with open(loss_csv, "w") as fh:
        fh.write("epoch,mean_total_loss\n")
        for i, v in enumerate(vae.loss_history_, start=1):
            fh.write(f"{i},{v!r}\n")
    t = vae.threshold_
    _say(args, f"threshold tau = {t.tau:.6f} (mean {t.loss_mean:.6f} + {t.k} x std {t.loss_std:.6f})")
    _write_manifest(args, [args.out, loss_csv], schema, started, {"inputs": [args.train]})


def cmd_run(args, schema, started):
    det = load_detector(args.forest, args.vae, schema, tau=args.tau)
    results = run_pipeline(args.input, det, schema, with_labels=not args.no_labels)
    write_results(results, args.out, with_labels=not args.no_labels)
    flagged = sum(r.final_verdict for r in results)
    _say(args, f"{len(results)} windows scored, {flagged} flagged -> {args.out}")
    _write_manifest(args, [args.out], schema, started,
                    {"inputs": [args.input, args.forest, args.vae], "tau": det.tau_})


def _load_vae_for(args, schema, train, test):
    if not args.vae:
        return None
    vae, doc = load_vae(args.vae)
    _check_model(doc, schema, "VAE model")
    _, _, norm = prepare_split(train, test)
    if doc.get("normalizer") != norm.to_dict():
        raise DataError("VAE model was trained on a different training set")
    return vae


def _read_pair(args, schema):
    return read_samples(args.train, schema), read_samples(args.test, schema)


def cmd_eval(args, schema, started):
    train, test = _read_pair(args, schema)
    if args.experiment == "filter":
        result = run_filter_comparison(train, test, args.seed, n_estimators=args.trees,
                                       per_class=args.per_class)
    else:
        result = run_hybrid_comparison(
            train, test, args.seed, vae=_load_vae_for(args, schema, train, test),
            vae_params={"epochs": args.epochs}, n_estimators=args.trees, per_class=args.per_class)
    outputs = [args.out]
    scores = result.pop("scores", None)
    with open(args.out, "w") as fh:
        fh.write(report_to_json(result))
    if args.experiment == "hybrid":
        if args.roc_out:
            write_roc_csv(result["reports"], args.roc_out)
            outputs.append(args.roc_out)
        if args.kde_out:
            groups = {}
            for lab, a, h in zip(scores["labels"], scores["anomaly"], scores["hybrid"]):
                side = "background" if lab == "background" else "attack"
                groups.setdefault(f"original/{side}", []).append(a)
                groups.setdefault(f"modified/{side}", []).append(h)
            # the hybrid can push every score of a group to the filter value
            groups = {k: v for k, v in sorted(groups.items()) if any(x != 1.0 for x in v)}
            write_density_csv(export_score_density(groups), args.kde_out)
            outputs.append(args.kde_out)
    _say(args, format_table(result))
    _write_manifest(args, outputs, schema, started, {"inputs": [args.train, args.test]})


def cmd_novelty(args, schema, started):
    train, test = _read_pair(args, schema)
    result = run_novelty(train, test, args.omit, args.restricted, args.seed,
                         vae=_load_vae_for(args, schema, train, test),
                         vae_params={"epochs": args.epochs}, n_estimators=args.trees,
                         per_class=args.per_class)
    with open(args.out, "w") as fh:
        fh.write(report_to_json(result))
    _say(args, format_table(result))
    _write_manifest(args, [args.out], schema, started, {"inputs": [args.train, args.test]})


def cmd_bench(args, schema, started):
    det = load_detector(args.forest, args.vae, schema)
    report = bench_throughput(args.input, det, schema, args.repetitions)
    _write_json(args.out, {"format": "hybridnids.bench", "version": 1, **report.to_dict()})
    for k, v in report.median.items():
        ref = report.reference_rates.get(k)
        _say(args, f"{k:32s} {v:12.0f}   (reference {ref:,.0f})")
    _write_manifest(args, [args.out], schema, started, {"inputs": [args.input]})


COMMANDS = {
    "gen": cmd_gen,
    "extract": cmd_extract,
    "fit-filter": cmd_fit_filter,
    "fit-vae": cmd_fit_vae,
    "run": cmd_run,
    "eval": cmd_eval,
    "novelty": cmd_novelty,
    "bench": cmd_bench,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help / --version
        return EXIT_OK if not exc.code else EXIT_USAGE
    logging.basicConfig(level=logging.ERROR if args.quiet else logging.INFO,
                        format="%(levelname)s %(message)s")
    started = time.perf_counter()
    try:
        schema = _schema(args)
        if args.threads:
            from threadpoolctl import threadpool_limits
            with threadpool_limits(limits=args.threads):
                COMMANDS[args.command](args, schema, started)
        else:
            COMMANDS[args.command](args, schema, started)
    except (DataError, ValueError, OSError, json.JSONDecodeError, KeyError) as exc:
        print(f"hybridnids {args.command}: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001
        log.exception("internal error")
        print(f"hybridnids {args.command}: internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
