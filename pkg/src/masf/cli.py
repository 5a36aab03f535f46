"""Command-line front end.

Subcommands:

  generate    write a synthetic feature-map corpus with a manifest
  calibrate   fit a detector on a labeled manifest and save the artifact
  score       stream a manifest through a detector into a CSV of p-values
  evaluate    detection metrics from two score CSVs (in vs out)
  validate    held-out uniformity check of the calibrated p-values
  bench       per-layer statistic cost comparison

Exit codes: 0 success, 2 usage or argument errors, 3 not enough data to
calibrate or evaluate, 4 malformed or mismatched input files.  Report
paths that write delimited output also render companion figures unless
--no-figures is passed.
"""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

import numpy as np

from ._version import __version__
from .artifact import load_detector, save_detector
from .bench import STATISTIC_IDS, BenchSpec, run_bench, write_bench_csv
from .errors import (
    ArityMismatch,
    CorruptArtifact,
    DegenerateCovariance,
    DimensionMismatch,
    EmptyBatch,
    EmptySample,
    EmptyScores,
    EmptyVector,
    InsufficientData,
    InsufficientSamples,
    LengthMismatch,
    MalformedManifest,
    MasfError,
    MissingLabels,
    MissingTensor,
    NonFiniteTensor,
    ShapeMismatch,
    TooFewSamples,
    UncalibratedClass,
    VersionMismatch,
)
from .metrics import (
    ScoreSet,
    evaluate_scores,
    ks_uniformity,
    qq_export,
    split_for_validation,
    write_metrics_csv,
)
from .pipeline import SPLIT_MODES, Scorer, calibrate
from .quantiles import TrackerConfig
from .synthetic import SHIFT_PATTERNS, ShiftSpec, SyntheticSpec, generate
from .tensor_io import read_manifest, stream_records

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_INSUFFICIENT = 3
EXIT_MALFORMED = 4

_INSUFFICIENT_ERRORS = (
    EmptyBatch,
    EmptySample,
    EmptyScores,
    EmptyVector,
    InsufficientData,
    InsufficientSamples,
    MissingLabels,
    TooFewSamples,
    UncalibratedClass,
)
_MALFORMED_ERRORS = (
    ArityMismatch,
    CorruptArtifact,
    DegenerateCovariance,
    DimensionMismatch,
    LengthMismatch,
    MalformedManifest,
    MissingTensor,
    NonFiniteTensor,
    ShapeMismatch,
    VersionMismatch,
)

_CHUNK = 256


def _add_tracker_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--batch-size", type=int, default=1000,
                   help="calibration tracker batch size (default 1000)")
    p.add_argument("--tail-k", type=int, default=200,
                   help="exact order statistics kept per tail (default 200)")
    p.add_argument("--tail-grid", type=int, default=10,
                   help="tail grid points kept per side (default 10)")
    p.add_argument("--tail-mode", choices=("auto", "always", "never"), default="auto")


def _tracker_config(args) -> TrackerConfig:
    return TrackerConfig(
        batch_size=args.batch_size,
        tail_k=args.tail_k,
        tail_grid=args.tail_grid,
        tail_mode=args.tail_mode,
    )


def _parse_shapes(text: str) -> tuple:
    shapes = []
    for part in text.split(";"):
        part = part.strip()
        if not part:
            continue
        dims = [int(v) for v in part.split(",")]
        if len(dims) != 3:
            raise ValueError(f"shape {part!r} must be channels,height,width")
        shapes.append(tuple(dims))
    if not shapes:
        raise ValueError("no shapes given")
    return tuple(shapes)


def _figure_path(out_path, suffix: str) -> Path:
    out_path = Path(out_path)
    return out_path.with_name(out_path.stem + suffix + ".png")


def _cmd_generate(args) -> int:
    spec = SyntheticSpec(
        classes=args.classes,
        layer_shapes=_parse_shapes(args.layers),
        seed=args.corpus_seed,
        dataset=args.dataset,
    )
    shift = None
    if args.shift_fraction is not None:
        if args.shift_magnitude is None:
            raise MalformedManifest("--shift-fraction requires --shift-magnitude")
        layer_ids = None
        if args.shift_layers:
            layer_ids = tuple(int(v) for v in args.shift_layers.split(","))
        shift = ShiftSpec(
            fraction=args.shift_fraction,
            magnitude=args.shift_magnitude,
            pattern=args.shift_pattern,
            layer_ids=layer_ids,
        )
    path = generate(
        spec,
        n_per_class=args.per_class,
        out_dir=args.out,
        seed=args.seed,
        shift=shift,
        labeled=not args.unlabeled,
        with_predictions=args.with_predictions,
        chunk=args.chunk,
    )
    print(path)
    return EXIT_OK


def _cmd_calibrate(args) -> int:
    manifest = read_manifest(args.manifest)
    monitored = None
    if args.layers:
        monitored = [int(v) for v in args.layers.split(",")]
    detector = calibrate(
        manifest,
        args.scheme,
        split_mode=args.split,
        monitored_layers=monitored,
        sampling_rate=args.sampling_rate,
        seed=args.seed,
        tracker_config=_tracker_config(args),
        quiet=not args.verbose,
    )
    save_detector(detector, args.out)
    size = Path(args.out).stat().st_size
    print(
        f"calibrated scheme={detector.scheme.name} classes={len(detector.class_ids)} "
        f"layers={len(detector.layers)} split={args.split} -> {args.out} ({size} bytes)"
    )
    return EXIT_OK


def _score_rows(scorer: Scorer, manifest, alpha, accuracy, quarantine):
    skipped = []
    records = []
    stream = stream_records(
        manifest, quarantine=quarantine, on_skip=skipped.append
    )
    for rec in stream:
        records.append(rec)
        if len(records) >= _CHUNK:
            yield from scorer.reports(records, alpha=alpha, accuracy=accuracy)
            records = []
    if records:
        yield from scorer.reports(records, alpha=alpha, accuracy=accuracy)
    if skipped:
        print(f"skipped {len(skipped)} non-finite samples", file=sys.stderr)


def _cmd_score(args) -> int:
    detector = load_detector(args.detector)
    manifest = read_manifest(args.manifest)
    scorer = Scorer(detector, manifest.layers)
    class_ids = detector.class_ids
    n = 0
    rejected = 0
    with open(args.out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["id", "q_max", "reject_max", "y_hat", "q_predicted", "reject_predicted", "t1e_bound"]
            + [f"q_{c}" for c in class_ids]
        )
        for rep in _score_rows(scorer, manifest, args.alpha, args.accuracy, args.quarantine):
            n += 1
            rejected += int(rep.reject_max)
            writer.writerow(
                [
                    rep.sample_id,
                    repr(rep.q_max),
                    int(rep.reject_max),
                    "" if rep.y_hat is None else rep.y_hat,
                    "" if rep.q_predicted is None else repr(rep.q_predicted),
                    "" if rep.reject_predicted is None else int(rep.reject_predicted),
                    "" if rep.t1e_bound is None else repr(rep.t1e_bound),
                ]
                + [repr(rep.pvalues[c]) for c in class_ids]
            )
    if n == 0:
        raise EmptyScores("no samples scored")
    print(f"scored {n} samples, rejected {rejected} at alpha={args.alpha} -> {args.out}")
    return EXIT_OK


def _read_score_column(path, column: str) -> np.ndarray:
    try:
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None or column not in reader.fieldnames:
                raise MalformedManifest(f"{path}: no column {column!r}")
            values = [row[column] for row in reader if row.get(column, "") != ""]
    except OSError as exc:
        raise MissingTensor(f"{path}: {exc}") from exc
    if not values:
        raise EmptyScores(f"{path}: column {column!r} has no values")
    try:
        return np.array([float(v) for v in values], dtype=np.float64)
    except ValueError as exc:
        raise MalformedManifest(f"{path}: column {column!r} is not numeric") from exc


def _cmd_evaluate(args) -> int:
    ins = _read_score_column(args.in_csv, args.column)
    outs = _read_score_column(args.out_csv, args.column)
    scores = ScoreSet(in_scores=ins, out_scores=outs, label=args.label)
    row = evaluate_scores(scores, tnr=args.tnr)
    print(
        f"n_in={row['n_in']} n_out={row['n_out']} "
        f"tpr@tnr{args.tnr:g}={row['tpr']:.4f} auroc={row['auroc']:.4f} "
        f"threshold={row['threshold']:.6g}"
    )
    if args.report:
        write_metrics_csv([row], args.report)
        print(f"report -> {args.report}")
        if args.figures:
            fig = _figure_path(args.report, "_scores")
            from .plots import render_score_histogram

            render_score_histogram(ins, outs, fig, title=args.label or "detection scores")
            print(f"figure -> {fig}")
    return EXIT_OK


def _cmd_validate(args) -> int:
    manifest = read_manifest(args.manifest)
    cal_m, test_m = split_for_validation(manifest, args.test_fraction)
    detector = calibrate(
        cal_m,
        args.scheme,
        split_mode=args.split,
        sampling_rate=args.sampling_rate,
        seed=args.seed,
        tracker_config=_tracker_config(args),
        quiet=not args.verbose,
    )
    scorer = Scorer(detector, manifest.layers)
    pos = {c: i for i, c in enumerate(detector.class_ids)}
    q_true = []
    records = []

    def drain():
        if not records:
            return
        qs = scorer.score_chunk(records)
        for rec, qrow in zip(records, qs):
            q_true.append(float(qrow[pos[rec.y]]))
        records.clear()

    for rec in stream_records(test_m):
        records.append(rec)
        if len(records) >= _CHUNK:
            drain()
    drain()

    arr = np.array(q_true, dtype=np.float64)
    d, p = ks_uniformity(arr)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = qq_export(arr, out_dir / "qq.csv")
    with open(out_dir / "ks_report.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["n", "ks_d", "ks_pvalue", "rej_at_0.01", "rej_at_0.05", "rej_at_0.10"])
        writer.writerow(
            [arr.size, repr(d), repr(p)]
            + [repr(float(np.mean(arr <= a))) for a in (0.01, 0.05, 0.10)]
        )
    print(f"held-out n={arr.size} ks_d={d:.5f} ks_pvalue={p:.4f}")
    for a in (0.01, 0.05, 0.10):
        print(f"false-alarm rate at alpha={a:.2f}: {float(np.mean(arr <= a)):.4f}")
    print(f"reports -> {out_dir / 'ks_report.csv'}, {out_dir / 'qq.csv'}")
    if args.figures:
        from .plots import render_qq

        fig = render_qq(rows, out_dir / "qq.png")
        print(f"figure -> {fig}")
    return EXIT_OK


def _cmd_bench(args) -> int:
    stats = tuple(args.statistics.split(",")) if args.statistics else STATISTIC_IDS
    shapes = _parse_shapes(args.shapes) if args.shapes else BenchSpec.shapes
    spec = BenchSpec(
        statistics=stats,
        shapes=shapes,
        measured=args.measured,
        warmup=args.warmup,
        classes=args.classes,
        seed=args.seed,
    )
    results = run_bench(spec)
    write_bench_csv(results, args.out)
    for r in results:
        print(
            f"{r.statistic}: single {r.single_mean_ms:.4f} +/- {r.single_sd_ms:.4f} ms, "
            f"full pass {r.total_mean_ms:.3f} +/- {r.total_sd_ms:.3f} ms "
            f"({r.executions} executions)"
        )
    print(f"report -> {args.out}")
    if args.figures:
        from .plots import render_bench

        fig = render_bench(results, _figure_path(args.out, "_bars"))
        print(f"figure -> {fig}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="masf",
        description="hierarchical eCDF out-of-distribution detector over CNN feature maps",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a synthetic corpus")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--classes", type=int, required=True)
    p.add_argument("--layers", required=True,
                   help="semicolon-separated channels,height,width triplets")
    p.add_argument("--per-class", type=int, required=True)
    p.add_argument("--seed", type=int, default=0, help="sample stream seed")
    p.add_argument("--corpus-seed", type=int, default=0, help="class parameter seed")
    p.add_argument("--dataset", default="synthetic")
    p.add_argument("--unlabeled", action="store_true")
    p.add_argument("--with-predictions", action="store_true",
                   help="record y_hat = y for labeled samples")
    p.add_argument("--shift-fraction", type=float, default=None)
    p.add_argument("--shift-magnitude", type=float, default=None)
    p.add_argument("--shift-pattern", choices=SHIFT_PATTERNS, default="global")
    p.add_argument("--shift-layers", default=None, help="comma-separated layer ids")
    p.add_argument("--chunk", type=int, default=256)
    p.set_defaults(func=_cmd_generate)

    p = sub.add_parser("calibrate", help="fit and save a detector")
    p.add_argument("--manifest", required=True)
    p.add_argument("--scheme", default="max-simes-fisher")
    p.add_argument("--out", required=True, help="detector artifact path")
    p.add_argument("--split", choices=SPLIT_MODES, default="reuse")
    p.add_argument("--sampling-rate", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--layers", default=None, help="comma-separated layer ids to monitor")
    p.add_argument("--verbose", action="store_true")
    _add_tracker_args(p)
    p.set_defaults(func=_cmd_calibrate)

    p = sub.add_parser("score", help="score a manifest against a detector")
    p.add_argument("--detector", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="score CSV path")
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--accuracy", type=float, default=None,
                   help="classifier accuracy for the predicted-class error bound")
    p.add_argument("--quarantine", action="store_true",
                   help="skip non-finite samples instead of failing")
    p.set_defaults(func=_cmd_score)

    p = sub.add_parser("evaluate", help="detection metrics from two score CSVs")
    p.add_argument("--in", dest="in_csv", required=True, help="in-distribution score CSV")
    p.add_argument("--out", dest="out_csv", required=True, help="out-of-distribution score CSV")
    p.add_argument("--column", default="q_max")
    p.add_argument("--tnr", type=float, default=0.95)
    p.add_argument("--label", default="")
    p.add_argument("--report", default=None, help="metrics CSV path")
    p.add_argument("--no-figures", dest="figures", action="store_false")
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("validate", help="held-out p-value uniformity check")
    p.add_argument("--manifest", required=True)
    p.add_argument("--scheme", default="max-simes-fisher")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--test-fraction", type=float, default=0.1)
    p.add_argument("--split", choices=SPLIT_MODES, default="disjoint")
    p.add_argument("--sampling-rate", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--verbose", action="store_true")
    p.add_argument("--no-figures", dest="figures", action="store_false")
    _add_tracker_args(p)
    p.set_defaults(func=_cmd_validate)

    p = sub.add_parser("bench", help="per-layer statistic cost comparison")
    p.add_argument("--out", required=True, help="timing CSV path")
    p.add_argument("--statistics", default=None,
                   help=f"comma-separated subset of {', '.join(STATISTIC_IDS)}")
    p.add_argument("--measured", type=int, default=10_000)
    p.add_argument("--warmup", type=int, default=1_000)
    p.add_argument("--classes", type=int, default=1000)
    p.add_argument("--shapes", default=None,
                   help="semicolon-separated channels,height,width triplets")
    p.add_argument("--seed", type=int, default=2024)
    p.add_argument("--no-figures", dest="figures", action="store_false")
    p.set_defaults(func=_cmd_bench)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except _INSUFFICIENT_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INSUFFICIENT
    except _MALFORMED_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MALFORMED
    except (MasfError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
