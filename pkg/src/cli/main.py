"""
Berry Pose - Command Line Interface

Subcommands:
    generate   render a synthetic dataset
    encode     write the heat map of one key point as PFM
    decode     locate the key point of a stack of PFM heat maps
    estimate   estimate (phi, theta) for every record of a dataset
    calibrate  fit shape parameters on a dataset with orientation ground truth
    evaluate   compare predictions with a dataset and write summaries

Exit codes: 0 success, 1 runtime or data error, 2 usage error.
Logs and warnings go to standard error.
"""
import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import List, Optional

from src.config.settings import Settings
from src.core.errors import BerryPoseError, InvalidValue, MalformedFile, NoGroundTruth
from src.core.models import ImageGrid, KeyPoint, KeypointKind, Prediction, ShapeParams, default_shape_params
from src.database.db import open_dataset
from src.database.formats import read_heatmap, write_heatmap
from src.database.records import read_params, read_predictions, write_params, write_predictions
from src.infra.workers import map_ordered
from src.services.heatmap import HeatmapStack, decode, encode
from src.services.logging_config import setup_logging

logger = logging.getLogger(__name__)


def positive_int(value: str) -> int:
    try:
        number = int(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {value!r}")
    if number < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {value!r}")
    return number


def non_negative_float(value: str) -> float:
    try:
        number = float(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a number >= 0, got {value!r}")
    if not number >= 0:
        raise argparse.ArgumentTypeError(f"expected a number >= 0, got {value!r}")
    return number


def positive_float(value: str) -> float:
    number = non_negative_float(value)
    if number == 0:
        raise argparse.ArgumentTypeError(f"expected a number > 0, got {value!r}")
    return number


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="berrypose",
        description="Strawberry orientation from silhouettes and key points.",
    )
    parser.add_argument("--log-level", default=None, help="DEBUG, INFO, WARNING or ERROR (default: LOG_LEVEL)")
    sub = parser.add_subparsers(dest="command", required=True)

    threads = argparse.ArgumentParser(add_help=False)
    threads.add_argument("--threads", type=positive_int, default=None,
                         help="worker threads (default: BERRYPOSE_THREADS or 1)")

    p = sub.add_parser("generate", parents=[threads], help="render a synthetic dataset")
    p.add_argument("--out", required=True, type=Path, help="output dataset directory")
    p.add_argument("--berries", required=True, type=positive_int)
    p.add_argument("--views", required=True, type=positive_int, help="views per berry")
    p.add_argument("--seed", type=int, default=None, help="dataset seed (default: BERRYPOSE_SEED or 0)")
    p.add_argument("--noise-px", type=non_negative_float, default=0.0, help="key point jitter std-dev in pixels")
    p.add_argument("--scale", type=positive_float, default=170.0, help="pixels per world unit")
    p.add_argument("--grid", type=positive_int, default=256, help="square grid size in pixels")
    p.add_argument("--margin", type=int, default=8, help="minimum border in pixels")
    p.add_argument("--heatmaps", type=int, default=0, metavar="S",
                   help="also write S simulated detector maps per key point (0-8)")

    p = sub.add_parser("encode", help="write the heat map of one key point")
    p.add_argument("--x", required=True, type=float)
    p.add_argument("--y", required=True, type=float)
    p.add_argument("--out", required=True, type=Path, help="output PFM file")
    p.add_argument("--width", type=positive_int, default=256)
    p.add_argument("--height", type=positive_int, default=256)
    p.add_argument("--sigma", type=positive_float, default=2.0, help="Gaussian kernel width in pixels")

    p = sub.add_parser("decode", help="locate the key point of a stack of heat maps")
    p.add_argument("maps", nargs="+", type=Path, help="PFM maps of one stack")
    p.add_argument("--kind", choices=[k.value for k in KeypointKind], default=KeypointKind.TOP.value)

    p = sub.add_parser("estimate", parents=[threads], help="estimate orientation for every record")
    p.add_argument("--data", required=True, type=Path)
    p.add_argument("--params", type=Path, default=None, help="shape params JSON (default: BERRYPOSE_PARAMS)")
    p.add_argument("--out", required=True, type=Path, help="predictions JSON lines")
    p.add_argument("--use-heatmaps", action="store_true", help="decode key points from the dataset heat maps")
    p.add_argument("--strict", action="store_true", help="fail on disconnected masks")

    p = sub.add_parser("calibrate", parents=[threads], help="fit shape params on ground truth")
    p.add_argument("--data", required=True, type=Path)
    p.add_argument("--budget", type=positive_int, default=10000, help="objective evaluations")
    p.add_argument("--out", required=True, type=Path, help="fitted params JSON")
    p.add_argument("--init", type=Path, default=None, help="initial params JSON (default: published constants)")
    p.add_argument("--report", type=Path, default=None, help="report text file (default: next to --out)")
    p.add_argument("--holdout", type=float, default=0.0, metavar="F",
                   help="fraction of id-sorted records held out for testing")

    p = sub.add_parser("evaluate", help="summarise prediction errors")
    p.add_argument("--data", required=True, type=Path)
    p.add_argument("--pred", required=True, type=Path)
    p.add_argument("--bins", type=positive_float, default=10.0, help="theta bin width in degrees")
    p.add_argument("--out-prefix", required=True, type=Path)
    p.add_argument("--folds", type=positive_int, default=None, help="also summarise K contiguous folds")
    p.add_argument("--plot", action="store_true", help="write HTML charts")
    p.add_argument("--xlsx", action="store_true", help="write an Excel workbook")
    return parser


def _validate(parser: argparse.ArgumentParser, args) -> None:
    """Cross-flag checks that must fail before any work starts."""
    if args.command == "generate":
        if not 0 <= args.heatmaps <= 8:
            parser.error("--heatmaps must lie in [0, 8]")
        if args.grid < 8:
            parser.error("--grid must be at least 8")
        if args.margin < 0:
            parser.error("--margin must be >= 0")
        if args.seed is not None and args.seed < 0:
            parser.error("--seed must be >= 0")
    elif args.command == "calibrate":
        if not 0.0 <= args.holdout < 1.0:
            parser.error("--holdout must lie in [0, 1)")
    elif args.command == "evaluate":
        if args.bins > 90:
            parser.error("--bins must lie in (0, 90]")
        if args.folds is not None and args.folds < 2:
            parser.error("--folds must be at least 2")
    elif args.command == "encode":
        if args.width < 8 or args.height < 8:
            parser.error("--width and --height must be at least 8")


# ============================================================================
# SUBCOMMANDS
# ============================================================================

def cmd_generate(args, settings: Settings) -> int:
    from src.services.synthgen import RenderSpec, generate_dataset

    seed = args.seed if args.seed is not None else settings.DEFAULT_SEED
    spec = RenderSpec(
        grid=ImageGrid(args.grid, args.grid),
        scale=args.scale,
        noise_px=args.noise_px,
        seed=seed,
        margin=args.margin,
    )
    records = generate_dataset(
        args.berries,
        args.views,
        spec,
        out_dir=args.out,
        threads=settings.resolve_threads(args.threads),
        heatmap_maps=args.heatmaps,
    )
    logger.info(f"generated {len(records)} records in {args.out}")
    return 0


def cmd_encode(args, settings: Settings) -> int:
    heatmap = encode(KeyPoint(args.x, args.y), ImageGrid(args.width, args.height), args.sigma)
    write_heatmap(args.out, heatmap)
    return 0


def cmd_decode(args, settings: Settings) -> int:
    stack = HeatmapStack(tuple(read_heatmap(path) for path in args.maps), KeypointKind(args.kind))
    result = decode(stack)
    print(json.dumps({
        "kind": args.kind,
        "x": result.keypoint.x,
        "y": result.keypoint.y,
        "peak": result.peak,
        "degenerate": result.degenerate,
    }))
    return 0


def _load_params(path: Optional[Path], settings: Settings) -> ShapeParams:
    if path is None and settings.PARAMS_PATH:
        path = Path(settings.PARAMS_PATH)
    if path is None:
        return default_shape_params()
    if not path.is_file():
        logger.warning(f"params file {path} not found; using the published constants")
        return default_shape_params()
    return read_params(path)


def cmd_estimate(args, settings: Settings) -> int:
    from src.services.orientation import estimate_pose

    dataset = open_dataset(args.data, strict=args.strict)
    params = _load_params(args.params, settings)

    def run(record):
        try:
            mask = dataset.mask(record)
            if args.use_heatmaps:
                top_stack, tip_stack = dataset.heatmaps(record)
                top, tip = decode(top_stack).keypoint, decode(tip_stack).keypoint
            else:
                top, tip = record.top, record.tip
        except (BerryPoseError, OSError) as e:
            raise MalformedFile(f"record {record.id}: {e}") from e
        try:
            pose = estimate_pose(mask, top, tip, params)
        except BerryPoseError as e:
            raise type(e)(f"record {record.id}: {e}") from e
        return Prediction(record.id, top, tip, pose.angles, pose.direction, pose.branch.value, pose.degenerate)

    predictions = map_ordered(run, dataset.records, settings.resolve_threads(args.threads))
    write_predictions(args.out, predictions)
    degenerate = sum(1 for p in predictions if p.degenerate)
    logger.info(f"wrote {len(predictions)} predictions to {args.out} ({degenerate} degenerate)")
    return 0


def cmd_calibrate(args, settings: Settings) -> int:
    from src.services.calibration import fit, objective, observe

    threads = settings.resolve_threads(args.threads)
    dataset = open_dataset(args.data)
    records = dataset.records
    missing = sum(1 for r in records if not r.has_orientation)
    if missing:
        raise NoGroundTruth(f"{missing} of {len(records)} record(s) lack orientation ground truth")

    masks = map_ordered(dataset.mask, records, threads)
    observations = observe(records, masks, threads)
    init = read_params(args.init) if args.init else default_shape_params()

    n_test = int(round(args.holdout * len(records)))
    if args.holdout > 0 and not 1 <= n_test < len(records):
        raise InvalidValue(f"holdout {args.holdout} leaves no train or test records out of {len(records)}")
    train = observations.subset(range(len(records) - n_test))
    report = fit(train, init=init, budget=args.budget)
    if n_test:
        test = observations.subset(range(len(records) - n_test, len(records)))
        report = replace(
            report,
            holdout_before=objective(init, test),
            holdout_after=objective(report.fitted, test),
        )

    write_params(args.out, report.fitted, extra={
        "objective_before": report.objective_before,
        "objective_after": report.objective_after,
    })
    report_path = args.report or args.out.with_suffix(".report.txt")
    report_path.write_text(report.to_text(), encoding="utf-8")
    logger.info(f"calibrated params written to {args.out}; report in {report_path}")
    return 0


def cmd_evaluate(args, settings: Settings) -> int:
    from src.services.analytics import ChartService
    from src.services.evaluation import summarize, summarize_folds
    from src.services.report_generator import ReportGenerator

    dataset = open_dataset(args.data)
    predictions = read_predictions(args.pred)
    summary = summarize(dataset.records, predictions, args.bins)
    folds = summarize_folds(dataset.records, predictions, args.folds, args.bins) if args.folds else None

    generator = ReportGenerator(args.out_prefix)
    written = generator.write_all(summary, folds)
    if args.xlsx:
        generator.generate_excel(summary, folds)
    if args.plot:
        prefix = args.out_prefix
        ChartService.save_html(ChartService.error_distribution(summary), f"{prefix}_angular_hist.html")
        ChartService.save_html(ChartService.error_by_theta(summary), f"{prefix}_angular_by_theta.html")
    logger.info(f"evaluated {summary.count} records; summary in {written['summary']}")
    return 0


COMMANDS = {
    "generate": cmd_generate,
    "encode": cmd_encode,
    "decode": cmd_decode,
    "estimate": cmd_estimate,
    "calibrate": cmd_calibrate,
    "evaluate": cmd_evaluate,
}


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        _validate(parser, args)
    except SystemExit as e:
        return int(e.code or 0)

    try:
        settings = Settings()
        settings.validate(getattr(args, "threads", None))
        setup_logging(args.log_level or settings.LOG_LEVEL)
    except ValueError as e:
        print(f"berrypose: error: {e}", file=sys.stderr)
        return 2

    try:
        return COMMANDS[args.command](args, settings)
    except (BerryPoseError, OSError) as e:
        print(f"berrypose {args.command}: error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
