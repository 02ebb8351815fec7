import argparse
import csv
import logging
import sys
from collections import defaultdict
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Sequence

from src.config import (
    AUDIT_TOLERANCE,
    AUDIT_TRIALS,
    IOU_THRESHOLD,
    NAME,
    NMS_IOU_THRESHOLD,
    POLYGON_POINTS,
    RASTER_RESOLUTION,
    RASTER_SUPERSAMPLING,
    SCENE_BANDS,
    SCHEMA_VERSION,
    SEED,
)
from src.dataset import (
    CAMERA_FILE,
    PREDICTIONS_FILE,
    SceneSpec,
    generate_corpus,
    load_corpus,
    load_predictions,
    read_json,
    save_corpus,
    save_predictions,
    write_json,
)
from src.errors import (
    EmptyCorpusError,
    FormatError,
    PolyrepError,
    PreconditionError,
    UndefinedMapError,
)
from src.evaluation import (
    EvalConfig,
    EvalReport,
    OccupancyConfig,
    build_parking_scene,
    comparison_header,
    comparison_row,
    evaluate,
    evaluate_both,
    occupancy_matrix,
    occupancy_predicate,
    upper_bound_study,
)
from src.fisheye import CameraModel
from src.losses import gradient_audit
from src.overlays import write_frame_overlay
from src.representation_register import (
    MASK_KIND_NAME,
    REPRESENTATION_REGISTRY,
    RepresentationSpec,
    kind_name_of,
    table_specs,
)
from src.representations import IoUConfig
from src.schemas import Detection, EvalMode, SimplePolygon
from src.workers import worker_count

logger = logging.getLogger(NAME)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_INTERNAL = 4

REPORT_JSON = "report.json"
REPORT_CSV = "report.csv"
OVERLAYS_DIR = "overlays"
CONFIG_ECHO = "config-echo.json"


class UsageError(PolyrepError):
    """Command-line arguments or output location are unusable."""


def exit_code_for(error: Exception) -> int:
    """Map an exception to the process exit code."""
    if isinstance(error, (UsageError, PreconditionError)):
        return EXIT_USAGE
    if isinstance(error, (FormatError, UndefinedMapError)):
        return EXIT_DATA
    return EXIT_INTERNAL


def setup_logging(verbose: bool = False) -> None:
    logging.basicConfig(
        stream=sys.stderr,
        level=logging.DEBUG if verbose else logging.INFO,
        format="[%(name)s] %(message)s",
        force=True,
    )


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {value}")
    return value


def _ratio(text: str) -> float:
    value = float(text)
    if not 0.0 < value < 1.0:
        raise argparse.ArgumentTypeError(f"must be in (0, 1), got {value}")
    return value


def _points_list(text: str) -> tuple[int, ...]:
    try:
        points = tuple(int(p) for p in text.split(",") if p.strip())
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from exc
    if not points or any(p < 3 for p in points):
        raise argparse.ArgumentTypeError(f"every R must be >= 3, got {text!r}")
    return points


def prepare_out(path: Path) -> Path:
    """Create the output directory, turning filesystem errors into usage errors."""
    path = Path(path).resolve()
    try:
        path.mkdir(parents=True, exist_ok=True)
        probe = path / ".write-check"
        probe.write_text("", encoding="utf-8")
        probe.unlink()
    except OSError as exc:
        raise UsageError(f"Output directory {path} is not writable: {exc}") from exc
    return path


def write_config_echo(out: Path, args: argparse.Namespace, argv: Sequence[str]) -> None:
    """Record the resolved arguments next to the outputs."""
    arguments = {
        key: str(value) if isinstance(value, Path) else value
        for key, value in sorted(vars(args).items())
        if key != "handler"
    }
    write_json(
        out / CONFIG_ECHO,
        {"schemaVersion": SCHEMA_VERSION, "tool": NAME, "argv": list(argv), "arguments": arguments},
    )


def write_csv(path: Path, header: Sequence[str], rows: Sequence[Sequence]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def _iou_config(args) -> IoUConfig:
    return IoUConfig(supersampling=args.supersampling, resolution=args.resolution)


def _load_camera(path: Path | None) -> CameraModel:
    if path is None:
        return CameraModel()
    return CameraModel.from_dict(read_json(path), strict=True)


# Commands ------------------------------------------------------------------------


def cmd_generate(args, argv) -> int:
    out = prepare_out(args.out)
    cam = _load_camera(args.camera)
    spec = SceneSpec(seed=args.seed, placement=args.placement)
    corpus = generate_corpus(spec, cam, args.frames, workers=worker_count())
    save_corpus(corpus, out)
    write_config_echo(out, args, argv)
    logger.info("Wrote %d frames to %s", len(corpus.frames), out)
    return EXIT_OK


def cmd_upper_bound(args, argv) -> int:
    out = prepare_out(args.out)
    corpus = load_corpus(args.corpus, strict=args.strict)
    masks = corpus.masks()
    if not masks:
        raise EmptyCorpusError(f"Corpus {args.corpus} has no instances")
    table = upper_bound_study(masks, table_specs(args.points), _iou_config(args), worker_count())
    write_csv(out / REPORT_CSV, table.header(), [table.row()])
    write_json(
        out / REPORT_JSON,
        {
            "schemaVersion": SCHEMA_VERSION,
            "meanIoU": table.mean_iou,
            "columns": table.columns,
            "instances": table.instances,
            "frames": len(corpus.frames),
            "generatorSeed": corpus.manifest.generator_seed,
        },
    )
    write_config_echo(out, args, argv)
    print(",".join(table.header()))
    print(",".join(table.row()))
    return EXIT_OK


def _write_overlays(out: Path, corpus, report: EvalReport) -> None:
    by_frame = defaultdict(list)
    for match in report.matches:
        by_frame[match.frame_id].append(match)
    for record in corpus.records():
        write_frame_overlay(out / OVERLAYS_DIR, record.frame_id, record.image_size, by_frame[record.frame_id])


def cmd_eval(args, argv) -> int:
    out = prepare_out(args.out)
    corpus = load_corpus(args.truth, strict=args.strict)
    dets = load_predictions(args.pred, strict=args.strict)
    cfg = EvalConfig(
        iou_threshold=args.iou,
        nms_iou=None if args.no_nms else args.nms_iou,
        iou=_iou_config(args),
        polygon_box_reference=args.polygon_box_reference,
    )
    truths = corpus.ground_truths()
    if args.mode == "both":
        reports = evaluate_both(dets, truths, cfg, corpus.cameras(), worker_count())
    else:
        mode = EvalMode(args.mode)
        reports = {mode: evaluate(dets, truths, replace(cfg, mode=mode), corpus.cameras(), worker_count())}

    write_json(
        out / REPORT_JSON,
        {
            "schemaVersion": SCHEMA_VERSION,
            "experiment": args.experiment,
            "reports": {mode.value: report.to_dict() for mode, report in reports.items()},
        },
    )
    write_csv(out / REPORT_CSV, comparison_header(), [comparison_row(args.experiment, reports)])
    if args.overlays:
        _write_overlays(out, corpus, next(iter(reports.values())))
    write_config_echo(out, args, argv)
    for mode, report in reports.items():
        print(f"{mode.value}: mAP {report.mean_ap:.4f}")
    return EXIT_OK


def cmd_convert(args, argv) -> int:
    spec = RepresentationSpec(args.to, args.points if args.to == "polygon" else None)
    out = prepare_out(args.out)
    corpus = load_corpus(args.corpus, strict=args.strict)
    dets = []
    for record in corpus.records():
        for truth in record.ground_truths():
            dets.append(
                Detection(
                    rep=spec.convert(truth.mask),
                    class_label=truth.class_label,
                    confidence=1.0,
                    frame_id=record.frame_id,
                    detection_id=truth.index,
                )
            )
    save_predictions(out / PREDICTIONS_FILE, dets)
    write_config_echo(out, args, argv)
    logger.info("Converted %d instances to %s", len(dets), spec.column)
    return EXIT_OK


def cmd_loss_check(args, argv) -> int:
    result = gradient_audit(seed=args.seed, trials=args.trials)
    worst = result.worst
    print(f"checked {result.checked} partials over {result.trials} configurations")
    if worst is not None:
        print(
            f"worst: head={worst.head.value} field={worst.field} cell={list(worst.index)} "
            f"analytic={worst.analytic:.10g} numeric={worst.numeric:.10g} "
            f"relative_error={worst.relative_error:.3e}"
        )
    if not result.passed(args.tolerance):
        logger.error("Gradient audit failed: %.3e > %.1e", result.max_relative_error, args.tolerance)
        return EXIT_INTERNAL
    return EXIT_OK


def _load_region(path: Path) -> SimplePolygon:
    document = read_json(path)
    if "region" not in document:
        raise FormatError(f"{path}: missing field region")
    try:
        return SimplePolygon.from_array(document["region"])
    except (TypeError, ValueError) as exc:
        raise FormatError(f"{path}: invalid region ({exc})") from exc


def cmd_occupancy(args, argv) -> int:
    cfg = OccupancyConfig(fraction=args.fraction, iou=_iou_config(args))
    if args.demo or args.pred is None:
        scene = build_parking_scene()
        region = _load_region(args.region) if args.region else scene.region
        matrix = {
            name: state.value
            for name, state in occupancy_matrix(region, scene.cars, args.reps, cfg).items()
        }
    else:
        if args.region is None:
            raise UsageError("--region is required with --pred")
        region = _load_region(args.region)
        dets = load_predictions(args.pred, strict=args.strict)
        by_kind = defaultdict(list)
        for det in dets:
            by_kind[kind_name_of(det.rep)].append(det)
        matrix = {
            name: occupancy_predicate(region, group, cfg).value
            for name, group in sorted(by_kind.items())
        }
    print("Representation,Occupancy")
    for name, state in matrix.items():
        print(f"{name},{state}")
    if args.out is not None:
        out = prepare_out(args.out)
        write_csv(out / REPORT_CSV, ["Representation", "Occupancy"], list(matrix.items()))
        write_json(out / REPORT_JSON, {"schemaVersion": SCHEMA_VERSION, "occupancy": matrix})
        write_config_echo(out, args, argv)
    return EXIT_OK


@dataclass(frozen=True)
class Command:
    name: str
    help: str
    handler: Callable
    configure: Callable[[argparse.ArgumentParser], None]


def _add_raster_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--supersampling", type=_positive_int, default=RASTER_SUPERSAMPLING)
    parser.add_argument("--resolution", type=_positive_int, default=RASTER_RESOLUTION)


def _add_strict(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--strict", action="store_true", help="reject unknown schema fields")


def _configure_generate(p):
    p.add_argument("--seed", type=int, default=SEED)
    p.add_argument("--frames", type=_positive_int, default=200)
    p.add_argument("--camera", type=Path, default=None, help=f"intrinsics JSON ({CAMERA_FILE} schema)")
    p.add_argument("--placement", choices=sorted(SCENE_BANDS), default="any")
    p.add_argument("--out", type=Path, required=True)


def _configure_upper_bound(p):
    p.add_argument("--corpus", type=Path, required=True)
    p.add_argument("--points", type=_points_list, default=POLYGON_POINTS)
    p.add_argument("--out", type=Path, required=True)
    _add_raster_args(p)
    _add_strict(p)


def _configure_eval(p):
    p.add_argument("--truth", type=Path, required=True, help="corpus directory")
    p.add_argument("--pred", type=Path, required=True, help=PREDICTIONS_FILE)
    p.add_argument("--mode", choices=[m.value for m in EvalMode] + ["both"], default=EvalMode.REP_VS_REP.value)
    p.add_argument("--iou", type=_ratio, default=IOU_THRESHOLD)
    p.add_argument("--nms-iou", type=_ratio, default=NMS_IOU_THRESHOLD)
    p.add_argument("--no-nms", action="store_true")
    p.add_argument("--polygon-box-reference", action="store_true")
    p.add_argument("--experiment", default="run")
    p.add_argument("--overlays", action="store_true", help="write overlays/frame-<id>.svg")
    p.add_argument("--out", type=Path, required=True)
    _add_raster_args(p)
    _add_strict(p)


def _configure_convert(p):
    p.add_argument("--corpus", type=Path, required=True)
    p.add_argument("--to", choices=list(REPRESENTATION_REGISTRY), required=True)
    p.add_argument("--points", type=int, default=24)
    p.add_argument("--out", type=Path, required=True)
    _add_strict(p)


def _configure_loss_check(p):
    p.add_argument("--seed", type=int, default=SEED)
    p.add_argument("--trials", type=_positive_int, default=AUDIT_TRIALS)
    p.add_argument("--tolerance", type=float, default=AUDIT_TOLERANCE)


def _configure_occupancy(p):
    p.add_argument("--region", type=Path, default=None, help='JSON with {"region": [[x, y], ...]}')
    p.add_argument("--pred", type=Path, default=None)
    p.add_argument(
        "--reps",
        nargs="+",
        default=["box", "obox", "ellipse", "P24", MASK_KIND_NAME],
    )
    p.add_argument("--fraction", type=float, default=OccupancyConfig().fraction)
    p.add_argument("--demo", action="store_true", help="use the scripted parking scene")
    p.add_argument("--out", type=Path, default=None)
    _add_raster_args(p)
    _add_strict(p)


COMMAND_REGISTRY: dict[str, Command] = {
    "generate": Command("generate", "write a synthetic fisheye corpus", cmd_generate, _configure_generate),
    "upper-bound": Command(
        "upper-bound", "mean IoU of each representation against its own mask", cmd_upper_bound, _configure_upper_bound
    ),
    "eval": Command("eval", "NMS, matching and mAP of predictions", cmd_eval, _configure_eval),
    "convert": Command("convert", "turn corpus masks into predictions", cmd_convert, _configure_convert),
    "loss-check": Command("loss-check", "finite-difference gradient audit", cmd_loss_check, _configure_loss_check),
    "occupancy": Command("occupancy", "parking-slot occupancy per representation", cmd_occupancy, _configure_occupancy),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog=NAME, description="Fisheye detection representation toolkit")
    parser.add_argument("-v", "--verbose", action="store_true")
    subparsers = parser.add_subparsers(dest="command", required=True)
    for command in COMMAND_REGISTRY.values():
        sub = subparsers.add_parser(command.name, help=command.help)
        command.configure(sub)
        sub.set_defaults(handler=command.handler)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    setup_logging(args.verbose)
    try:
        return args.handler(args, argv)
    except PolyrepError as exc:
        logger.error("%s", exc)
        return exit_code_for(exc)
    except OSError as exc:
        logger.error("Cannot write output: %s", exc)
        return EXIT_USAGE
    except Exception as exc:  # noqa: BLE001
        logger.exception("Internal error: %s", exc)
        return EXIT_INTERNAL

