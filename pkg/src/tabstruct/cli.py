"""Command line entry point: ``tabstruct {stats,anchors,loss,eval,infer,synth}``.

Machine-readable output is JSON (JSON lines for ``anchors``) on stdout or the
``--output`` file; ``--text`` switches to the human-readable table. Defaults
can be supplied by a flat JSON object in ``--config`` (or the file named by
``$TABSTRUCT_CONFIG``) whose keys are option names; explicit flags win.

Exit codes: 0 success, 1 usage error, 2 data error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from itertools import islice
from typing import Iterable, Optional, Sequence

import numpy as np

from . import anchors as anc
from . import loss as lossmod
from .evaluation import EvaluationError, evaluate
from .geometry import BBox
from .ingest import (
    Category,
    DatasetStats,
    ParseError,
    detections_to_json,
    iter_voc_paths,
    load_voc_file,
    parse_detections,
)
from .structure import (
    GridError,
    NoStructureError,
    StructureConfig,
    export_csv,
    export_html,
    export_json,
    recognize_table,
    synth_table,
)

CONFIG_ENV = "TABSTRUCT_CONFIG"
EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2

log = logging.getLogger("tabstruct")


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _float_list(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _levels(text: str) -> list[tuple[float, float]]:
    try:
        return [tuple(float(v) for v in part.split(":")) for part in text.split(",")]  # type: ignore[misc]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected stride:extent pairs, got {text!r}") from None


def _span(text: str) -> tuple[int, int, int, int]:
    try:
        r, c, rs, cs = (int(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected row,col,rowspan,colspan, got {text!r}") from None
    return r, c, rs, cs


def _frame(text: str) -> BBox:
    vals = _float_list(text)
    if len(vals) != 4:
        raise argparse.ArgumentTypeError("expected x_min,y_min,x_max,y_max")
    try:
        return BBox(*vals)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def build_parser() -> _Parser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-o", "--output", help="write result here instead of stdout")
    common.add_argument("--config", help=f"JSON defaults file (default: ${CONFIG_ENV})")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("-v", "--verbose", action="count", default=0)
    common.add_argument("--text", action="store_true", help="emit the human-readable table")

    parser = _Parser(prog="tabstruct", description="Table structure recognition toolkit.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("stats", parents=[common], help="dataset statistics of a VOC annotation directory")
    p.add_argument("annotations_dir")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--strict", action="store_true", help="reject unknown object names")
    p.add_argument("--no-clamp", dest="clamp", action="store_false")
    p.add_argument("--batch-size", type=int, default=1024, help=argparse.SUPPRESS)

    p = sub.add_parser("anchors", parents=[common], help="list generated anchors as JSON lines")
    p.add_argument("--mode", choices=[m.value for m in anc.AnchorMode], default="structure")
    p.add_argument("--width", type=float)
    p.add_argument("--height", type=float)
    p.add_argument("--levels", type=_levels, default=list(anc.DEFAULT_LEVELS), help="stride:extent,...")
    p.add_argument("--ratios", type=_float_list, default=list(anc.DEFAULT_RATIOS))
    p.add_argument("--no-clip", dest="clip", action="store_false")
    p.add_argument("--role", choices=["column", "row", "all"], default="all")

    p = sub.add_parser("loss", parents=[common], help="hardness, weights, losses and gradients for a batch file")
    p.add_argument("batch_file")
    p.add_argument("--lam", type=float)
    p.add_argument("--beta", type=float)

    p = sub.add_parser("eval", parents=[common], help="COCO-style AP of detections against VOC ground truth")
    p.add_argument("gt_dir")
    p.add_argument("pred_file")
    p.add_argument("--max-dets", type=int, default=None)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--strict", action="store_true")

    p = sub.add_parser("infer", parents=[common], help="table grid from one image's detections")
    p.add_argument("pred_file")
    p.add_argument("--image-id")
    p.add_argument("--format", choices=["html", "csv", "json"], default="html")
    p.add_argument("--score-threshold", type=float, default=0.5)
    p.add_argument("--nms-iou", type=float, default=0.5)
    p.add_argument("--span-overlap-tau", type=float, default=0.5)
    p.add_argument("--require-table-box", action=argparse.BooleanOptionalAction, default=False)

    p = sub.add_parser("synth", parents=[common], help="synthetic detections and ground-truth grid")
    p.add_argument("--rows", type=int)
    p.add_argument("--cols", type=int)
    p.add_argument("--span", type=_span, action="append", default=[], help="row,col,rowspan,colspan")
    p.add_argument("--frame", type=_frame)
    p.add_argument("--jitter", type=float, default=0.0)
    p.add_argument("--image-id", default="synth")
    p.add_argument("--grid-output", help="also write the ground-truth grid JSON here")
    return parser


# options that must come from the command line or the config file
REQUIRED = {"anchors": ("width", "height"), "synth": ("rows", "cols")}


def _check_required(args: argparse.Namespace) -> argparse.Namespace:
    missing = [f"--{d}" for d in REQUIRED.get(args.command, ()) if getattr(args, d) is None]
    if missing:
        raise UsageError(f"{args.command}: missing required option(s) {', '.join(missing)}")
    return args


def _load_config(path: str) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from None
    if not isinstance(data, dict):
        raise UsageError(f"config {path} must be a flat JSON object")
    return data


def parse_args(argv: Optional[Sequence[str]] = None) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    config_path = args.config or os.environ.get(CONFIG_ENV)
    if not config_path:
        return _check_required(args)
    config = _load_config(config_path)
    subparser = parser._subparsers._group_actions[0].choices[args.command]  # type: ignore[union-attr]
    known = {a.dest for a in subparser._actions} - {"help", "config"}
    unknown = sorted(set(config) - known)
    if unknown:
        raise UsageError(f"unknown config keys for {args.command}: {unknown}")
    subparser.set_defaults(**config)
    return _check_required(parser.parse_args(argv))


def _emit(text: str, path: Optional[str]) -> None:
    if path:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _read(path: str) -> str:
    try:
        with open(path, encoding="utf-8") as fh:
            return fh.read()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from None


def _chunks(items: Iterable, size: int):
    it = iter(items)
    while chunk := list(islice(it, size)):
        yield chunk


def _stats_of(paths: list[str], strict: bool, clamp: bool) -> DatasetStats:
    stats = DatasetStats()
    for p in paths:
        stats.add_image(load_voc_file(p, strict=strict, clamp=clamp))
    return stats


def collect_stats(directory: str, *, jobs: int = 1, strict: bool = False, clamp: bool = True, batch_size: int = 1024) -> DatasetStats:
    """Stream a VOC directory into statistics, holding at most one batch of paths at a time."""
    if jobs < 1:
        raise UsageError("--jobs must be >= 1")
    total = DatasetStats()
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        for batch in _chunks(iter_voc_paths(directory), batch_size):
            shards = [batch[i::jobs] for i in range(jobs)]
            for part in pool.map(lambda s: _stats_of(s, strict, clamp), shards):
                total = total.merge(part)
    return total


def cmd_stats(args) -> int:
    if not os.path.isdir(args.annotations_dir):
        raise DataError(f"not a readable directory: {args.annotations_dir}")
    try:
        stats = collect_stats(args.annotations_dir, jobs=args.jobs, strict=args.strict, clamp=args.clamp, batch_size=args.batch_size)
    except OSError as exc:
        raise DataError(str(exc)) from None
    if stats.n_images == 0:
        log.warning("no .xml annotations found in %s", args.annotations_dir)
    _emit(stats.to_text() if args.text else stats.to_json() + "\n", args.output)
    return EXIT_OK


def cmd_anchors(args) -> int:
    try:
        cfg = anc.AnchorConfig(
            image_width=args.width,
            image_height=args.height,
            mode=anc.AnchorMode(args.mode),
            levels=tuple(tuple(l) for l in args.levels),
            aspect_ratios=tuple(args.ratios),
            clip_to_image=args.clip,
        )
        if cfg.mode is anc.AnchorMode.TYPICAL:
            result = anc.generate_typical_anchors(cfg)
        elif args.role == "column":
            result = anc.generate_column_anchors(cfg)
        elif args.role == "row":
            result = anc.generate_row_anchors(cfg)
        else:
            result = anc.generate_anchors(cfg)
    except anc.AnchorError as exc:
        raise UsageError(str(exc)) from None
    if args.text:
        counts = np.bincount(result.levels, minlength=len(cfg.levels))
        lines = [f"{'level':>6}{'stride':>8}{'extent':>8}{'anchors':>10}"]
        for i, ((s, e), n) in enumerate(zip(cfg.levels, counts)):
            lines.append(f"{i:>6}{s:>8g}{e:>8g}{int(n):>10}")
        _emit("\n".join(lines) + "\n", args.output)
    else:
        _emit(result.to_jsonl(), args.output)
    return EXIT_OK


def _none_if_nan(values) -> list:
    return [None if np.isnan(v) else float(v) for v in values]


def loss_report(batch: dict, lam: Optional[float] = None, beta: Optional[float] = None) -> dict:
    """Evaluate the cost-sensitive objective on a batch description.

    ``batch`` holds ``boxes`` (each with ``category``, ``width``, ``height`` and
    an optional ``residual`` list), optional ``lambda``, ``alpha``, ``beta``, and
    optionally ``logits`` with ``labels`` for the classification loss.
    """
    n_cat = len(Category)
    boxes = batch.get("boxes")
    if not isinstance(boxes, list) or not boxes:
        raise DataError("batch needs a non-empty 'boxes' list")
    try:
        params = lossmod.HardnessParams(
            lam=float(batch.get("lambda", lossmod.DEFAULT_LAMBDA) if lam is None else lam),
            alpha=batch.get("alpha"),
            beta=float(batch.get("beta", lossmod.DEFAULT_BETA) if beta is None else beta),
        )
        cats = [int(b["category"]) for b in boxes]
        stats = lossmod.BatchClassStats.from_boxes(
            cats, [float(b["width"]) for b in boxes], [float(b["height"]) for b in boxes], n_cat
        )
        hardness = lossmod.class_hardness(stats, params)
        weights = lossmod.class_weights(hardness)
        residuals: list[list] = [[] for _ in range(n_cat)]
        owners: list[tuple[int, int, int]] = []
        for i, b in enumerate(boxes):
            r = [float(v) for v in b.get("residual", [])]
            owners.append((cats[i], len(residuals[cats[i]]), len(r)))
            residuals[cats[i]].extend(r)
        reg = lossmod.cost_sensitive_l1(residuals, weights, params.beta)
        grads = lossmod.cost_sensitive_l1_grad(residuals, weights, params.beta)
        out = {
            "lambda": params.lam,
            "beta": params.beta,
            "counts": stats.counts.astype(int).tolist(),
            "mean_sizes": _none_if_nan(stats.mean_sizes),
            "hardness": _none_if_nan(hardness),
            "weights": weights.w.tolist(),
            "loss_regression": reg,
            "grad_residuals": [grads[c][start : start + n].tolist() for c, start, n in owners],
        }
        if "logits" in batch:
            labels = np.asarray(batch.get("labels", []), dtype=int)
            out["loss_classification"] = lossmod.weighted_cross_entropy(batch["logits"], labels, weights)
            out["grad_logits"] = lossmod.weighted_cross_entropy_grad(batch["logits"], labels, weights).tolist()
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"bad batch description: {exc}") from None
    return out


def cmd_loss(args) -> int:
    try:
        batch = json.loads(_read(args.batch_file))
    except json.JSONDecodeError as exc:
        raise DataError(f"{args.batch_file}: {exc}") from None
    if not isinstance(batch, dict):
        raise DataError("batch file must hold a JSON object")
    report = loss_report(batch, args.lam, args.beta)
    if args.text:
        lines = [f"{'class':<6}{'count':>7}{'mean size':>11}{'hardness':>10}{'weight':>10}"]
        for c in Category:
            n = report["counts"][c]
            size = report["mean_sizes"][c]
            h = report["hardness"][c]
            lines.append(
                f"{c.short:<6}{n:>7}{'-' if size is None else f'{size:.2f}':>11}"
                f"{'-' if h is None else f'{h:.5f}':>10}{report['weights'][c]:>10.5f}"
            )
        lines.append(f"regression loss: {report['loss_regression']:.6f}")
        if "loss_classification" in report:
            lines.append(f"classification loss: {report['loss_classification']:.6f}")
        _emit("\n".join(lines) + "\n", args.output)
    else:
        _emit(json.dumps(report, indent=2) + "\n", args.output)
    return EXIT_OK


def load_gt_dir(directory: str, *, jobs: int = 1, strict: bool = False):
    if not os.path.isdir(directory):
        raise DataError(f"not a readable directory: {directory}")
    paths = list(iter_voc_paths(directory, sort=True))
    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        return list(pool.map(lambda p: load_voc_file(p, strict=strict), paths))


def cmd_eval(args) -> int:
    if args.jobs < 1:
        raise UsageError("--jobs must be >= 1")
    gt = load_gt_dir(args.gt_dir, jobs=args.jobs, strict=args.strict)
    preds = parse_detections(_read(args.pred_file))
    try:
        report = evaluate(gt, preds, max_dets=args.max_dets)
    except EvaluationError as exc:
        raise DataError(str(exc)) from None
    _emit(report.to_text() if args.text else report.to_json() + "\n", args.output)
    return EXIT_OK


def _threshold_arg(value):
    if isinstance(value, dict):
        try:
            return {Category.from_label(k): float(v) for k, v in value.items()}
        except ParseError as exc:
            raise UsageError(str(exc)) from None
    return float(value)


def cmd_infer(args) -> int:
    try:
        cfg = StructureConfig(
            score_threshold=_threshold_arg(args.score_threshold),
            nms_iou=args.nms_iou,
            span_overlap_tau=args.span_overlap_tau,
            require_table_box=args.require_table_box,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    records = parse_detections(_read(args.pred_file))
    ids = sorted({r.image_id for r in records})
    image_id = args.image_id
    if image_id is None:
        if len(ids) > 1:
            raise UsageError(f"several images in {args.pred_file}; pick one with --image-id: {ids[:10]}")
        image_id = ids[0] if ids else None
    chosen = [r for r in records if r.image_id == image_id]
    grid = recognize_table(chosen, cfg)
    exporters = {"html": export_html, "csv": export_csv, "json": export_json}
    _emit(exporters[args.format](grid), args.output)
    return EXIT_OK


def cmd_synth(args) -> int:
    try:
        records, grid = synth_table(
            args.rows, args.cols, args.span, frame=args.frame, seed=args.seed, jitter=args.jitter, image_id=args.image_id
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    if args.grid_output:
        _emit(export_json(grid), args.grid_output)
    _emit(export_html(grid) if args.text else detections_to_json(records) + "\n", args.output)
    return EXIT_OK


COMMANDS = {
    "stats": cmd_stats,
    "anchors": cmd_anchors,
    "loss": cmd_loss,
    "eval": cmd_eval,
    "infer": cmd_infer,
    "synth": cmd_synth,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = parse_args(argv)
    except UsageError as exc:
        print(f"tabstruct: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:
        return int(exc.code or 0)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s: %(message)s", stream=sys.stderr, force=True)
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"tabstruct: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, ParseError, NoStructureError, GridError, EvaluationError) as exc:
        print(f"tabstruct: {exc}", file=sys.stderr)
        return EXIT_DATA
    except BrokenPipeError:
        # reader went away (e.g. piped into head); keep the interpreter from complaining at exit
        os.dup2(os.open(os.devnull, os.O_WRONLY), sys.stdout.fileno())
        return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
