"""Subcommand handlers behind main.py.

Each handler takes the parsed argparse namespace, prints a short summary
to stdout and returns the process exit code. Errors propagate to main(),
which maps them to exit codes.
"""

import json
import logging
import os
from argparse import Namespace
from functools import reduce
from typing import Any, Dict, List

import config
from src.baselines import METHODS, load_infill_input
from src.errors import FormatError, ParameterError
from src.flow_io import frame_dir, frame_path, list_frames, read_flo, read_stack, write_stack
from src.flow_types import LayeredFlowStack
from src.metrics import FlowStatistics, accumulate_frame, afq_from_means, aggregate_reports, flow_statistics, \
    level_weights
from src.structured_logger import StructuredLogger
from src.synthgen import generate, load_scene
from src.tracking import AMODAL, MODAL, MaskPropagationTracker, load_segmentation, match_to_ground_truth, \
    score_tracking
from src.utils import atomic_write_bytes, ordered_map
from src.visualize import composite_visualization, displayed_flow, write_png

logger = logging.getLogger(__name__)
structured_logger = StructuredLogger(__name__)


def _require_frames(root: str, what: str) -> List[int]:
    frames = list_frames(root)
    if not frames:
        raise FormatError(f"{root}: no frame_%06d entries found for {what}")
    return frames


def _write_json(data: Dict[str, Any], path: str) -> None:
    atomic_write_bytes(path, (json.dumps(data, indent=2) + "\n").encode("utf-8"))


# ==================== eval ====================

def cmd_eval(args: Namespace) -> int:
    """Evaluate predicted stacks against ground truth, or combine given means."""
    if args.means is not None:
        mwauc, miou = args.means
        afq = afq_from_means(mwauc, miou)
        print(f"AFQ    {afq:.{config.FRACTION_DIGITS}f}")
        print(f"mWAUC  {mwauc:.{config.FRACTION_DIGITS}f}")
        print(f"mIoU   {miou:.{config.FRACTION_DIGITS}f}")
        if args.json:
            _write_json({"afq": round(afq, config.FRACTION_DIGITS), "mwauc": mwauc, "miou": miou}, args.json)
        return config.EXIT_OK

    weights = level_weights(args.levels, args.k, args.w_last)
    gt_frames = _require_frames(args.gt, "ground truth")
    pred_frames = list_frames(args.pred)
    missing = sorted(set(gt_frames) - set(pred_frames))
    extra = sorted(set(pred_frames) - set(gt_frames))
    if missing or extra:
        detail = []
        if missing:
            detail.append(f"missing in prediction: {', '.join(map(str, missing))}")
        if extra:
            detail.append(f"not in ground truth: {', '.join(map(str, extra))}")
        raise FormatError(f"Frame mismatch ({'; '.join(detail)})")

    def run(frame: int):
        pred = read_stack(frame_path(args.pred, frame))
        gt = read_stack(frame_path(args.gt, frame))
        return accumulate_frame(pred, gt, frame)

    report = aggregate_reports(ordered_map(run, gt_frames, args.threads), weights)
    print(report.format_table(), end="")
    if args.json:
        atomic_write_bytes(args.json, report.to_json().encode("utf-8"))
        logger.info(f"Report written to {args.json}")
    return config.EXIT_OK


# ==================== gen ====================

def cmd_gen(args: Namespace) -> int:
    """Generate ground truth for a scene file."""
    scene = load_scene(args.scene, args.frames)
    manifest = generate(scene, args.out, args.threads)
    print(f"Generated {manifest['frame_count']} frame pairs into {args.out} (max levels {manifest['max_levels']})")
    return config.EXIT_OK


# ==================== baseline ====================

def cmd_baseline(args: Namespace) -> int:
    """Run an infilling baseline on every frame of a flow directory."""
    infill = METHODS[args.method]
    frames = _require_frames(args.flow, "modal flow")

    def run(frame: int) -> int:
        stack = infill(load_infill_input(args.flow, args.masks, frame))
        write_stack(stack, frame_dir(args.out, frame))
        return stack.num_levels

    levels = ordered_map(run, frames, args.threads)
    print(f"{args.method}: wrote {len(frames)} stacks into {args.out} (max levels {max(levels)})")
    return config.EXIT_OK


# ==================== track ====================

def _load_flow(flow_dir: str, frame: int, mode: str):
    if mode == AMODAL:
        return read_stack(frame_path(flow_dir, frame))
    path = os.path.join(frame_dir(flow_dir, frame), config.MODAL_FLOW_FILE)
    if not os.path.exists(path):
        raise FormatError(f"{path}: modal flow not found")
    return read_flo(path)


def cmd_track(args: Namespace) -> int:
    """Track instances through a segmented sequence."""
    mode = AMODAL if args.amodal else MODAL
    amodal_dir = args.amodal_masks or args.seg
    frames = _require_frames(args.seg, "segmentation")
    if frames != list(range(frames[0], frames[0] + len(frames))):
        raise FormatError(f"{args.seg}: frames must be consecutive, found {frames}")

    detections = [load_segmentation(args.seg, f, amodal_dir) for f in frames]
    flows = [_load_flow(args.flow, f, mode) for f in frames[:-1]]
    tracker = MaskPropagationTracker(mode=mode, min_iou=args.min_iou)
    assignments = tracker.run(detections, flows)

    gt_dir = args.gt or args.seg
    matched = []
    for f, dets, assignment in zip(frames, detections, assignments):
        gt = load_segmentation(gt_dir, f, amodal_dir)
        mask_of = (lambda inst: inst.amodal_mask) if mode == AMODAL else (lambda inst: inst.visible_mask)
        predicted = {assignment[inst.instance_id]: mask_of(inst) for inst in dets if inst.instance_id in assignment}
        matched.append(match_to_ground_truth(predicted, {inst.instance_id: mask_of(inst) for inst in gt}))
    score = score_tracking(matched)

    result = {
        "mode": mode,
        "min_iou": args.min_iou,
        "frames": [
            {"frame": f, "assignments": {str(k): v for k, v in a.items()}}
            for f, a in zip(frames, assignments)
        ],
        "score": {
            "association_accuracy": None if score.association_accuracy is None
            else round(score.association_accuracy, config.FRACTION_DIGITS),
            "id_switches": score.id_switches,
            "checks": score.checks,
        },
    }
    _write_json(result, args.out)
    accuracy = "n/a" if score.association_accuracy is None else f"{score.association_accuracy:.6f}"
    print(f"{mode} tracking over {len(frames)} frames: id switches {score.id_switches}, "
          f"association accuracy {accuracy}")
    return config.EXIT_OK


# ==================== stats ====================

def _frame_statistics(flow_dir: str, frame: int, source: str) -> FlowStatistics:
    if source == "amodal":
        stack = read_stack(frame_path(flow_dir, frame))
        return reduce(lambda a, b: a + b, (flow_statistics(level.flow, level.mask) for level in stack))
    modal_path = os.path.join(frame_dir(flow_dir, frame), config.MODAL_FLOW_FILE)
    if os.path.exists(modal_path):
        return flow_statistics(read_flo(modal_path))
    return flow_statistics(displayed_flow(read_stack(frame_path(flow_dir, frame))))


def cmd_stats(args: Namespace) -> int:
    """Direction and du/dx histograms pooled over every frame."""
    frames = _require_frames(args.flow, "flow statistics")
    per_frame = ordered_map(lambda f: _frame_statistics(args.flow, f, args.source), frames, args.threads)
    stats = reduce(lambda a, b: a + b, per_frame, FlowStatistics.empty())
    csv = stats.to_frame().to_csv(index=False, lineterminator="\n")
    atomic_write_bytes(args.out, csv.encode("utf-8"))

    direction_pixels = int(stats.direction_counts.sum())
    dudx_pixels = int(stats.dudx_counts.sum())
    if config.ENABLE_STRUCTURED_LOGGING:
        structured_logger.log_stats_done(
            path=args.out, frame_count=len(frames), direction_pixels=direction_pixels, dudx_pixels=dudx_pixels
        )
    print(f"Histograms over {len(frames)} frames written to {args.out} "
          f"({direction_pixels} direction samples, {dudx_pixels} du/dx samples)")
    return config.EXIT_OK


# ==================== viz ====================

def cmd_viz(args: Namespace) -> int:
    """Render the superimposed color composite of one stack."""
    frames = _require_frames(args.stack, "visualization")
    if not 0 <= args.frame < len(frames):
        raise ParameterError(f"Frame index {args.frame} out of range, {len(frames)} frames available")
    stack: LayeredFlowStack = read_stack(frame_path(args.stack, frames[args.frame]))
    write_png(composite_visualization(stack), args.out)
    if config.ENABLE_STRUCTURED_LOGGING:
        structured_logger.log_viz_done(path=args.out, num_levels=stack.num_levels)
    print(f"Composite of frame {frames[args.frame]} ({stack.num_levels} levels) written to {args.out}")
    return config.EXIT_OK


COMMANDS = {
    "eval": cmd_eval,
    "gen": cmd_gen,
    "baseline": cmd_baseline,
    "track": cmd_track,
    "stats": cmd_stats,
    "viz": cmd_viz,
}
