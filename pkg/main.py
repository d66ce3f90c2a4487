"""Command-line entry point for the amodal optical flow toolkit."""

import argparse
import logging
import sys
from typing import List, Optional

import config
from src.baselines import METHODS
from src.commands import COMMANDS
from src.errors import AmflowError
from src.structured_logger import StructuredLogger
from src.utils import setup_logging

structured_logger = StructuredLogger(__name__)


def build_parser() -> argparse.ArgumentParser:
    """Argument parser with one subcommand per toolkit operation."""
    parser = argparse.ArgumentParser(prog="amflow", description="Amodal optical flow toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    threads = argparse.ArgumentParser(add_help=False)
    threads.add_argument("--threads", type=int, default=None,
                         help="worker threads (default: available cores)")

    p = sub.add_parser("eval", parents=[threads], help="score predicted stacks with AFQ")
    source = p.add_mutually_exclusive_group(required=True)
    source.add_argument("--gt", help="ground-truth stack directory")
    source.add_argument("--means", nargs=2, type=float, metavar=("MWAUC", "MIOU"),
                        help="combine given mean WAUC and mean IoU into AFQ")
    p.add_argument("--pred", help="predicted stack directory")
    p.add_argument("--levels", type=int, default=config.MAX_LEVELS, help="N of the level weight schedule")
    p.add_argument("--k", type=int, default=config.DEFAULT_K, help="levels with full weight")
    p.add_argument("--w-last", type=float, default=config.DEFAULT_W_LAST, help="weight of the last level")
    p.add_argument("--json", help="write the report as JSON")

    p = sub.add_parser("gen", parents=[threads], help="generate synthetic ground truth")
    p.add_argument("--scene", required=True, help="scene JSON file")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--frames", type=int, default=None, help="override the scene's frame count")

    p = sub.add_parser("baseline", parents=[threads], help="run a non-learned infilling baseline")
    p.add_argument("--method", required=True, choices=sorted(METHODS))
    p.add_argument("--flow", required=True, help="directory with frame_%%06d/modal.flo")
    p.add_argument("--masks", required=True, help="directory with frame_%%06d/ids.png and amodal masks")
    p.add_argument("--out", required=True, help="output stack directory")

    p = sub.add_parser("track", help="mask-propagation tracking")
    p.add_argument("--seg", required=True, help="segmentation directory (frame_%%06d/ids.png)")
    p.add_argument("--flow", required=True, help="flow directory (modal.flo or stacks)")
    p.add_argument("--amodal", action="store_true", help="warp amodal masks with layered flow")
    p.add_argument("--amodal-masks", help="amodal mask directory (default: --seg)")
    p.add_argument("--gt", help="ground-truth segmentation for scoring (default: --seg)")
    p.add_argument("--min-iou", type=float, default=config.MIN_IOU)
    p.add_argument("--out", required=True, help="track JSON file")

    p = sub.add_parser("stats", parents=[threads], help="flow direction and du/dx histograms")
    p.add_argument("--flow", required=True, help="flow directory")
    p.add_argument("--source", choices=("modal", "amodal"), default="modal")
    p.add_argument("--out", required=True, help="CSV file")

    p = sub.add_parser("viz", help="composite color visualization of a stack")
    p.add_argument("--stack", required=True, help="stack directory")
    p.add_argument("--frame", type=int, default=0, help="index into the sorted frames")
    p.add_argument("--out", required=True, help="PNG file")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """Run one subcommand and return its exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return config.EXIT_USAGE if e.code else config.EXIT_OK
    if args.command == "eval" and args.gt is not None and args.pred is None:
        parser.print_usage(sys.stderr)
        print("amflow eval: --pred is required with --gt", file=sys.stderr)
        return config.EXIT_USAGE
    if args.command == "eval" and args.means is not None and args.pred is not None:
        print("amflow eval: --means cannot be combined with --pred", file=sys.stderr)
        return config.EXIT_USAGE
    if getattr(args, "threads", None) is not None and args.threads < 1:
        print("amflow: --threads must be >= 1", file=sys.stderr)
        return config.EXIT_USAGE

    try:
        logger = setup_logging()
    except AmflowError as e:
        print(f"amflow: {e}", file=sys.stderr)
        return config.EXIT_USAGE

    logger.info("=" * 60)
    logger.info(f"amflow {args.command}")
    logger.info("=" * 60)
    if config.ENABLE_STRUCTURED_LOGGING:
        structured_logger.log_command_start(
            command=args.command, arguments={k: v for k, v in vars(args).items() if k != "command"}
        )

    try:
        return COMMANDS[args.command](args)
    except (AmflowError, FileNotFoundError, NotADirectoryError) as e:
        code, reason = config.EXIT_USAGE, str(e)
        logger.error(f"{args.command} failed: {e}")
        print(f"amflow {args.command}: {e}", file=sys.stderr)
    except Exception as e:
        code, reason = config.EXIT_INTERNAL, str(e)
        logging.error(f"Fatal error: {e}", exc_info=True)
        print(f"amflow {args.command}: internal error: {e}", file=sys.stderr)
    if config.ENABLE_STRUCTURED_LOGGING:
        structured_logger.log_command_fail(command=args.command, reason=reason, exit_code=code)
    return code


if __name__ == "__main__":
    sys.exit(main())
