"""Structured logging utility for the amodal flow toolkit.

This module provides JSON-based structured logging for the critical stages
of the I/O, ground-truth generation, evaluation, infilling and tracking
pipelines.
"""

import json
import logging
from datetime import datetime
from typing import Any, Dict, List, Optional, Sequence
from enum import Enum


class Stage(str, Enum):
    """Processing stages for structured logging."""

    # File I/O
    FLOW_READ = "FLOW_READ"
    FLOW_WRITE = "FLOW_WRITE"
    STACK_READ = "STACK_READ"
    STACK_WRITE = "STACK_WRITE"
    FORMAT_ERROR = "FORMAT_ERROR"

    # Stratification
    STRATIFY_DONE = "STRATIFY_DONE"
    STRATIFY_CYCLE_BROKEN = "STRATIFY_CYCLE_BROKEN"

    # Evaluation
    EVAL_FRAME = "EVAL_FRAME"
    EVAL_REPORT = "EVAL_REPORT"

    # Ground-truth generation
    GEN_FRAME = "GEN_FRAME"
    GEN_MANIFEST = "GEN_MANIFEST"

    # Infilling baselines
    INFILL_FALLBACK = "INFILL_FALLBACK"
    INFILL_DONE = "INFILL_DONE"

    # Tracking
    TRACK_STEP = "TRACK_STEP"
    TRACK_RETIRED = "TRACK_RETIRED"
    TRACK_SCORE = "TRACK_SCORE"

    # Presentation
    STATS_DONE = "STATS_DONE"
    VIZ_DONE = "VIZ_DONE"

    # Command line
    COMMAND_START = "COMMAND_START"
    COMMAND_FAIL = "COMMAND_FAIL"


class StructuredLogger:
    """
    JSON-based structured logger for the toolkit.

    All logs are emitted as valid JSON with standard fields:
    - timestamp: ISO format timestamp
    - stage: Processing stage (from Stage enum)
    - Additional context-specific fields
    """

    def __init__(self, name: str):
        """Initialize structured logger.

        Args:
            name: Logger name (typically module name)
        """
        self.logger = logging.getLogger(name)
        self.name = name

    def _log_structured(self, level: int, stage: Stage, data: Dict[str, Any]) -> None:
        """
        Log a structured JSON entry.

        Args:
            level: Logging level (logging.INFO, logging.WARNING, etc.)
            stage: Processing stage
            data: Additional data fields to include
        """
        log_entry = {
            "timestamp": datetime.now().isoformat(),
            "stage": stage.value,
            "logger": self.name,
            **data
        }

        json_str = json.dumps(log_entry, ensure_ascii=False)
        self.logger.log(level, json_str)

    # ==================== File I/O ====================

    def log_flow_read(self, path: str, width: int, height: int) -> None:
        """Log a flow field loaded from disk."""
        self._log_structured(logging.DEBUG, Stage.FLOW_READ, {
            "path": path,
            "width": width,
            "height": height
        })

    def log_flow_write(self, path: str, width: int, height: int) -> None:
        """Log a flow field written to disk."""
        self._log_structured(logging.DEBUG, Stage.FLOW_WRITE, {
            "path": path,
            "width": width,
            "height": height
        })

    def log_stack_read(self, path: str, num_levels: int, layout: str) -> None:
        """Log a layered stack loaded from disk.

        Args:
            path: Frame directory or container file
            num_levels: Number of levels found
            layout: "directory" or "amfl"
        """
        self._log_structured(logging.DEBUG, Stage.STACK_READ, {
            "path": path,
            "num_levels": num_levels,
            "layout": layout
        })

    def log_stack_write(self, path: str, num_levels: int, layout: str) -> None:
        """Log a layered stack written to disk."""
        self._log_structured(logging.DEBUG, Stage.STACK_WRITE, {
            "path": path,
            "num_levels": num_levels,
            "layout": layout
        })

    def log_format_error(self, path: str, reason: str) -> None:
        """Log a malformed input file.

        Args:
            path: Offending file or directory
            reason: Failure reason (e.g., "bad_magic", "truncated", "missing_mask")
        """
        self._log_structured(logging.WARNING, Stage.FORMAT_ERROR, {
            "path": path,
            "reason": reason
        })

    # ==================== Stratification ====================

    def log_stratify_done(self, levels: Dict[int, int], edge_count: int) -> None:
        """Log the level assignment of one frame.

        Args:
            levels: Map instance id -> occlusion level
            edge_count: Occlusion edges kept after cycle resolution
        """
        self._log_structured(logging.DEBUG, Stage.STRATIFY_DONE, {
            "levels": {str(k): v for k, v in sorted(levels.items())},
            "edge_count": edge_count,
            "num_levels": max(levels.values(), default=0) + 1
        })

    def log_stratify_cycle_broken(
        self,
        cycle: Sequence[int],
        removed_edge: tuple,
        overlap_pixels: int
    ) -> None:
        """Log an occlusion cycle and the edge deleted to break it.

        Args:
            cycle: Instance ids along the cycle
            removed_edge: (front, behind) pair that was dropped
            overlap_pixels: Evidence size of the dropped edge
        """
        self._log_structured(logging.WARNING, Stage.STRATIFY_CYCLE_BROKEN, {
            "cycle": list(cycle),
            "removed_edge": list(removed_edge),
            "overlap_pixels": overlap_pixels
        })

    # ==================== Evaluation ====================

    def log_eval_frame(self, frame: int, num_levels: int, present_levels: List[int]) -> None:
        """Log per-frame accumulation."""
        self._log_structured(logging.DEBUG, Stage.EVAL_FRAME, {
            "frame": frame,
            "num_levels": num_levels,
            "present_levels": present_levels
        })

    def log_eval_report(
        self,
        afq: Optional[float],
        mwauc: Optional[float],
        miou: Optional[float],
        frame_count: int
    ) -> None:
        """Log the final evaluation scores."""
        self._log_structured(logging.INFO, Stage.EVAL_REPORT, {
            "afq": afq,
            "mwauc": mwauc,
            "miou": miou,
            "frame_count": frame_count
        })

    # ==================== Ground-truth generation ====================

    def log_gen_frame(
        self,
        frame: int,
        num_levels: int,
        levels: Dict[int, int],
        invalid_pixels: int
    ) -> None:
        """Log a generated frame pair.

        Args:
            frame: Anchor frame index t
            num_levels: Levels in the amodal stack
            levels: Map instance id -> occlusion level
            invalid_pixels: Object pixels dropped because they project behind the camera
        """
        self._log_structured(logging.INFO, Stage.GEN_FRAME, {
            "frame": frame,
            "num_levels": num_levels,
            "levels": {str(k): v for k, v in sorted(levels.items())},
            "invalid_pixels": invalid_pixels
        })

    def log_gen_manifest(self, path: str, frame_count: int, max_levels: int) -> None:
        """Log the manifest of a generated sequence."""
        self._log_structured(logging.INFO, Stage.GEN_MANIFEST, {
            "path": path,
            "frame_count": frame_count,
            "max_levels": max_levels
        })

    # ==================== Infilling baselines ====================

    def log_infill_fallback(self, method: str, instance_id: int, occluded_pixels: int) -> None:
        """Log an object without visible pixels filled from background flow."""
        self._log_structured(logging.WARNING, Stage.INFILL_FALLBACK, {
            "method": method,
            "instance_id": instance_id,
            "occluded_pixels": occluded_pixels
        })

    def log_infill_done(self, method: str, num_levels: int, instance_count: int) -> None:
        """Log a completed infilled stack."""
        self._log_structured(logging.DEBUG, Stage.INFILL_DONE, {
            "method": method,
            "num_levels": num_levels,
            "instance_count": instance_count
        })

    # ==================== Tracking ====================

    def log_track_step(
        self,
        frame: int,
        mode: str,
        matches: List[tuple],
        new_tracks: List[int]
    ) -> None:
        """Log one association step.

        Args:
            frame: Frame the detections belong to
            mode: "modal" or "amodal"
            matches: [(track_id, detection_index, iou), ...]
            new_tracks: Track ids issued to unmatched detections
        """
        self._log_structured(logging.DEBUG, Stage.TRACK_STEP, {
            "frame": frame,
            "mode": mode,
            "matches": [
                {"track": t, "detection": d, "iou": round(float(iou), 6)}
                for t, d, iou in matches
            ],
            "new_tracks": new_tracks
        })

    def log_track_retired(self, frame: int, track_ids: List[int]) -> None:
        """Log tracks retired after exceeding the missed-frame budget."""
        self._log_structured(logging.DEBUG, Stage.TRACK_RETIRED, {
            "frame": frame,
            "track_ids": track_ids
        })

    def log_track_score(self, association_accuracy: Optional[float], id_switches: int, checks: int) -> None:
        """Log tracking scores."""
        self._log_structured(logging.INFO, Stage.TRACK_SCORE, {
            "association_accuracy": association_accuracy,
            "id_switches": id_switches,
            "checks": checks
        })

    # ==================== Presentation ====================

    def log_stats_done(self, path: str, frame_count: int, direction_pixels: int, dudx_pixels: int) -> None:
        """Log histogram computation."""
        self._log_structured(logging.INFO, Stage.STATS_DONE, {
            "path": path,
            "frame_count": frame_count,
            "direction_pixels": direction_pixels,
            "dudx_pixels": dudx_pixels
        })

    def log_viz_done(self, path: str, num_levels: int) -> None:
        """Log a written composite visualization."""
        self._log_structured(logging.INFO, Stage.VIZ_DONE, {
            "path": path,
            "num_levels": num_levels
        })

    # ==================== Command line ====================

    def log_command_start(self, command: str, arguments: Dict[str, Any]) -> None:
        """Log a CLI invocation with its resolved arguments."""
        self._log_structured(logging.INFO, Stage.COMMAND_START, {
            "command": command,
            "arguments": {k: str(v) for k, v in arguments.items()}
        })

    def log_command_fail(self, command: str, reason: str, exit_code: int) -> None:
        """Log a failed CLI invocation."""
        self._log_structured(logging.ERROR, Stage.COMMAND_FAIL, {
            "command": command,
            "reason": reason,
            "exit_code": exit_code
        })
