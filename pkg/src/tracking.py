"""Mask-propagation tracking with modal or amodal optical flow.

Every active track's mask is forward-warped into the next frame, scored
against the next frame's masks by IoU and assigned with a maximum-weight
bipartite matching. In amodal mode each track is warped with the stack
layer its amodal mask overlaps most.
"""

import logging
from dataclasses import dataclass, field, replace
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.optimize import linear_sum_assignment

import config
from src.errors import ParameterError
from src.flow_io import frame_dir, read_segmentation
from src.flow_ops import warp_mask_forward
from src.flow_types import FlowField, InstanceMask, InstanceMaskSet, LayeredFlowStack
from src.structured_logger import StructuredLogger
from src.utils import validate_same_shape

logger = logging.getLogger(__name__)
structured_logger = StructuredLogger(__name__)

MODAL = "modal"
AMODAL = "amodal"
FlowSource = Union[FlowField, LayeredFlowStack]


# ==================== Assignment ====================

def _best_total(scores: np.ndarray, rows: Sequence[int], cols: Sequence[int]) -> float:
    if not rows or not cols:
        return 0.0
    sub = scores[np.ix_(rows, cols)]
    r, c = linear_sum_assignment(sub, maximize=True)
    return float(sub[r, c].sum())


def hungarian_max(scores: np.ndarray) -> List[Tuple[int, int]]:
    """
    Maximum-score one-to-one assignment over min(R, C) pairs.

    Among optimal assignments the lexicographically first is returned: rows
    are fixed in order, each to the smallest column (or left unassigned) that
    still admits the optimum.

    Returns:
        List[Tuple[int, int]]: (row, column) pairs sorted by row
    """
    scores = np.asarray(scores, np.float64)
    if scores.size == 0:
        return []
    if scores.ndim != 2:
        raise ParameterError(f"Score matrix must be 2-D, got shape {scores.shape}")
    if not np.isfinite(scores).all():
        raise ParameterError("Score matrix contains non-finite values")

    num_rows, num_cols = scores.shape
    target = min(num_rows, num_cols)
    optimum = _best_total(scores, range(num_rows), range(num_cols))

    pairs: List[Tuple[int, int]] = []
    used: set = set()
    total = 0.0
    for row in range(num_rows):
        rest = list(range(row + 1, num_rows))
        free = [c for c in range(num_cols) if c not in used]
        chosen: Optional[int] = None
        for col in free + [None]:
            if col is None:
                if min(len(rest), len(free)) < target - len(pairs):
                    continue
                candidate = total + _best_total(scores, rest, free)
            else:
                others = [c for c in free if c != col]
                candidate = total + scores[row, col] + _best_total(scores, rest, others)
            if np.isclose(candidate, optimum, rtol=1e-12, atol=1e-12):
                chosen = col
                break
        if chosen is not None:
            pairs.append((row, chosen))
            used.add(chosen)
            total += scores[row, chosen]
    return pairs


def mask_iou(a: np.ndarray, b: np.ndarray) -> float:
    union = np.count_nonzero(a | b)
    return np.count_nonzero(a & b) / union if union else 0.0


def iou_matrix(masks_a: Sequence[np.ndarray], masks_b: Sequence[np.ndarray]) -> np.ndarray:
    matrix = np.zeros((len(masks_a), len(masks_b)))
    for i, a in enumerate(masks_a):
        for j, b in enumerate(masks_b):
            matrix[i, j] = mask_iou(a, b)
    return matrix


def select_flow_layer(object_mask: np.ndarray, stack: LayeredFlowStack) -> int:
    """
    Stack level whose mask overlaps the object most (levels >= 1).

    Ties go to the smaller level; no overlap at all falls back to level 0.
    """
    object_mask = np.asarray(object_mask, bool)
    validate_same_shape(object_mask, stack.levels[0].mask, names=["object", "stack"])
    best_level, best_overlap = 0, 0
    for n in range(1, stack.num_levels):
        overlap = int(np.count_nonzero(object_mask & stack.levels[n].mask))
        if overlap > best_overlap:
            best_level, best_overlap = n, overlap
    return best_level


# ==================== Tracker state ====================

@dataclass(frozen=True, eq=False)
class Track:
    track_id: int
    mask: np.ndarray
    class_label: str
    last_frame: int
    missed: int = 0


@dataclass(frozen=True, eq=False)
class TrackState:
    tracks: Tuple[Track, ...] = ()
    next_id: int = 1
    frame: int = -1
    min_iou: float = config.MIN_IOU
    max_missed: int = config.MAX_MISSED_FRAMES


@dataclass(frozen=True)
class AssignmentResult:
    matches: Tuple[Tuple[int, int, float], ...]  # (track_id, detection index, iou)
    unmatched_tracks: Tuple[int, ...]
    unmatched_detections: Tuple[int, ...]


def _detection_mask(inst: InstanceMask, mode: str) -> np.ndarray:
    return inst.amodal_mask if mode == AMODAL else inst.visible_mask


def _warp(track: Track, flow: FlowSource, mode: str) -> np.ndarray:
    if mode == AMODAL:
        if not isinstance(flow, LayeredFlowStack):
            raise ParameterError("Amodal tracking needs a layered flow stack")
        return warp_mask_forward(track.mask, flow.levels[select_flow_layer(track.mask, flow)].flow)
    if not isinstance(flow, FlowField):
        raise ParameterError("Modal tracking needs a single flow field")
    return warp_mask_forward(track.mask, flow)


def associate(state: TrackState, warped: Sequence[np.ndarray], masks: Sequence[np.ndarray]) -> AssignmentResult:
    """Match warped track masks to detection masks by maximum total IoU."""
    ious = iou_matrix(warped, masks)
    matches = []
    for row, col in hungarian_max(ious):
        if ious[row, col] >= state.min_iou:
            matches.append((state.tracks[row].track_id, col, float(ious[row, col])))
    matched_tracks = {m[0] for m in matches}
    matched_dets = {m[1] for m in matches}
    return AssignmentResult(
        matches=tuple(matches),
        unmatched_tracks=tuple(t.track_id for t in state.tracks if t.track_id not in matched_tracks),
        unmatched_detections=tuple(j for j in range(len(masks)) if j not in matched_dets),
    )


def step(
    state: TrackState,
    flow: Optional[FlowSource],
    detections: InstanceMaskSet,
    mode: str = MODAL,
) -> Tuple[TrackState, Dict[int, int]]:
    """
    Advance the tracker by one frame.

    Args:
        state: Tracks after the previous frame
        flow: Flow from the previous frame to this one (None on the first frame)
        detections: Instances of this frame
        mode: "modal" warps visible masks with a FlowField, "amodal" warps
            amodal masks with the selected layer of a LayeredFlowStack

    Returns:
        Tuple: (new state, detection instance id -> track id)
    """
    if mode not in (MODAL, AMODAL):
        raise ParameterError(f"Unknown tracking mode '{mode}'")
    frame = state.frame + 1
    detected = [inst for inst in detections if _detection_mask(inst, mode).any()]
    masks = [_detection_mask(inst, mode) for inst in detected]

    if state.tracks and flow is None:
        raise ParameterError(f"Frame {frame}: active tracks need flow from the previous frame")
    warped = [_warp(track, flow, mode) for track in state.tracks] if state.tracks else []
    if warped and masks:
        validate_same_shape(warped[0], masks[0], names=["tracks", "detections"])
    result = associate(state, warped, masks)

    by_id = {t.track_id: (t, w) for t, w in zip(state.tracks, warped)}
    assignment: Dict[int, int] = {}
    tracks: List[Track] = []
    for track_id, det, _ in result.matches:
        inst = detected[det]
        assignment[inst.instance_id] = track_id
        tracks.append(Track(track_id, masks[det], inst.class_label, frame))

    retired = []
    for track_id in result.unmatched_tracks:
        track, warped_mask = by_id[track_id]
        if track.missed + 1 > state.max_missed:
            retired.append(track_id)
        else:
            tracks.append(replace(track, mask=warped_mask, missed=track.missed + 1))

    next_id = state.next_id
    new_tracks = []
    for det in result.unmatched_detections:
        inst = detected[det]
        assignment[inst.instance_id] = next_id
        tracks.append(Track(next_id, masks[det], inst.class_label, frame))
        new_tracks.append(next_id)
        next_id += 1

    if config.ENABLE_STRUCTURED_LOGGING:
        structured_logger.log_track_step(
            frame=frame,
            mode=mode,
            matches=[(t, detected[d].instance_id, iou) for t, d, iou in result.matches],
            new_tracks=new_tracks,
        )
        if retired:
            structured_logger.log_track_retired(frame=frame, track_ids=retired)

    tracks.sort(key=lambda t: t.track_id)
    new_state = replace(state, tracks=tuple(tracks), next_id=next_id, frame=frame)
    return new_state, dict(sorted(assignment.items()))


@dataclass
class MaskPropagationTracker:
    """Runs step over a whole sequence."""

    mode: str = MODAL
    min_iou: float = config.MIN_IOU
    max_missed: int = config.MAX_MISSED_FRAMES
    state: TrackState = field(init=False)

    def __post_init__(self):
        if self.mode not in (MODAL, AMODAL):
            raise ParameterError(f"Unknown tracking mode '{self.mode}'")
        if not 0.0 <= self.min_iou <= 1.0:
            raise ParameterError(f"min_iou must lie in [0, 1], got {self.min_iou}")
        self.state = TrackState(min_iou=self.min_iou, max_missed=self.max_missed)

    def run(self, frames: Sequence[InstanceMaskSet], flows: Sequence[FlowSource]) -> List[Dict[int, int]]:
        """
        Track a sequence.

        Args:
            frames: Instances per frame
            flows: flows[t] maps frame t to frame t + 1

        Returns:
            List[Dict[int, int]]: Per frame, instance id -> track id
        """
        if len(flows) < len(frames) - 1:
            raise ParameterError(f"{len(frames)} frames need {len(frames) - 1} flows, got {len(flows)}")
        assignments = []
        for t, detections in enumerate(frames):
            flow = flows[t - 1] if t > 0 else None
            self.state, assignment = step(self.state, flow, detections, self.mode)
            assignments.append(assignment)
        return assignments


# ==================== Scoring ====================

@dataclass(frozen=True)
class TrackingScore:
    association_accuracy: Optional[float]
    id_switches: int
    checks: int


def match_to_ground_truth(predicted: Mapping[int, np.ndarray], ground_truth: Mapping[int, np.ndarray]) -> Dict[int, int]:
    """Map GT instance id -> predicted id by maximum-IoU assignment (IoU > 0 only)."""
    pred_ids = sorted(predicted)
    gt_ids = sorted(ground_truth)
    ious = iou_matrix([ground_truth[g] for g in gt_ids], [predicted[p] for p in pred_ids])
    return {gt_ids[r]: pred_ids[c] for r, c in hungarian_max(ious) if ious[r, c] > 0}


def score_tracking(sequence: Sequence[Mapping[int, int]]) -> TrackingScore:
    """
    Association accuracy and id switches.

    Args:
        sequence: Per frame, GT instance id -> matched predicted id

    Every observation of a GT instance after its first is one check; the
    check fails (an id switch) when the predicted id differs from the one
    matched at the instance's previous observation.

    A GT instance without a match in a frame (IoU 0 with every prediction,
    e.g. fully hidden in modal mode) adds no check there, and its next match
    is compared against the last frame it was matched in. An id lost over a
    gap is therefore one switch when the instance is matched again.
    """
    last: Dict[int, int] = {}
    checks = 0
    switches = 0
    for frame in sequence:
        for gt_id, pred_id in sorted(frame.items()):
            if gt_id in last:
                checks += 1
                if last[gt_id] != pred_id:
                    switches += 1
            last[gt_id] = pred_id
    accuracy = (checks - switches) / checks if checks else None
    if config.ENABLE_STRUCTURED_LOGGING:
        structured_logger.log_track_score(association_accuracy=accuracy, id_switches=switches, checks=checks)
    return TrackingScore(association_accuracy=accuracy, id_switches=switches, checks=checks)


def load_segmentation(seg_dir: str, frame: int, amodal_dir: Optional[str] = None) -> InstanceMaskSet:
    """Instances of one frame from frame_%06d/ids.png and inst_%d_amodal.png."""
    return read_segmentation(
        frame_dir(seg_dir, frame), frame_dir(amodal_dir, frame) if amodal_dir is not None else None
    )
