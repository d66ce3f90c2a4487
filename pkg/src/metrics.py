"""Amodal Flow Quality metric suite and flow statistics.

WAUC numerators are accumulated as integers in hundredths of a threshold
weight (w_i = (101 - i) / 100), so pooling frames is exact and independent
of partitioning or reduction order.
"""

import json
import logging
import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

import config
from src.errors import EmptyEvaluation, ParameterError
from src.flow_ops import endpoint_error, split_visible_occluded
from src.flow_types import FlowField, LayeredFlowStack, LevelField
from src.structured_logger import StructuredLogger
from src.utils import validate_same_shape

logger = logging.getLogger(__name__)
structured_logger = StructuredLogger(__name__)


# ==================== Weights ====================

@dataclass(frozen=True)
class LevelWeights:
    """The w_n schedule: equal weights up to level k, exponential decay to w_last."""

    N: int
    k: int
    w_last: float
    weights: Tuple[float, ...]

    def __getitem__(self, n: int) -> float:
        return self.weights[n]


def level_weights(N: int, k: int = config.DEFAULT_K, w_last: float = config.DEFAULT_W_LAST) -> LevelWeights:
    """
    Build the level weight schedule.

    w_n = exp(-max(-(n - k) / (N - 1 - k) * log(w_last), 0))

    Raises:
        ParameterError: If N < 2, k outside [0, N-1) or w_last outside (0, 1]
    """
    if N < 2:
        raise ParameterError(f"N must be >= 2, got {N}")
    if k < 0 or k >= N - 1:
        raise ParameterError(f"k must satisfy 0 <= k < N-1 = {N - 1}, got {k}")
    if not 0 < w_last <= 1:
        raise ParameterError(f"w_last must lie in (0, 1], got {w_last}")

    weights = []
    for n in range(N):
        if n <= k:
            weights.append(1.0)
        elif n == N - 1:
            weights.append(float(w_last))
        else:
            exponent = max(-(n - k) / (N - 1 - k) * math.log(w_last), 0.0)
            weights.append(math.exp(-exponent))
    return LevelWeights(N=N, k=k, w_last=float(w_last), weights=tuple(weights))


@dataclass(frozen=True)
class WaucThresholds:
    """Distance thresholds delta_i = i/20 px and weights w_i = 1 - (i-1)/100, i = 1..100."""

    thresholds: np.ndarray
    weights: np.ndarray
    weight_units: np.ndarray  # w_i in hundredths, integers 100..1

    @classmethod
    def default(cls) -> "WaucThresholds":
        i = np.arange(1, config.WAUC_THRESHOLD_COUNT + 1)
        units = config.WAUC_THRESHOLD_COUNT + 1 - i
        return cls(thresholds=i * config.WAUC_THRESHOLD_STEP, weights=units / 100.0, weight_units=units)

    @property
    def total_units(self) -> int:
        return int(self.weight_units.sum())

    def pixel_units(self, errors: np.ndarray) -> np.ndarray:
        """Sum of weight units of the thresholds each error passes (e <= delta_i)."""
        suffix = np.concatenate([np.cumsum(self.weight_units[::-1])[::-1], [0]])
        first_passed = np.searchsorted(self.thresholds, errors, side="left")
        return suffix[first_passed]


THRESHOLDS = WaucThresholds.default()


# ==================== Per-level scores ====================

@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn)

    @property
    def union(self) -> int:
        return self.tp + self.fp + self.fn

    @property
    def iou(self) -> Optional[float]:
        return self.tp / self.union if self.union else None


def confusion_counts(pred_mask: np.ndarray, gt_mask: np.ndarray) -> ConfusionCounts:
    pred_mask = np.asarray(pred_mask, bool)
    gt_mask = np.asarray(gt_mask, bool)
    validate_same_shape(pred_mask, gt_mask, names=["pred_mask", "gt_mask"])
    return ConfusionCounts(
        tp=int(np.count_nonzero(pred_mask & gt_mask)),
        fp=int(np.count_nonzero(pred_mask & ~gt_mask)),
        fn=int(np.count_nonzero(~pred_mask & gt_mask)),
    )


def iou_level(pred_mask: np.ndarray, gt_mask: np.ndarray) -> Tuple[Optional[float], ConfusionCounts]:
    """
    Class-agnostic IoU of one level.

    Returns:
        Tuple: (iou or None when tp + fp + fn = 0, confusion counts)
    """
    counts = confusion_counts(pred_mask, gt_mask)
    return counts.iou, counts


def _wauc_units(pred_flow: FlowField, gt_flow: FlowField, domain: np.ndarray) -> Tuple[int, int]:
    errors = endpoint_error(pred_flow, gt_flow)[domain]
    return int(THRESHOLDS.pixel_units(errors).sum()), int(errors.size)


def wauc_level(pred_flow: FlowField, gt: LevelField) -> Tuple[Optional[float], int]:
    """
    Weighted area under the threshold curve over the GT-masked pixels of a level.

    Returns:
        Tuple: (wauc or None when the level has no GT pixels, pixel count C)
    """
    units, pixels = _wauc_units(pred_flow, gt.flow, gt.mask)
    if pixels == 0:
        return None, 0
    return units / (pixels * THRESHOLDS.total_units), pixels


# ==================== Accumulation ====================

@dataclass(frozen=True)
class LevelAccumulator:
    """Poolable per-level sums."""

    level: int
    wauc_units: int = 0
    pixels: int = 0
    occluded_units: int = 0
    occluded_pixels: int = 0
    counts: ConfusionCounts = field(default_factory=ConfusionCounts)

    def __add__(self, other: "LevelAccumulator") -> "LevelAccumulator":
        return LevelAccumulator(
            level=self.level,
            wauc_units=self.wauc_units + other.wauc_units,
            pixels=self.pixels + other.pixels,
            occluded_units=self.occluded_units + other.occluded_units,
            occluded_pixels=self.occluded_pixels + other.occluded_pixels,
            counts=self.counts + other.counts,
        )


@dataclass(frozen=True)
class FrameAccumulator:
    frame: int
    levels: Tuple[LevelAccumulator, ...]


def accumulate_frame(pred: LayeredFlowStack, gt: LayeredFlowStack, frame: int = 0) -> FrameAccumulator:
    """
    Per-level sums of one frame pair; levels are matched by index.

    GT levels without a predicted counterpart score zero. Predicted levels
    beyond the GT only add false positives to the confusion counts; with no
    GT pixels they stay out of both means.
    """
    validate_same_shape(pred.levels[0].mask, gt.levels[0].mask, names=["pred", "gt"])
    shape = gt.shape
    empty = np.zeros(shape, bool)
    levels = []
    for n in range(max(pred.num_levels, gt.num_levels)):
        gt_level = gt.levels[n] if n < gt.num_levels else None
        pred_level = pred.levels[n] if n < pred.num_levels else None
        domain = gt_level.mask if gt_level is not None else empty
        occluded = split_visible_occluded(gt_level)[1] if gt_level is not None else empty

        if pred_level is not None and gt_level is not None:
            units, pixels = _wauc_units(pred_level.flow, gt_level.flow, domain)
            occ_units, occ_pixels = _wauc_units(pred_level.flow, gt_level.flow, occluded)
        else:
            units, pixels = 0, int(np.count_nonzero(domain))
            occ_units, occ_pixels = 0, int(np.count_nonzero(occluded))

        counts = ConfusionCounts()
        if n >= 1:
            pred_mask = pred_level.mask if pred_level is not None else empty
            counts = confusion_counts(pred_mask, domain)
        levels.append(LevelAccumulator(n, units, pixels, occ_units, occ_pixels, counts))

    if config.ENABLE_STRUCTURED_LOGGING:
        structured_logger.log_eval_frame(
            frame=frame,
            num_levels=len(levels),
            present_levels=[acc.level for acc in levels if acc.pixels > 0],
        )
    return FrameAccumulator(frame=frame, levels=tuple(levels))


# ==================== Reports ====================

@dataclass(frozen=True)
class LevelReport:
    level: int
    wauc: Optional[float]
    iou: Optional[float]
    pixels: int
    present: bool
    wauc_occluded: Optional[float] = None
    occluded_pixels: int = 0
    counts: ConfusionCounts = field(default_factory=ConfusionCounts)


def _round(value: Optional[float]) -> Optional[float]:
    return None if value is None else round(float(value), config.FRACTION_DIGITS)


def _fmt(value: Optional[float]) -> str:
    return "n/a" if value is None else f"{value:.{config.FRACTION_DIGITS}f}"


@dataclass(frozen=True)
class EvalReport:
    """AFQ, mWAUC, mIoU and the per-level breakdown."""

    afq: Optional[float]
    mwauc: Optional[float]
    miou: Optional[float]
    per_level: Tuple[LevelReport, ...]
    weights: LevelWeights
    frame_count: int = 1

    def to_dict(self) -> Dict[str, Any]:
        return {
            "afq": _round(self.afq),
            "mwauc": _round(self.mwauc),
            "miou": _round(self.miou),
            "frame_count": self.frame_count,
            "weights": {"N": self.weights.N, "k": self.weights.k, "w_last": self.weights.w_last},
            "per_level": [
                {
                    "level": lv.level,
                    "wauc": _round(lv.wauc),
                    "iou": _round(lv.iou),
                    "pixels": lv.pixels,
                    "present": lv.present,
                    "wauc_occluded": _round(lv.wauc_occluded),
                    "occluded_pixels": lv.occluded_pixels,
                    "tp": lv.counts.tp,
                    "fp": lv.counts.fp,
                    "fn": lv.counts.fn,
                }
                for lv in self.per_level
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=False) + "\n"

    def to_frame(self) -> pd.DataFrame:
        """Per-level table with formatted fractions."""
        return pd.DataFrame(
            {
                "level": [lv.level for lv in self.per_level],
                "weight": [f"{self.weights[lv.level]:.5f}" for lv in self.per_level],
                "wauc": [_fmt(lv.wauc) for lv in self.per_level],
                "iou": [_fmt(lv.iou) for lv in self.per_level],
                "wauc_occ": [_fmt(lv.wauc_occluded) for lv in self.per_level],
                "pixels": [lv.pixels for lv in self.per_level],
                "present": ["yes" if lv.present else "no" for lv in self.per_level],
            }
        )

    def format_table(self) -> str:
        lines = [
            f"AFQ    {_fmt(self.afq)}",
            f"mWAUC  {_fmt(self.mwauc)}",
            f"mIoU   {_fmt(self.miou)}",
            f"frames {self.frame_count}",
            "",
            self.to_frame().to_string(index=False),
        ]
        return "\n".join(lines) + "\n"


def afq_from_means(mwauc: float, miou: float) -> float:
    """Geometric mean of mWAUC and mIoU."""
    for name, value in (("mwauc", mwauc), ("miou", miou)):
        if not 0.0 <= value <= 1.0:
            raise ParameterError(f"{name} must lie in [0, 1], got {value}")
    return math.sqrt(mwauc * miou)


def _weighted_mean(values: Sequence[Tuple[float, float]]) -> Optional[float]:
    if not values:
        return None
    numerator = 0.0
    denominator = 0.0
    for weight, value in values:
        numerator += weight * value
        denominator += weight
    return numerator / denominator


def aggregate_reports(
    per_frame: Sequence[FrameAccumulator], weights: Optional[LevelWeights] = None
) -> EvalReport:
    """
    Pool per-level sums over frames and combine them into one report.

    Frames may differ in size and level count; the level range is the maximum N seen.

    Args:
        per_frame: Frame accumulators, in ascending frame order
        weights: Level weights (default: schedule for max(N, MAX_LEVELS))

    Raises:
        EmptyEvaluation: If no level carries GT pixels
        ParameterError: If the weight schedule covers fewer levels than evaluated
    """
    num_levels = max((len(f.levels) for f in per_frame), default=0)
    pooled = [LevelAccumulator(n) for n in range(num_levels)]
    for frame in per_frame:
        for acc in frame.levels:
            pooled[acc.level] = pooled[acc.level] + acc

    if weights is None:
        weights = level_weights(max(num_levels, config.MAX_LEVELS))
    if weights.N < num_levels:
        raise ParameterError(f"weight schedule covers {weights.N} levels, evaluation needs {num_levels}")

    total_units = THRESHOLDS.total_units
    per_level = []
    wauc_terms: List[Tuple[float, float]] = []
    iou_terms: List[Tuple[float, float]] = []
    for acc in pooled:
        wauc = acc.wauc_units / (acc.pixels * total_units) if acc.pixels else None
        wauc_occ = acc.occluded_units / (acc.occluded_pixels * total_units) if acc.occluded_pixels else None
        # levels without GT pixels drop out of both means; their counts stay on the report
        iou = acc.counts.iou if acc.level >= 1 and acc.pixels > 0 else None
        if wauc is not None:
            wauc_terms.append((weights[acc.level], wauc))
        if iou is not None:
            iou_terms.append((weights[acc.level], iou))
        per_level.append(LevelReport(
            level=acc.level,
            wauc=wauc,
            iou=iou,
            pixels=acc.pixels,
            present=acc.pixels > 0,
            wauc_occluded=wauc_occ,
            occluded_pixels=acc.occluded_pixels,
            counts=acc.counts,
        ))

    if not wauc_terms and not iou_terms:
        raise EmptyEvaluation("No level carries ground-truth pixels")

    mwauc = _weighted_mean(wauc_terms)
    miou = _weighted_mean(iou_terms)
    afq = math.sqrt(mwauc * miou) if mwauc is not None and miou is not None else None
    report = EvalReport(
        afq=afq, mwauc=mwauc, miou=miou, per_level=tuple(per_level), weights=weights, frame_count=len(per_frame)
    )

    if config.ENABLE_STRUCTURED_LOGGING:
        structured_logger.log_eval_report(afq=afq, mwauc=mwauc, miou=miou, frame_count=len(per_frame))
    return report


def evaluate_stack(pred: LayeredFlowStack, gt: LayeredFlowStack, weights: Optional[LevelWeights] = None) -> EvalReport:
    """Evaluate one predicted stack against its ground truth."""
    return aggregate_reports([accumulate_frame(pred, gt)], weights)


# ==================== Flow statistics ====================

@dataclass(frozen=True)
class FlowStatistics:
    """Raw histogram counts; log10(count + 1) is applied at presentation."""

    direction_counts: np.ndarray
    dudx_counts: np.ndarray

    def __add__(self, other: "FlowStatistics") -> "FlowStatistics":
        return FlowStatistics(self.direction_counts + other.direction_counts, self.dudx_counts + other.dudx_counts)

    @staticmethod
    def direction_edges() -> np.ndarray:
        return np.linspace(-np.pi, np.pi, config.DIRECTION_BINS + 1)

    @staticmethod
    def dudx_edges() -> np.ndarray:
        return np.linspace(-config.DUDX_RANGE, config.DUDX_RANGE, config.DUDX_BINS + 1)

    @classmethod
    def empty(cls) -> "FlowStatistics":
        return cls(np.zeros(config.DIRECTION_BINS, np.int64), np.zeros(config.DUDX_BINS, np.int64))

    def to_frame(self) -> pd.DataFrame:
        rows = []
        for name, counts, edges in (
            ("direction", self.direction_counts, self.direction_edges()),
            ("du_dx", self.dudx_counts, self.dudx_edges()),
        ):
            for b, count in enumerate(counts):
                rows.append({
                    "histogram": name,
                    "bin": b,
                    "lower": round(float(edges[b]), 6),
                    "upper": round(float(edges[b + 1]), 6),
                    "count": int(count),
                    "log10_count": round(math.log10(int(count) + 1), 6),
                })
        return pd.DataFrame(rows, columns=["histogram", "bin", "lower", "upper", "count", "log10_count"])


def flow_statistics(flow: FlowField, mask: Optional[np.ndarray] = None) -> FlowStatistics:
    """
    Direction and du/dx histograms of a flow field.

    Direction: 36 uniform bins over [-pi, pi) of atan2(v, u), pixels with
    magnitude below 1e-6 excluded. du/dx: 101 uniform bins over [-10, 10] of
    the horizontal forward difference of u, clipped.

    Args:
        flow: Flow field
        mask: Optional boolean raster restricting contributing pixels; du/dx
            uses pairs whose both pixels are inside it
    """
    u = flow.u.astype(np.float64)
    v = flow.v.astype(np.float64)
    if mask is None:
        mask = np.ones(flow.shape, bool)
    else:
        mask = np.asarray(mask, bool)
        validate_same_shape(mask, u, names=["mask", "flow"])

    moving = mask & (np.hypot(u, v) >= config.MIN_FLOW_MAGNITUDE)
    degrees = np.degrees(np.arctan2(v[moving], u[moving]))
    bin_width = 360.0 / config.DIRECTION_BINS
    direction_idx = np.clip(np.floor((degrees + 180.0) / bin_width), 0, config.DIRECTION_BINS - 1).astype(np.int64)
    direction = np.bincount(direction_idx, minlength=config.DIRECTION_BINS)

    pairs = mask[:, 1:] & mask[:, :-1]
    dudx = np.clip((u[:, 1:] - u[:, :-1])[pairs], -config.DUDX_RANGE, config.DUDX_RANGE)
    span = 2 * config.DUDX_RANGE
    dudx_idx = np.clip(
        np.floor((dudx + config.DUDX_RANGE) * config.DUDX_BINS / span), 0, config.DUDX_BINS - 1
    ).astype(np.int64)
    dudx_counts = np.bincount(dudx_idx, minlength=config.DUDX_BINS)
    return FlowStatistics(direction.astype(np.int64), dudx_counts.astype(np.int64))


def occlusion_order_histogram(manifest: Mapping[str, Any]) -> Dict[int, int]:
    """Number of object instances per occlusion level over all frames of a manifest."""
    histogram: Dict[int, int] = {}
    for frame in manifest.get("frames", []):
        for obj in frame.get("objects", []):
            histogram[obj["level"]] = histogram.get(obj["level"], 0) + 1
    return dict(sorted(histogram.items()))
