"""Non-learned amodal flow infilling baselines.

Both infill methods copy modal flow on each object's visible pixels and fill
its occluded pixels from the visible part: near-boundary takes the flow of
the nearest visible pixel, mean takes the average visible flow. Output masks
are the input amodal masks grouped by occlusion level.
"""

import logging
import os
from dataclasses import dataclass
from typing import Callable, Dict, Optional, Tuple

import numpy as np
from scipy.ndimage import distance_transform_edt
from scipy.spatial import cKDTree

import config
from src.errors import FormatError, ParameterError
from src.flow_io import frame_dir, read_flo, read_id_map_png, read_optional_flo, read_segmentation
from src.flow_types import FlowField, InstanceMask, InstanceMaskSet, LayeredFlowStack, LevelField, OcclusionGraph
from src.stratify import stratify
from src.structured_logger import StructuredLogger
from src.synthgen import frame_objects, read_manifest
from src.utils import validate_same_shape

logger = logging.getLogger(__name__)
structured_logger = StructuredLogger(__name__)

Fill = Tuple[np.ndarray, np.ndarray]

TIE_RADIUS = 1e-6


@dataclass(frozen=True, eq=False)
class InfillInput:
    """
    Attributes:
        modal_flow: Flow of the visible surface
        instances: Objects with amodal and visible masks
        graph: Occlusion levels of the instances
        background_flow: Level-0 flow (default: modal_flow)
    """

    modal_flow: FlowField
    instances: InstanceMaskSet
    graph: OcclusionGraph
    background_flow: Optional[FlowField] = None

    def __post_init__(self):
        rasters = [self.modal_flow.u] + [inst.amodal_mask for inst in self.instances]
        if self.background_flow is not None:
            rasters.append(self.background_flow.u)
        validate_same_shape(*rasters)
        missing = [i for i in self.instances.ids if i not in self.graph.levels]
        if missing:
            raise ParameterError(f"Instances without an occlusion level: {missing}")

    @property
    def background(self) -> FlowField:
        return self.background_flow if self.background_flow is not None else self.modal_flow


def _fill_near_boundary(inst: InstanceMask, modal: FlowField, occluded: np.ndarray) -> Fill:
    """
    Flow of the nearest visible pixel; equidistant candidates resolve to the
    smallest (row, column).
    """
    distance = distance_transform_edt(~inst.visible_mask)[occluded]
    visible = np.argwhere(inst.visible_mask)  # row-major
    targets = np.argwhere(occluded)
    # squared pixel distances are integers; the next ring lies far beyond TIE_RADIUS
    candidates = cKDTree(visible).query_ball_point(targets, r=distance + TIE_RADIUS)
    nearest = visible[np.fromiter((min(c) for c in candidates), np.intp, count=len(targets))]
    iy, ix = nearest[:, 0], nearest[:, 1]
    return modal.u[iy, ix], modal.v[iy, ix]


def _fill_mean(inst: InstanceMask, modal: FlowField, occluded: np.ndarray) -> Fill:
    visible = inst.visible_mask
    mean_u = modal.u[visible].astype(np.float64).mean()
    mean_v = modal.v[visible].astype(np.float64).mean()
    count = int(np.count_nonzero(occluded))
    return np.full(count, mean_u, np.float32), np.full(count, mean_v, np.float32)


def _assemble(data: InfillInput, fill: Optional[Callable[[InstanceMask, FlowField, np.ndarray], Fill]],
              method: str) -> LayeredFlowStack:
    shape = data.modal_flow.shape
    num_levels = data.graph.num_levels
    level_u = np.zeros((num_levels,) + shape, np.float32)
    level_v = np.zeros((num_levels,) + shape, np.float32)
    level_mask = np.zeros((num_levels,) + shape, bool)
    modal = data.modal_flow
    background = data.background

    for inst in data.instances:
        n = data.graph.levels[inst.instance_id]
        u, v = level_u[n], level_v[n]
        level_mask[n] |= inst.amodal_mask
        if fill is None:
            continue
        visible = inst.visible_mask
        occluded = inst.occluded_mask
        u[visible] = modal.u[visible]
        v[visible] = modal.v[visible]
        if not occluded.any():
            continue
        if not visible.any():
            logger.debug(f"Instance {inst.instance_id} has no visible pixels, filling with background flow")
            if config.ENABLE_STRUCTURED_LOGGING:
                structured_logger.log_infill_fallback(
                    method=method, instance_id=inst.instance_id, occluded_pixels=int(np.count_nonzero(occluded))
                )
            u[occluded] = background.u[occluded]
            v[occluded] = background.v[occluded]
            continue
        u[occluded], v[occluded] = fill(inst, modal, occluded)

    level0 = background if fill is not None else FlowField.zeros(modal.width, modal.height)
    levels = [LevelField.full(level0)]
    for n in range(1, num_levels):
        levels.append(LevelField(level_mask[n], FlowField(level_u[n], level_v[n])))

    if config.ENABLE_STRUCTURED_LOGGING:
        structured_logger.log_infill_done(method=method, num_levels=num_levels, instance_count=len(data.instances))
    return LayeredFlowStack(tuple(levels))


def infill_near_boundary(data: InfillInput) -> LayeredFlowStack:
    """Extend the visible flow of every object across its occluded region (nearest visible pixel)."""
    return _assemble(data, _fill_near_boundary, "near-boundary")


def infill_mean(data: InfillInput) -> LayeredFlowStack:
    """Fill every object's occluded region with the mean flow of its visible region."""
    return _assemble(data, _fill_mean, "mean")


def zero_baseline(data: InfillInput) -> LayeredFlowStack:
    """All-zero flow on the input masks; a lower-bound reference."""
    return _assemble(data, None, "zero")


METHODS: Dict[str, Callable[[InfillInput], LayeredFlowStack]] = {
    "near-boundary": infill_near_boundary,
    "mean": infill_mean,
    "zero": zero_baseline,
}


def load_infill_input(flow_dir: str, masks_dir: str, frame: int) -> InfillInput:
    """
    Read modal flow and instance masks of one frame.

    Occlusion levels come from the masks directory's manifest when it lists
    every instance of the frame, otherwise from stratifying with the visible
    id map as evidence.

    Raises:
        FormatError: If modal.flo or ids.png is missing or malformed
    """
    flow_frame = frame_dir(flow_dir, frame)
    mask_frame = frame_dir(masks_dir, frame)
    modal_path = os.path.join(flow_frame, config.MODAL_FLOW_FILE)
    if not os.path.exists(modal_path):
        raise FormatError(f"{modal_path}: not found")
    modal = read_flo(modal_path)
    background = read_optional_flo(os.path.join(flow_frame, config.BACKGROUND_FLOW_FILE))

    described = {obj["id"]: obj for obj in frame_objects(read_manifest(masks_dir) or {}, frame)}
    instances = read_segmentation(mask_frame, labels={i: obj["class"] for i, obj in described.items()})

    if instances.ids and all(i in described for i in instances.ids):
        levels = {i: int(described[i]["level"]) for i in instances.ids}
        graph = OcclusionGraph(nodes=tuple(instances.ids), edges=frozenset(), levels=levels)
    else:
        graph = stratify(instances, read_id_map_png(os.path.join(mask_frame, config.ID_MAP_FILE)))
    return InfillInput(modal_flow=modal, instances=instances, graph=graph, background_flow=background)
