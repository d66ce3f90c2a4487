"""Synthetic amodal optical flow ground truth for rigid primitive scenes.

Each object is ray cast on its own to get its amodal depth, a combined
z-buffer decides visibility, and every amodal pixel is backprojected, moved
with the object and camera poses of the next frame, and reprojected.
"""

import json
import logging
import os
from dataclasses import dataclass
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

import config
from src.errors import FormatError, SceneError
from src.flow_io import frame_dir, write_flo, write_id_map_png, write_mask_png, write_stack
from src.flow_types import FlowField, InstanceMask, InstanceMaskSet, LayeredFlowStack, LevelField, OcclusionGraph
from src.geometry import CameraModel, RigidPose, Shape, ground_plane_depth, intersect_in_camera, parse_shape, \
    trajectory_poses
from src.metrics import occlusion_order_histogram
from src.stratify import stratify
from src.structured_logger import StructuredLogger
from src.utils import atomic_write_bytes, ordered_map, validate_same_shape

logger = logging.getLogger(__name__)
structured_logger = StructuredLogger(__name__)


# ==================== Scene description ====================

@dataclass(frozen=True)
class SceneObject:
    instance_id: int
    class_label: str
    shape: Shape
    poses: Tuple[RigidPose, ...]


@dataclass(frozen=True)
class Background:
    """Static world geometry: a ground plane at world y = ground_height plus a far plane."""

    ground_height: Optional[float] = None
    far_distance: float = config.FAR_PLANE_DISTANCE


@dataclass(frozen=True)
class SceneSpec:
    camera: CameraModel
    camera_poses: Tuple[RigidPose, ...]
    objects: Tuple[SceneObject, ...]
    background: Background
    frame_count: int
    name: str = "scene"

    def __post_init__(self):
        if self.frame_count < 2:
            raise SceneError(f"A scene needs at least 2 frames, got {self.frame_count}")
        if len(self.camera_poses) != self.frame_count:
            raise SceneError(f"Camera has {len(self.camera_poses)} poses for {self.frame_count} frames")
        ids = [obj.instance_id for obj in self.objects]
        if len(set(ids)) != len(ids):
            raise SceneError(f"Object ids must be unique, got {ids}")
        for obj in self.objects:
            if not 1 <= obj.instance_id <= 0xFFFF:
                raise SceneError(f"Object id {obj.instance_id} outside 1..65535")
            if len(obj.poses) != self.frame_count:
                raise SceneError(f"Object {obj.instance_id} has {len(obj.poses)} poses for {self.frame_count} frames")
        if not self.background.far_distance > 0:
            raise SceneError(f"Far plane distance must be positive, got {self.background.far_distance}")


def _parse_poses(data: Mapping[str, Any], frame_count: int, owner: str) -> Tuple[RigidPose, ...]:
    if "poses" in data:
        poses = tuple(RigidPose.from_dict(p) for p in data["poses"])
        if len(poses) < frame_count:
            raise SceneError(f"{owner}: {len(poses)} poses for {frame_count} frames")
        return poses[:frame_count]
    if "trajectory" in data:
        traj = data["trajectory"]
        start = RigidPose.from_dict(traj.get("start", {}))
        return trajectory_poses(start, traj.get("step_translation", (0, 0, 0)),
                                traj.get("step_rotation", (0, 0, 0)), frame_count)
    if "pose" in data:
        return (RigidPose.from_dict(data["pose"]),) * frame_count
    raise SceneError(f"{owner}: needs 'poses', 'trajectory' or 'pose'")


def parse_scene(data: Mapping[str, Any], frames: Optional[int] = None) -> SceneSpec:
    """
    Build a SceneSpec from its JSON document.

    Args:
        data: Parsed scene document
        frames: Frame count overriding the document's "frames"

    Raises:
        SceneError: If the document is malformed or names degenerate geometry
    """
    try:
        frame_count = int(frames if frames is not None else data["frames"])
        camera = CameraModel.from_dict(data["camera"])
        camera_motion: Dict[str, Any] = {"pose": {}}
        if "camera_poses" in data:
            camera_motion = {"poses": data["camera_poses"]}
        elif "camera_trajectory" in data:
            camera_motion = {"trajectory": data["camera_trajectory"]}
        camera_poses = _parse_poses(camera_motion, frame_count, "camera")
        objects = tuple(
            SceneObject(
                instance_id=int(obj["id"]),
                class_label=str(obj.get("class", "object")),
                shape=parse_shape(obj["shape"]),
                poses=_parse_poses(obj, frame_count, f"object {obj.get('id')}"),
            )
            for obj in data["objects"]
        )
        bg = data.get("background", {})
        background = Background(
            ground_height=None if bg.get("ground_height") is None else float(bg["ground_height"]),
            far_distance=float(bg.get("far_distance", config.FAR_PLANE_DISTANCE)),
        )
    except (AttributeError, KeyError, TypeError, ValueError) as e:
        raise SceneError(f"Malformed scene: {e!r}") from e
    return SceneSpec(camera, camera_poses, objects, background, frame_count, str(data.get("name", "scene")))


def load_scene(path: str, frames: Optional[int] = None) -> SceneSpec:
    """Read a scene JSON file."""
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
    except FileNotFoundError as e:
        raise SceneError(f"Scene file not found: {path}") from e
    except json.JSONDecodeError as e:
        raise SceneError(f"{path}: invalid JSON ({e})") from e
    if not isinstance(data, dict):
        raise SceneError(f"{path}: scene must be a JSON object")
    return parse_scene(data, frames)


# ==================== Rendering ====================

def render_object_depth(shape: Shape, pose_in_camera: RigidPose, camera: CameraModel) -> np.ndarray:
    """
    Amodal z-depth of one object, ignoring all other geometry.

    Returns:
        np.ndarray: float64 (H, W), nearest-hit depth, +inf where the ray misses

    Raises:
        SceneError: On nonpositive extents
    """
    return intersect_in_camera(shape, pose_in_camera, camera.rays())


def compose_visibility(
    object_depths: Mapping[int, np.ndarray],
    background_depth: np.ndarray,
    class_labels: Optional[Mapping[int, str]] = None,
) -> Tuple[np.ndarray, InstanceMaskSet]:
    """
    Combined z-buffer over the background and all objects.

    Objects are tested in ascending id order and win only with a strictly
    smaller depth, so ties go to the lower id and the background wins ties.

    Returns:
        Tuple: (int32 winner raster with 0 = background, instance masks)
    """
    validate_same_shape(background_depth, *object_depths.values())
    best = np.array(background_depth, np.float64)
    winner = np.zeros(best.shape, np.int32)
    for instance_id in sorted(object_depths):
        closer = object_depths[instance_id] < best
        winner[closer] = instance_id
        best[closer] = object_depths[instance_id][closer]

    instances = []
    for instance_id in sorted(object_depths):
        depth = object_depths[instance_id]
        amodal = np.isfinite(depth)
        instances.append(InstanceMask(
            instance_id=instance_id,
            class_label=(class_labels or {}).get(instance_id, "object"),
            amodal_mask=amodal,
            visible_mask=winner == instance_id,
            mean_depth=float(depth[amodal].mean()) if amodal.any() else None,
        ))
    return winner, InstanceMaskSet(tuple(instances))


def reproject(
    depth: np.ndarray,
    camera: CameraModel,
    cam_pose_t: RigidPose,
    cam_pose_t1: RigidPose,
    pose_t: Optional[RigidPose] = None,
    pose_t1: Optional[RigidPose] = None,
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Flow of the points at the given depths under camera and optional object motion.

    Returns:
        Tuple: (u, v, valid) float64 flow and boolean validity, flow zero where
            depth is infinite or the moved point is not in front of the camera
    """
    finite = np.isfinite(depth)
    points = camera.rays() * np.where(finite, depth, 0.0)[..., None]
    world = cam_pose_t.apply(points)
    if pose_t is not None and pose_t1 is not None:
        world = pose_t1.apply(pose_t.apply_inverse(world))
    moved = cam_pose_t1.apply_inverse(world)

    valid = finite & (moved[..., 2] > config.RAY_EPSILON)
    safe = np.where(valid[..., None], moved, np.array([0.0, 0.0, 1.0]))
    x1, y1 = camera.project(safe)
    px, py = camera.pixel_centers()
    u = np.where(valid, x1 - px, 0.0)
    v = np.where(valid, y1 - py, 0.0)
    return u, v, valid


def object_flow(
    pose_t: RigidPose,
    pose_t1: RigidPose,
    cam_pose_t: RigidPose,
    cam_pose_t1: RigidPose,
    amodal_depth_t: np.ndarray,
    camera: CameraModel,
) -> Tuple[FlowField, np.ndarray]:
    """
    Amodal flow of one object between frames t and t+1.

    Returns:
        Tuple: (flow zero-filled off the mask, mask of pixels with defined flow)
    """
    u, v, valid = reproject(amodal_depth_t, camera, cam_pose_t, cam_pose_t1, pose_t, pose_t1)
    return FlowField(u, v), valid


def background_flow(cam_pose_t: RigidPose, cam_pose_t1: RigidPose, background: Background,
                    camera: CameraModel) -> FlowField:
    """Full-frame flow of the static world, including pixels hidden behind objects."""
    depth = ground_plane_depth(camera, cam_pose_t, background.ground_height, background.far_distance)
    u, v, _ = reproject(depth, camera, cam_pose_t, cam_pose_t1)
    return FlowField(u, v)


def motion_mask(scene: SceneSpec, instances: InstanceMaskSet, frame: int) -> np.ndarray:
    """Union of amodal masks of objects whose pose changes between frame and frame + 1."""
    poses = {obj.instance_id: obj.poses for obj in scene.objects}
    mask = np.zeros(scene.camera.shape, bool)
    for inst in instances:
        p = poses[inst.instance_id]
        if not p[frame].equals(p[frame + 1]):
            mask |= inst.amodal_mask
    return mask


# ==================== Frame assembly ====================

@dataclass(frozen=True, eq=False)
class FrameGroundTruth:
    frame: int
    modal_flow: FlowField
    background_flow: FlowField
    amodal_stack: LayeredFlowStack
    instances: InstanceMaskSet
    depths: Dict[int, np.ndarray]
    winner: np.ndarray
    graph: OcclusionGraph
    motion_mask: np.ndarray
    invalid_pixels: int = 0


def generate_frame(scene: SceneSpec, frame: int) -> FrameGroundTruth:
    """Ground truth for the frame pair (frame, frame + 1), anchored at frame."""
    if not 0 <= frame < scene.frame_count - 1:
        raise SceneError(f"Frame {frame} has no successor in a {scene.frame_count}-frame scene")
    camera = scene.camera
    cam_t, cam_t1 = scene.camera_poses[frame], scene.camera_poses[frame + 1]

    depths: Dict[int, np.ndarray] = {}
    for obj in scene.objects:
        depth = render_object_depth(obj.shape, obj.poses[frame].relative_to(cam_t), camera)
        if np.isfinite(depth).any():
            depths[obj.instance_id] = depth

    bg_depth = ground_plane_depth(camera, cam_t, scene.background.ground_height, scene.background.far_distance)
    labels = {obj.instance_id: obj.class_label for obj in scene.objects}
    winner, instances = compose_visibility(depths, bg_depth, labels)
    graph = stratify(instances, depths)

    bg_flow = background_flow(cam_t, cam_t1, scene.background, camera)
    modal_u = bg_flow.u.copy()
    modal_v = bg_flow.v.copy()

    objects = {obj.instance_id: obj for obj in scene.objects}
    height, width = camera.shape
    num_levels = graph.num_levels
    level_u = np.zeros((num_levels, height, width), np.float32)
    level_v = np.zeros((num_levels, height, width), np.float32)
    level_mask = np.zeros((num_levels, height, width), bool)
    level_visible = np.zeros((num_levels, height, width), bool)
    invalid_pixels = 0
    for inst in instances:
        obj = objects[inst.instance_id]
        flow, valid = object_flow(obj.poses[frame], obj.poses[frame + 1], cam_t, cam_t1, depths[inst.instance_id],
                                  camera)
        support = inst.amodal_mask & valid
        invalid_pixels += int(np.count_nonzero(inst.amodal_mask & ~valid))
        n = graph.levels[inst.instance_id]
        level_u[n][support] = flow.u[support]
        level_v[n][support] = flow.v[support]
        level_mask[n] |= support
        level_visible[n] |= inst.visible_mask & support
        modal_u[inst.visible_mask] = flow.u[inst.visible_mask]
        modal_v[inst.visible_mask] = flow.v[inst.visible_mask]

    levels = [LevelField(np.ones((height, width), bool), bg_flow, winner == 0)]
    for n in range(1, num_levels):
        levels.append(LevelField(level_mask[n], FlowField(level_u[n], level_v[n]), level_visible[n]))

    if invalid_pixels:
        logger.debug(f"Frame {frame}: {invalid_pixels} object pixels project behind the camera")
    if config.ENABLE_STRUCTURED_LOGGING:
        structured_logger.log_gen_frame(
            frame=frame, num_levels=num_levels, levels=graph.levels, invalid_pixels=invalid_pixels
        )

    return FrameGroundTruth(
        frame=frame,
        modal_flow=FlowField(modal_u, modal_v),
        background_flow=bg_flow,
        amodal_stack=LayeredFlowStack(tuple(levels)),
        instances=instances,
        depths=depths,
        winner=winner,
        graph=graph,
        motion_mask=motion_mask(scene, instances, frame),
        invalid_pixels=invalid_pixels,
    )


def write_frame(gt: FrameGroundTruth, out_dir: str) -> Dict[str, Any]:
    """Write one frame's ground truth and return its manifest entry."""
    directory = frame_dir(out_dir, gt.frame)
    write_stack(gt.amodal_stack, directory)
    write_flo(gt.modal_flow, os.path.join(directory, config.MODAL_FLOW_FILE))
    write_flo(gt.background_flow, os.path.join(directory, config.BACKGROUND_FLOW_FILE))
    write_id_map_png(gt.winner, os.path.join(directory, config.ID_MAP_FILE))
    write_mask_png(gt.motion_mask, os.path.join(directory, config.MOTION_MASK_FILE))

    objects = []
    for inst in gt.instances:
        write_mask_png(inst.amodal_mask, os.path.join(directory, config.INSTANCE_AMODAL_PATTERN.format(inst.instance_id)))
        write_mask_png(inst.visible_mask,
                       os.path.join(directory, config.INSTANCE_VISIBLE_PATTERN.format(inst.instance_id)))
        objects.append({
            "id": inst.instance_id,
            "class": inst.class_label,
            "level": gt.graph.levels[inst.instance_id],
            "amodal_pixels": int(np.count_nonzero(inst.amodal_mask)),
            "visible_pixels": int(np.count_nonzero(inst.visible_mask)),
        })
    return {"frame": gt.frame, "num_levels": gt.amodal_stack.num_levels, "objects": objects}


def generate(scene: SceneSpec, out_dir: str, threads: Optional[int] = None) -> Dict[str, Any]:
    """
    Generate and write ground truth for every consecutive frame pair.

    Frame pairs run in parallel; results and the manifest are assembled in
    frame order, so output does not depend on the thread count.

    Returns:
        Dict: The manifest written to out_dir/manifest.json
    """
    os.makedirs(out_dir, exist_ok=True)

    def run(frame: int) -> Dict[str, Any]:
        return write_frame(generate_frame(scene, frame), out_dir)

    frames: List[Dict[str, Any]] = ordered_map(run, range(scene.frame_count - 1), threads)
    manifest: Dict[str, Any] = {
        "scene": scene.name,
        "width": scene.camera.width,
        "height": scene.camera.height,
        "frame_count": len(frames),
        "max_levels": max((f["num_levels"] for f in frames), default=1),
        "frames": frames,
    }
    manifest["occlusion_order_histogram"] = {str(k): v for k, v in occlusion_order_histogram(manifest).items()}

    path = os.path.join(out_dir, config.MANIFEST_FILE)
    atomic_write_bytes(path, (json.dumps(manifest, indent=2) + "\n").encode("utf-8"))
    logger.info(f"Generated {len(frames)} frame pairs of '{scene.name}' into {out_dir}")
    if config.ENABLE_STRUCTURED_LOGGING:
        structured_logger.log_gen_manifest(path=path, frame_count=len(frames), max_levels=manifest["max_levels"])
    return manifest


def read_manifest(directory: str) -> Optional[Dict[str, Any]]:
    path = os.path.join(directory, config.MANIFEST_FILE)
    if not os.path.exists(path):
        return None
    try:
        with open(path, "r", encoding="utf-8") as f:
            return json.load(f)
    except json.JSONDecodeError as e:
        raise FormatError(f"{path}: invalid JSON ({e})") from e


def frame_objects(manifest: Mapping[str, Any], frame: int) -> Sequence[Mapping[str, Any]]:
    for entry in manifest.get("frames", []):
        if entry["frame"] == frame:
            return entry["objects"]
    return []
