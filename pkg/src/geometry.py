"""Pinhole camera, rigid poses and analytic ray-primitive intersection.

Camera axes: x right, y down, z forward. Rays pass through pixel centers
(p + 0.5) and are scaled so their z component is 1, making the ray
parameter at a hit equal to its z-depth in the camera frame.
"""

from dataclasses import dataclass, field
from typing import Any, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.spatial.transform import Rotation

import config
from src.errors import SceneError


@dataclass(frozen=True)
class CameraModel:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise SceneError(f"Focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if self.width <= 0 or self.height <= 0:
            raise SceneError(f"Resolution must be positive, got {self.width}x{self.height}")
        if not (0 < self.cx < self.width and 0 < self.cy < self.height):
            raise SceneError(f"Principal point ({self.cx}, {self.cy}) outside the image")

    @property
    def shape(self) -> Tuple[int, int]:
        return self.height, self.width

    def pixel_centers(self) -> Tuple[np.ndarray, np.ndarray]:
        """Continuous (x, y) coordinates of all pixel centers, each (H, W)."""
        ys, xs = np.mgrid[0:self.height, 0:self.width].astype(np.float64)
        return xs + 0.5, ys + 0.5

    def rays(self) -> np.ndarray:
        """Camera-frame ray directions with z = 1, shape (H, W, 3)."""
        px, py = self.pixel_centers()
        return np.stack([(px - self.cx) / self.fx, (py - self.cy) / self.fy, np.ones_like(px)], axis=-1)

    def project(self, points: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Continuous pixel coordinates of camera-frame points (..., 3); z must be positive."""
        z = points[..., 2]
        return self.fx * points[..., 0] / z + self.cx, self.fy * points[..., 1] / z + self.cy

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "CameraModel":
        try:
            return cls(
                fx=float(data["fx"]),
                fy=float(data["fy"]),
                cx=float(data["cx"]),
                cy=float(data["cy"]),
                width=int(data["width"]),
                height=int(data["height"]),
            )
        except (KeyError, TypeError, ValueError) as e:
            raise SceneError(f"Invalid camera: {e}") from e


@dataclass(frozen=True, eq=False)
class RigidPose:
    """Rigid transform local -> parent: x_parent = R x_local + t.

    Attributes:
        translation: (x, y, z) in meters
        rotation: Unit quaternion (w, x, y, z)
    """

    translation: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    rotation: Tuple[float, float, float, float] = (1.0, 0.0, 0.0, 0.0)
    _matrix: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        translation = tuple(float(c) for c in self.translation)
        rotation = tuple(float(c) for c in self.rotation)
        if len(translation) != 3 or len(rotation) != 4:
            raise SceneError(f"Pose needs 3 translation and 4 quaternion components, got {translation}, {rotation}")
        norm = float(np.linalg.norm(rotation))
        if abs(norm - 1.0) > config.QUATERNION_TOLERANCE:
            raise SceneError(f"Quaternion {rotation} is not unit length (norm {norm:.12f})")
        w, x, y, z = rotation
        object.__setattr__(self, "translation", translation)
        object.__setattr__(self, "rotation", rotation)
        object.__setattr__(self, "_matrix", Rotation.from_quat([x, y, z, w]).as_matrix())

    @property
    def matrix(self) -> np.ndarray:
        return self._matrix

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Map local points (..., 3) into the parent frame."""
        return points @ self._matrix.T + np.asarray(self.translation)

    def apply_inverse(self, points: np.ndarray) -> np.ndarray:
        """Map parent-frame points (..., 3) into the local frame."""
        return (points - np.asarray(self.translation)) @ self._matrix

    def rotate(self, vectors: np.ndarray) -> np.ndarray:
        return vectors @ self._matrix.T

    def rotate_inverse(self, vectors: np.ndarray) -> np.ndarray:
        return vectors @ self._matrix

    def relative_to(self, parent: "RigidPose") -> "RigidPose":
        """This pose expressed in the local frame of parent (parent^-1 * self)."""
        rotation = _rotation(parent).inv() * _rotation(self)
        translation = parent.apply_inverse(np.asarray(self.translation))
        return RigidPose(tuple(translation), _quaternion(rotation))

    def equals(self, other: "RigidPose") -> bool:
        return self.translation == other.translation and self.rotation == other.rotation

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "RigidPose":
        try:
            return cls(tuple(data.get("translation", (0, 0, 0))), tuple(data.get("rotation", (1, 0, 0, 0))))
        except (AttributeError, TypeError, ValueError) as e:
            raise SceneError(f"Invalid pose {data!r}: {e}") from e


def _rotation(pose: RigidPose) -> Rotation:
    w, x, y, z = pose.rotation
    return Rotation.from_quat([x, y, z, w])


def _quaternion(rotation: Rotation) -> Tuple[float, float, float, float]:
    x, y, z, w = rotation.as_quat()
    norm = float(np.sqrt(w * w + x * x + y * y + z * z))
    return (w / norm, x / norm, y / norm, z / norm)


def trajectory_poses(start: RigidPose, step_translation: Sequence[float], step_rotvec: Sequence[float],
                     count: int) -> Tuple[RigidPose, ...]:
    """
    Expand a constant-velocity trajectory.

    Pose f has translation start + f * step_translation and rotation
    exp(f * step_rotvec) applied after the start rotation (parent frame).
    """
    step_t = np.asarray(step_translation, np.float64)
    step_r = np.asarray(step_rotvec, np.float64)
    if step_t.shape != (3,) or step_r.shape != (3,):
        raise SceneError("Trajectory steps need three components")
    poses = []
    for f in range(count):
        translation = np.asarray(start.translation) + f * step_t
        rotation = Rotation.from_rotvec(f * step_r) * _rotation(start)
        poses.append(RigidPose(tuple(translation), _quaternion(rotation)))
    return tuple(poses)


# ==================== Primitives ====================

@dataclass(frozen=True)
class Box:
    """Axis-aligned box in local coordinates, centered at the origin."""

    width: float
    height: float
    depth: float

    @property
    def extents(self) -> Tuple[float, ...]:
        return (self.width, self.height, self.depth)

    def intersect(self, origin: np.ndarray, directions: np.ndarray) -> np.ndarray:
        half = np.asarray(self.extents) / 2.0
        t_near = np.full(directions.shape[:-1], -np.inf)
        t_far = np.full(directions.shape[:-1], np.inf)
        for axis in range(3):
            d = directions[..., axis]
            o = origin[axis]
            parallel = np.abs(d) < config.RAY_EPSILON
            safe = np.where(parallel, 1.0, d)
            t1 = (-half[axis] - o) / safe
            t2 = (half[axis] - o) / safe
            lo = np.where(parallel, -np.inf, np.minimum(t1, t2))
            hi = np.where(parallel, np.inf, np.maximum(t1, t2))
            if abs(o) > half[axis]:
                # Parallel rays starting outside this slab never enter it
                hi = np.where(parallel, -np.inf, hi)
            t_near = np.maximum(t_near, lo)
            t_far = np.minimum(t_far, hi)
        hit = (t_near <= t_far) & (t_far > config.RAY_EPSILON)
        t = np.where(t_near > config.RAY_EPSILON, t_near, t_far)
        return np.where(hit, t, np.inf)


@dataclass(frozen=True)
class Sphere:
    radius: float

    @property
    def extents(self) -> Tuple[float, ...]:
        return (self.radius,)

    def intersect(self, origin: np.ndarray, directions: np.ndarray) -> np.ndarray:
        a = np.sum(directions * directions, axis=-1)
        b = 2.0 * (directions @ origin)
        c = float(origin @ origin) - self.radius ** 2
        disc = b * b - 4 * a * c
        root = np.sqrt(np.maximum(disc, 0.0))
        t0 = (-b - root) / (2 * a)
        t1 = (-b + root) / (2 * a)
        t = np.where(t0 > config.RAY_EPSILON, t0, np.where(t1 > config.RAY_EPSILON, t1, np.inf))
        return np.where(disc >= 0, t, np.inf)


@dataclass(frozen=True)
class Quad:
    """Two-sided rectangle in the local z = 0 plane."""

    width: float
    height: float

    @property
    def extents(self) -> Tuple[float, ...]:
        return (self.width, self.height)

    def intersect(self, origin: np.ndarray, directions: np.ndarray) -> np.ndarray:
        dz = directions[..., 2]
        facing = np.abs(dz) >= config.RAY_EPSILON
        t = np.where(facing, -origin[2] / np.where(facing, dz, 1.0), np.inf)
        x = origin[0] + t * directions[..., 0]
        y = origin[1] + t * directions[..., 1]
        inside = facing & (t > config.RAY_EPSILON) & (np.abs(x) <= self.width / 2) & (np.abs(y) <= self.height / 2)
        return np.where(inside, t, np.inf)


Shape = Union[Box, Sphere, Quad]


def parse_shape(data: Mapping[str, Any]) -> Shape:
    """Build a primitive from {"type": "box"|"sphere"|"quad", ...extents}."""
    try:
        kind = data["type"]
        if kind == "box":
            shape: Shape = Box(float(data["width"]), float(data["height"]), float(data["depth"]))
        elif kind == "sphere":
            shape = Sphere(float(data["radius"]))
        elif kind == "quad":
            shape = Quad(float(data["width"]), float(data["height"]))
        else:
            raise SceneError(f"Unknown shape type '{kind}'")
    except (KeyError, TypeError, ValueError) as e:
        raise SceneError(f"Invalid shape {data!r}: {e}") from e
    validate_shape(shape)
    return shape


def validate_shape(shape: Shape) -> None:
    if any(not extent > 0 for extent in shape.extents):
        raise SceneError(f"Degenerate {type(shape).__name__.lower()}: extents {shape.extents} must be positive")


def intersect_in_camera(shape: Shape, pose_in_camera: RigidPose, rays: np.ndarray) -> np.ndarray:
    """Ray parameter (= camera z-depth) of the nearest hit for camera rays from the origin, inf on miss."""
    validate_shape(shape)
    origin = pose_in_camera.apply_inverse(np.zeros(3))
    directions = pose_in_camera.rotate_inverse(rays)
    return shape.intersect(origin, directions)


def ground_plane_depth(camera: CameraModel, cam_pose: RigidPose, ground_height: Optional[float],
                       far_distance: float) -> np.ndarray:
    """
    Depth of the static background: the ground plane y = ground_height
    (world y points down) capped by a far plane at far_distance.
    """
    rays = camera.rays()
    depth = np.full(camera.shape, float(far_distance))
    if ground_height is None:
        return depth
    world_dirs = cam_pose.rotate(rays)
    dy = world_dirs[..., 1]
    oy = cam_pose.translation[1]
    down = dy > config.RAY_EPSILON if ground_height > oy else dy < -config.RAY_EPSILON
    t = np.where(down, (ground_height - oy) / np.where(down, dy, 1.0), np.inf)
    t = np.where(t > config.RAY_EPSILON, t, np.inf)
    return np.minimum(depth, t)
