"""Domain types for layered amodal optical flow."""

from dataclasses import dataclass, field
from typing import Dict, FrozenSet, Iterator, List, Optional, Tuple

import numpy as np

from src.errors import ShapeError
from src.utils import validate_same_shape


@dataclass(frozen=True, eq=False)
class FlowField:
    """Dense 2-channel displacement raster.

    Attributes:
        u: Horizontal displacement in pixels, float32 array of shape (H, W)
        v: Vertical displacement in pixels, float32 array of shape (H, W)
    """

    u: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        u = np.ascontiguousarray(self.u, dtype=np.float32)
        v = np.ascontiguousarray(self.v, dtype=np.float32)
        if u.ndim != 2 or u.shape != v.shape:
            raise ShapeError(f"u and v must be equal 2-D rasters, got {u.shape} and {v.shape}")
        if u.shape[0] <= 0 or u.shape[1] <= 0:
            raise ShapeError(f"Flow dimensions must be positive, got {u.shape[1]}x{u.shape[0]}")
        if not (np.isfinite(u).all() and np.isfinite(v).all()):
            raise ValueError("Flow field contains non-finite values")
        u.setflags(write=False)
        v.setflags(write=False)
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "v", v)

    @property
    def width(self) -> int:
        return self.u.shape[1]

    @property
    def height(self) -> int:
        return self.u.shape[0]

    @property
    def shape(self) -> Tuple[int, int]:
        """(height, width)"""
        return self.u.shape

    @classmethod
    def zeros(cls, width: int, height: int) -> "FlowField":
        return cls(np.zeros((height, width), np.float32), np.zeros((height, width), np.float32))

    @classmethod
    def constant(cls, width: int, height: int, u: float, v: float) -> "FlowField":
        return cls(np.full((height, width), u, np.float32), np.full((height, width), v, np.float32))

    @classmethod
    def from_array(cls, array: np.ndarray) -> "FlowField":
        """Build from an (H, W, 2) array of interleaved (u, v)."""
        array = np.asarray(array)
        if array.ndim != 3 or array.shape[2] != 2:
            raise ShapeError(f"Expected (H, W, 2) flow array, got {array.shape}")
        return cls(array[..., 0], array[..., 1])

    def as_array(self) -> np.ndarray:
        """Return the interleaved (H, W, 2) float32 array."""
        return np.stack([self.u, self.v], axis=-1)

    def equals(self, other: "FlowField") -> bool:
        """Bit-level equality of both channels."""
        return (
            self.shape == other.shape
            and self.u.tobytes() == other.u.tobytes()
            and self.v.tobytes() == other.v.tobytes()
        )


def _as_mask(mask: np.ndarray) -> np.ndarray:
    mask = np.asarray(mask)
    if mask.dtype != bool:
        values = np.unique(mask)
        if not np.isin(values, (0, 1)).all():
            raise ValueError(f"Mask values must be 0 or 1, found {values[:5].tolist()}")
        mask = mask.astype(bool)
    mask = np.ascontiguousarray(mask)
    mask.setflags(write=False)
    return mask


@dataclass(frozen=True, eq=False)
class LevelField:
    """One occlusion level: the triplet <i, u, v> per pixel.

    Attributes:
        mask: Boolean raster, True where the pixel belongs to the level
        flow: Displacement of the level
        visible: Optional boolean raster of the visible part of the mask
    """

    mask: np.ndarray
    flow: FlowField
    visible: Optional[np.ndarray] = None

    def __post_init__(self):
        mask = _as_mask(self.mask)
        validate_same_shape(mask, self.flow.u, names=["mask", "flow"])
        object.__setattr__(self, "mask", mask)
        if self.visible is not None:
            visible = _as_mask(self.visible)
            validate_same_shape(mask, visible, names=["mask", "visible"])
            if (visible & ~mask).any():
                raise ValueError("Visible mask must be a subset of the level mask")
            object.__setattr__(self, "visible", visible)

    @classmethod
    def full(cls, flow: FlowField) -> "LevelField":
        """Level covering every pixel (background convention)."""
        return cls(np.ones(flow.shape, bool), flow)

    def equals(self, other: "LevelField") -> bool:
        if not (np.array_equal(self.mask, other.mask) and self.flow.equals(other.flow)):
            return False
        if self.visible is None or other.visible is None:
            return self.visible is None and other.visible is None
        return np.array_equal(self.visible, other.visible)


@dataclass(frozen=True, eq=False)
class LayeredFlowStack:
    """Motion field maps M_0 ... M_{N-1}, index 0 = background."""

    levels: Tuple[LevelField, ...]

    def __post_init__(self):
        levels = tuple(self.levels)
        if not levels:
            raise ShapeError("A stack needs at least one level")
        shapes = {level.flow.shape for level in levels}
        if len(shapes) > 1:
            raise ShapeError(f"All levels must share dimensions, found {sorted(shapes)}")
        object.__setattr__(self, "levels", levels)

    @property
    def num_levels(self) -> int:
        return len(self.levels)

    @property
    def shape(self) -> Tuple[int, int]:
        return self.levels[0].flow.shape

    @property
    def width(self) -> int:
        return self.shape[1]

    @property
    def height(self) -> int:
        return self.shape[0]

    def __iter__(self) -> Iterator[LevelField]:
        return iter(self.levels)

    def __getitem__(self, index: int) -> LevelField:
        return self.levels[index]

    def equals(self, other: "LayeredFlowStack") -> bool:
        return self.num_levels == other.num_levels and all(
            a.equals(b) for a, b in zip(self.levels, other.levels)
        )


@dataclass(frozen=True, eq=False)
class InstanceMask:
    """Amodal and visible extent of one object."""

    instance_id: int
    class_label: str
    amodal_mask: np.ndarray
    visible_mask: np.ndarray
    mean_depth: Optional[float] = None

    def __post_init__(self):
        amodal = _as_mask(self.amodal_mask)
        visible = _as_mask(self.visible_mask)
        validate_same_shape(amodal, visible, names=["amodal", "visible"])
        if (visible & ~amodal).any():
            raise ValueError(f"Instance {self.instance_id}: visible mask is not inside the amodal mask")
        object.__setattr__(self, "amodal_mask", amodal)
        object.__setattr__(self, "visible_mask", visible)

    @property
    def occluded_mask(self) -> np.ndarray:
        return self.amodal_mask & ~self.visible_mask


@dataclass(frozen=True, eq=False)
class InstanceMaskSet:
    """All objects of one frame; visible masks are pairwise disjoint."""

    instances: Tuple[InstanceMask, ...]

    def __post_init__(self):
        instances = tuple(self.instances)
        ids = [inst.instance_id for inst in instances]
        if len(set(ids)) != len(ids):
            raise ValueError(f"Instance ids must be unique, got {ids}")
        if instances:
            validate_same_shape(*(inst.amodal_mask for inst in instances), names=[str(i) for i in ids])
            coverage = np.zeros(instances[0].amodal_mask.shape, np.int32)
            for inst in instances:
                coverage += inst.visible_mask
            if (coverage > 1).any():
                raise ValueError("Visible masks of distinct instances overlap")
        object.__setattr__(self, "instances", instances)

    def __iter__(self) -> Iterator[InstanceMask]:
        return iter(self.instances)

    def __len__(self) -> int:
        return len(self.instances)

    @property
    def ids(self) -> List[int]:
        return [inst.instance_id for inst in self.instances]

    def by_id(self) -> Dict[int, InstanceMask]:
        return {inst.instance_id: inst for inst in self.instances}


@dataclass(frozen=True)
class OcclusionGraph:
    """Relative occlusion order of the instances of one frame.

    Attributes:
        nodes: Instance ids
        edges: (front, behind) pairs, front occludes behind
        levels: Map instance id -> level >= 1
    """

    nodes: Tuple[int, ...]
    edges: FrozenSet[Tuple[int, int]]
    levels: Dict[int, int] = field(default_factory=dict)

    @property
    def num_levels(self) -> int:
        """Stack size N including the background level."""
        return max(self.levels.values(), default=0) + 1

    def members(self, level: int) -> List[int]:
        """Instance ids assigned to a level, ascending."""
        return sorted(i for i, lv in self.levels.items() if lv == level)

    def occluders(self, instance_id: int) -> List[int]:
        return sorted(front for front, behind in self.edges if behind == instance_id)

