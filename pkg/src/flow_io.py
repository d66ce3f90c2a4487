"""Bit-exact file I/O for flow fields, masks and layered stacks.

Formats:
    .flo   Middlebury: float32 magic 202021.25, int32 width, int32 height,
           then interleaved (u, v) float32 pairs, row-major, little-endian.
    .png   Masks as 8-bit grayscale 0/255; id maps as 16-bit grayscale.
    .amfl  Container: b"AMFL", u32 version, u32 width, u32 height, u8 N,
           then per level a width*height byte mask and width*height*2 float32 flow.
"""

import io
import logging
import os
import re
import struct
from typing import Dict, List, Optional, Union

import numpy as np
from PIL import Image

import config
from src.errors import FormatError
from src.flow_types import FlowField, InstanceMask, InstanceMaskSet, LayeredFlowStack, LevelField
from src.structured_logger import StructuredLogger
from src.utils import atomic_write_bytes

logger = logging.getLogger(__name__)
structured_logger = StructuredLogger(__name__)

FLO_HEADER_BYTES = 12
AMFL_HEADER = struct.Struct("<4sIIIB")

_FRAME_RE = re.compile(r"^frame_(\d{6})(\.amfl)?$")

PathLike = Union[str, os.PathLike]


def _format_error(path: PathLike, reason: str, message: str) -> FormatError:
    if config.ENABLE_STRUCTURED_LOGGING:
        structured_logger.log_format_error(path=str(path), reason=reason)
    return FormatError(f"{path}: {message}")


# ==================== .flo ====================

def encode_flo(field: FlowField) -> bytes:
    """Serialize a flow field to .flo bytes."""
    header = np.array([config.FLO_MAGIC], "<f4").tobytes() + np.array(
        [field.width, field.height], "<i4"
    ).tobytes()
    return header + field.as_array().astype("<f4").tobytes()


def decode_flo(data: bytes, path: PathLike = "<bytes>") -> FlowField:
    """Parse .flo bytes.

    Raises:
        FormatError: Bad magic, nonpositive dimensions, wrong payload size or non-finite values
    """
    if len(data) < FLO_HEADER_BYTES:
        raise _format_error(path, "truncated", f"file has {len(data)} bytes, header needs {FLO_HEADER_BYTES}")
    magic = np.frombuffer(data, "<f4", count=1)[0]
    if magic != np.float32(config.FLO_MAGIC):
        raise _format_error(path, "bad_magic", "not a .flo file (magic mismatch)")
    width, height = (int(x) for x in np.frombuffer(data, "<i4", count=2, offset=4))
    if width <= 0 or height <= 0:
        raise _format_error(path, "bad_dimensions", f"nonpositive dimensions {width}x{height}")
    expected = FLO_HEADER_BYTES + width * height * 2 * 4
    if len(data) != expected:
        reason = "truncated" if len(data) < expected else "trailing_bytes"
        raise _format_error(path, reason, f"expected {expected} bytes for {width}x{height}, found {len(data)}")
    payload = np.frombuffer(data, "<f4", offset=FLO_HEADER_BYTES).reshape(height, width, 2)
    try:
        return FlowField.from_array(payload.astype(np.float32))
    except ValueError as e:
        raise _format_error(path, "non_finite", str(e)) from e


def read_flo(path: PathLike) -> FlowField:
    """Read a Middlebury .flo file."""
    with open(path, "rb") as handle:
        data = handle.read()
    field = decode_flo(data, path)
    if config.ENABLE_STRUCTURED_LOGGING:
        structured_logger.log_flow_read(path=str(path), width=field.width, height=field.height)
    return field


def write_flo(field: FlowField, path: PathLike) -> None:
    """Write a Middlebury .flo file atomically."""
    atomic_write_bytes(str(path), encode_flo(field))
    if config.ENABLE_STRUCTURED_LOGGING:
        structured_logger.log_flow_write(path=str(path), width=field.width, height=field.height)


# ==================== PNG rasters ====================

def _encode_png(image: Image.Image) -> bytes:
    buffer = io.BytesIO()
    image.save(buffer, format="PNG")
    return buffer.getvalue()


def write_mask_png(mask: np.ndarray, path: PathLike) -> None:
    """Write a binary mask as 8-bit grayscale 0/255."""
    raster = np.where(np.asarray(mask, bool), 255, 0).astype(np.uint8)
    atomic_write_bytes(str(path), _encode_png(Image.fromarray(raster)))


def read_mask_png(path: PathLike) -> np.ndarray:
    """Read a 0/255 mask PNG into a boolean raster."""
    with Image.open(path) as image:
        if image.mode != "L":
            raise _format_error(path, "bad_mask_mode", f"mask must be 8-bit grayscale, got mode {image.mode}")
        raster = np.array(image)
    if not np.isin(raster, (0, 255)).all():
        raise _format_error(path, "bad_mask_values", "mask values must be 0 or 255")
    return raster == 255


def write_id_map_png(ids: np.ndarray, path: PathLike) -> None:
    """Write an instance id raster as 16-bit grayscale (0 = background)."""
    ids = np.asarray(ids)
    if ids.min(initial=0) < 0 or ids.max(initial=0) > 0xFFFF:
        raise FormatError(f"{path}: instance ids must fit in 16 bits")
    atomic_write_bytes(str(path), _encode_png(Image.fromarray(ids.astype(np.uint16))))


def read_id_map_png(path: PathLike) -> np.ndarray:
    """Read a 16-bit (or 8-bit) grayscale id map into an int32 raster."""
    with Image.open(path) as image:
        if image.mode not in ("I;16", "I", "L"):
            raise _format_error(path, "bad_id_mode", f"id map must be grayscale, got mode {image.mode}")
        return np.array(image).astype(np.int32)


# ==================== Frames ====================

def frame_dir(root: PathLike, frame: int) -> str:
    return os.path.join(root, config.FRAME_DIR_PATTERN.format(frame))


def frame_path(root: PathLike, frame: int) -> str:
    """Frame directory, or the frame's .amfl container when only that exists."""
    directory = frame_dir(root, frame)
    container = directory + config.AMFL_SUFFIX
    if not os.path.isdir(directory) and os.path.isfile(container):
        return container
    return directory


def list_frames(root: PathLike) -> List[int]:
    """Sorted frame indices present as frame_%06d/ directories or frame_%06d.amfl files."""
    if not os.path.isdir(root):
        raise FormatError(f"{root}: not a directory")
    frames = set()
    for name in os.listdir(root):
        match = _FRAME_RE.match(name)
        if match is None:
            continue
        full = os.path.join(root, name)
        if (match.group(2) and os.path.isfile(full)) or (not match.group(2) and os.path.isdir(full)):
            frames.add(int(match.group(1)))
    return sorted(frames)


# ==================== Layered stacks ====================

def read_stack(path: PathLike) -> LayeredFlowStack:
    """Read a stack from a frame directory or an AMFL container."""
    if str(path).endswith(config.AMFL_SUFFIX):
        with open(path, "rb") as handle:
            stack = decode_amfl(handle.read(), path)
        layout = "amfl"
    else:
        stack = _read_stack_dir(path)
        layout = "directory"
    if config.ENABLE_STRUCTURED_LOGGING:
        structured_logger.log_stack_read(path=str(path), num_levels=stack.num_levels, layout=layout)
    return stack


def write_stack(stack: LayeredFlowStack, path: PathLike) -> None:
    """Write a stack as a frame directory, or as AMFL when path ends in .amfl."""
    if stack.num_levels > config.MAX_LEVELS:
        raise FormatError(f"{path}: {stack.num_levels} levels exceed the maximum of {config.MAX_LEVELS}")
    if str(path).endswith(config.AMFL_SUFFIX):
        atomic_write_bytes(str(path), encode_amfl(stack))
        layout = "amfl"
    else:
        os.makedirs(path, exist_ok=True)
        for n, level in enumerate(stack.levels):
            write_flo(level.flow, os.path.join(path, config.LEVEL_FLOW_PATTERN.format(n)))
            write_mask_png(level.mask, os.path.join(path, config.LEVEL_MASK_PATTERN.format(n)))
            if level.visible is not None:
                write_mask_png(level.visible, os.path.join(path, config.LEVEL_VISIBLE_PATTERN.format(n)))
        layout = "directory"
    if config.ENABLE_STRUCTURED_LOGGING:
        structured_logger.log_stack_write(path=str(path), num_levels=stack.num_levels, layout=layout)


def _read_stack_dir(path: PathLike) -> LayeredFlowStack:
    if not os.path.isdir(path):
        raise _format_error(path, "missing_frame", "stack directory not found")
    flow_re = re.compile(r"^level_(\d+)\.flo$")
    indices = sorted(int(m.group(1)) for m in map(flow_re.match, os.listdir(path)) if m)
    if not indices:
        raise _format_error(path, "no_levels", "no level_%d.flo files")
    if indices != list(range(len(indices))):
        raise _format_error(path, "level_gap", f"levels must be contiguous from 0, found {indices}")
    if len(indices) > config.MAX_LEVELS:
        raise _format_error(path, "too_many_levels", f"{len(indices)} levels exceed the maximum of {config.MAX_LEVELS}")

    levels = []
    for n in indices:
        flow = read_flo(os.path.join(path, config.LEVEL_FLOW_PATTERN.format(n)))
        mask_path = os.path.join(path, config.LEVEL_MASK_PATTERN.format(n))
        if os.path.exists(mask_path):
            mask = read_mask_png(mask_path)
        elif n == 0:
            # Background is amodally present everywhere
            mask = np.ones(flow.shape, bool)
        else:
            raise _format_error(mask_path, "missing_mask", f"level {n} has flow but no mask")
        visible_path = os.path.join(path, config.LEVEL_VISIBLE_PATTERN.format(n))
        visible = read_mask_png(visible_path) if os.path.exists(visible_path) else None
        if mask.shape != flow.shape or (visible is not None and visible.shape != flow.shape):
            raise _format_error(path, "dimension_mismatch", f"level {n} mask and flow dimensions differ")
        levels.append(LevelField(mask, flow, visible))

    if len({level.flow.shape for level in levels}) > 1:
        raise _format_error(path, "dimension_mismatch", "levels have different dimensions")
    return LayeredFlowStack(tuple(levels))


def encode_amfl(stack: LayeredFlowStack) -> bytes:
    """Serialize a stack to AMFL container bytes (visible masks are not stored)."""
    if stack.num_levels > config.MAX_LEVELS:
        raise FormatError(f"{stack.num_levels} levels exceed the maximum of {config.MAX_LEVELS}")
    parts = [AMFL_HEADER.pack(config.AMFL_MAGIC, config.AMFL_VERSION, stack.width, stack.height, stack.num_levels)]
    for level in stack.levels:
        parts.append(level.mask.astype(np.uint8).tobytes())
        parts.append(level.flow.as_array().astype("<f4").tobytes())
    return b"".join(parts)


def decode_amfl(data: bytes, path: PathLike = "<bytes>") -> LayeredFlowStack:
    """Parse AMFL container bytes."""
    if len(data) < AMFL_HEADER.size:
        raise _format_error(path, "truncated", "AMFL header truncated")
    magic, version, width, height, num_levels = AMFL_HEADER.unpack_from(data)
    if magic != config.AMFL_MAGIC:
        raise _format_error(path, "bad_magic", "not an AMFL container")
    if version != config.AMFL_VERSION:
        raise _format_error(path, "bad_version", f"unsupported AMFL version {version}")
    if width == 0 or height == 0:
        raise _format_error(path, "bad_dimensions", f"nonpositive dimensions {width}x{height}")
    if num_levels < 1 or num_levels > config.MAX_LEVELS:
        raise _format_error(path, "too_many_levels", f"level count {num_levels} outside 1..{config.MAX_LEVELS}")
    pixels = width * height
    level_bytes = pixels + pixels * 2 * 4
    expected = AMFL_HEADER.size + num_levels * level_bytes
    if len(data) != expected:
        raise _format_error(path, "truncated", f"expected {expected} bytes, found {len(data)}")

    levels = []
    offset = AMFL_HEADER.size
    for _ in range(num_levels):
        mask = np.frombuffer(data, np.uint8, count=pixels, offset=offset).reshape(height, width)
        if not np.isin(mask, (0, 1)).all():
            raise _format_error(path, "bad_mask_values", "AMFL mask bytes must be 0 or 1")
        offset += pixels
        flow = np.frombuffer(data, "<f4", count=pixels * 2, offset=offset).reshape(height, width, 2)
        offset += pixels * 2 * 4
        try:
            levels.append(LevelField(mask.astype(bool), FlowField.from_array(flow.astype(np.float32))))
        except ValueError as e:
            raise _format_error(path, "non_finite", str(e)) from e
    return LayeredFlowStack(tuple(levels))


# ==================== Instance masks ====================

def read_instance_masks(directory: PathLike, pattern: str) -> Dict[int, np.ndarray]:
    """Read every per-instance mask named like pattern (e.g. inst_{}_amodal.png)."""
    regex = re.compile("^" + re.escape(pattern).replace(r"\{\}", r"(\d+)") + "$")
    masks: Dict[int, np.ndarray] = {}
    if not os.path.isdir(directory):
        return masks
    for name in sorted(os.listdir(directory)):
        match = regex.match(name)
        if match:
            masks[int(match.group(1))] = read_mask_png(os.path.join(directory, name))
    return masks


def read_optional_flo(path: PathLike) -> Optional[FlowField]:
    return read_flo(path) if os.path.exists(path) else None


def read_segmentation(seg_frame_dir: PathLike, amodal_frame_dir: Optional[PathLike] = None,
                      labels: Optional[Dict[int, str]] = None) -> InstanceMaskSet:
    """
    Build the instances of one frame from its id map and amodal masks.

    Visible masks come from ids.png; amodal masks from inst_%d_amodal.png
    (falling back to the visible mask). Instances with no pixels are skipped.
    """
    ids_path = os.path.join(seg_frame_dir, config.ID_MAP_FILE)
    if not os.path.exists(ids_path):
        raise _format_error(ids_path, "missing_segmentation", "id map not found")
    ids = read_id_map_png(ids_path)
    amodal = read_instance_masks(amodal_frame_dir or seg_frame_dir, config.INSTANCE_AMODAL_PATTERN)

    instances = []
    for instance_id in sorted(set(amodal) | {int(i) for i in np.unique(ids) if i != 0}):
        visible = ids == instance_id
        if instance_id in amodal and amodal[instance_id].shape != ids.shape:
            raise _format_error(seg_frame_dir, "dimension_mismatch", f"instance {instance_id} mask size differs")
        mask = amodal[instance_id] | visible if instance_id in amodal else visible
        if not mask.any():
            continue
        instances.append(InstanceMask(instance_id, (labels or {}).get(instance_id, "object"), mask, visible))
    return InstanceMaskSet(tuple(instances))
