"""Flow colorization with the Middlebury color wheel and layered composites."""

import io
from typing import Optional

import numpy as np
from PIL import Image

from src.flow_types import FlowField, LayeredFlowStack
from src.utils import atomic_write_bytes

# Hue segment lengths: red-yellow, yellow-green, green-cyan, cyan-blue, blue-magenta, magenta-red
_SEGMENTS = (15, 6, 4, 11, 13, 6)


def make_colorwheel() -> np.ndarray:
    """Return the (55, 3) Middlebury color wheel with values in [0, 255]."""
    ry, yg, gc, cb, bm, mr = _SEGMENTS
    wheel = np.zeros((sum(_SEGMENTS), 3))
    col = 0
    wheel[col:col + ry, 0] = 255
    wheel[col:col + ry, 1] = np.floor(255 * np.arange(ry) / ry)
    col += ry
    wheel[col:col + yg, 0] = 255 - np.floor(255 * np.arange(yg) / yg)
    wheel[col:col + yg, 1] = 255
    col += yg
    wheel[col:col + gc, 1] = 255
    wheel[col:col + gc, 2] = np.floor(255 * np.arange(gc) / gc)
    col += gc
    wheel[col:col + cb, 1] = 255 - np.floor(255 * np.arange(cb) / cb)
    wheel[col:col + cb, 2] = 255
    col += cb
    wheel[col:col + bm, 2] = 255
    wheel[col:col + bm, 0] = np.floor(255 * np.arange(bm) / bm)
    col += bm
    wheel[col:col + mr, 2] = 255 - np.floor(255 * np.arange(mr) / mr)
    wheel[col:col + mr, 0] = 255
    return wheel


def flow_to_color(flow: FlowField, max_radius: Optional[float] = None) -> np.ndarray:
    """
    Colorize a flow field.

    Hue encodes direction, saturation encodes magnitude relative to max_radius;
    zero flow is white.

    Args:
        flow: Flow to colorize
        max_radius: Normalization magnitude (default: largest magnitude in the field)

    Returns:
        np.ndarray: uint8 RGB raster (H, W, 3)
    """
    u = flow.u.astype(np.float64)
    v = flow.v.astype(np.float64)
    if max_radius is None:
        max_radius = float(np.hypot(u, v).max())
    scale = max_radius if max_radius > 0 else 1.0
    u, v = u / scale, v / scale

    wheel = make_colorwheel()
    ncols = wheel.shape[0]
    rad = np.hypot(u, v)
    angle = np.arctan2(-v, -u) / np.pi
    fk = (angle + 1) / 2 * (ncols - 1)
    k0 = np.floor(fk).astype(np.int64)
    k1 = (k0 + 1) % ncols
    f = fk - k0

    image = np.zeros(u.shape + (3,), np.uint8)
    for channel in range(3):
        col0 = wheel[k0, channel] / 255.0
        col1 = wheel[k1, channel] / 255.0
        col = (1 - f) * col0 + f * col1
        inside = rad <= 1
        col[inside] = 1 - rad[inside] * (1 - col[inside])
        col[~inside] = col[~inside] * 0.75
        image[..., channel] = np.floor(255 * col + 0.5).astype(np.uint8)
    return image


def displayed_flow(stack: LayeredFlowStack) -> FlowField:
    """Flow seen after superimposing levels 0..N-1 in order, each over its mask."""
    u = stack.levels[0].flow.u.copy()
    v = stack.levels[0].flow.v.copy()
    for level in stack.levels[1:]:
        u[level.mask] = level.flow.u[level.mask]
        v[level.mask] = level.flow.v[level.mask]
    return FlowField(u, v)


def composite_visualization(stack: LayeredFlowStack) -> np.ndarray:
    """
    Superimpose colorized levels M_0, M_1, ..., M_{N-1}.

    Level 0 is drawn over the whole frame; each further level overwrites the
    pixels of its mask. All levels share one normalization: the largest
    magnitude that ends up displayed.

    Returns:
        np.ndarray: uint8 RGB raster (H, W, 3)
    """
    return flow_to_color(displayed_flow(stack))


def write_png(image: np.ndarray, path: str) -> None:
    """Write an RGB raster as PNG."""
    buffer = io.BytesIO()
    Image.fromarray(np.asarray(image, np.uint8)).save(buffer, format="PNG")
    atomic_write_bytes(path, buffer.getvalue())
