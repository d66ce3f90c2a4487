"""Per-pixel flow arithmetic: endpoint error, forward mask warping, level decomposition."""

from typing import Tuple

import numpy as np

from src.flow_types import FlowField, LevelField
from src.utils import validate_same_shape


def endpoint_error(pred: FlowField, gt: FlowField) -> np.ndarray:
    """
    Euclidean norm of the displacement difference at every pixel.

    Args:
        pred: Predicted flow
        gt: Ground-truth flow

    Returns:
        np.ndarray: float64 raster of shape (H, W), nonnegative

    Raises:
        ShapeError: If dimensions differ
    """
    validate_same_shape(pred.u, gt.u, names=["pred", "gt"])
    du = pred.u.astype(np.float64) - gt.u.astype(np.float64)
    dv = pred.v.astype(np.float64) - gt.v.astype(np.float64)
    return np.hypot(du, dv)


def warp_mask_forward(mask: np.ndarray, flow: FlowField) -> np.ndarray:
    """
    Splat every set pixel to its nearest destination pixel.

    Pixel p moves to round(p + flow(p)) with halves rounded up; destinations
    outside the image are dropped; no hole filling.

    Args:
        mask: Binary raster (H, W)
        flow: Flow of the same dimensions

    Returns:
        np.ndarray: Boolean raster (H, W)
    """
    mask = np.asarray(mask, bool)
    validate_same_shape(mask, flow.u, names=["mask", "flow"])
    height, width = mask.shape
    ys, xs = np.nonzero(mask)
    dest_x = np.floor(xs + flow.u[ys, xs].astype(np.float64) + 0.5).astype(np.int64)
    dest_y = np.floor(ys + flow.v[ys, xs].astype(np.float64) + 0.5).astype(np.int64)
    inside = (dest_x >= 0) & (dest_x < width) & (dest_y >= 0) & (dest_y < height)
    warped = np.zeros_like(mask)
    warped[dest_y[inside], dest_x[inside]] = True
    return warped


def split_visible_occluded(level: LevelField) -> Tuple[np.ndarray, np.ndarray]:
    """
    Decompose a level mask into its visible and occluded parts.

    Without a visible mask the whole level counts as visible.

    Returns:
        Tuple[np.ndarray, np.ndarray]: (visible, occluded) boolean rasters
    """
    if level.visible is None:
        return level.mask.copy(), np.zeros_like(level.mask)
    return level.visible.copy(), level.mask & ~level.visible
