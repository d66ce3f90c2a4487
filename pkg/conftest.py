"""Shared pytest fixtures."""

import logging

import numpy as np
import pytest

from src.flow_types import FlowField, LayeredFlowStack, LevelField


@pytest.fixture(autouse=True)
def log_dir(tmp_path, monkeypatch):
    """Keep log files of every test inside its temporary directory."""
    path = tmp_path / "logs"
    monkeypatch.setenv("AMFLOW_LOG_DIR", str(path))
    monkeypatch.delenv("AMFLOW_LOG", raising=False)
    return path


@pytest.fixture(autouse=True)
def restore_root_logging():
    """Undo setup_logging so later tests see the default root logger."""
    root = logging.getLogger()
    level = root.level
    yield
    for handler in list(root.handlers):
        if type(handler) in (logging.FileHandler, logging.StreamHandler):
            root.removeHandler(handler)
            handler.close()
    root.setLevel(level)


@pytest.fixture
def rng():
    return np.random.default_rng(20240917)


def box_mask(height, width, top, left, bottom, right):
    """Boolean raster with rows top..bottom-1 and columns left..right-1 set."""
    mask = np.zeros((height, width), bool)
    mask[top:bottom, left:right] = True
    return mask


def two_level_stack(height=6, width=8, flow0=(0.0, 0.0), flow1=(1.5, -0.5)):
    """Background plus one object level covering the right half."""
    mask = box_mask(height, width, 0, 0, height, width)
    mask[:, : width // 2] = False
    level0 = LevelField.full(FlowField.constant(width, height, *flow0))
    level1 = LevelField(mask, FlowField(np.where(mask, flow1[0], 0.0), np.where(mask, flow1[1], 0.0)))
    return LayeredFlowStack((level0, level1))
