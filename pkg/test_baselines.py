"""Tests for the infilling baselines."""

import logging
import os

import numpy as np
import pytest

from conftest import box_mask
from src.baselines import METHODS, InfillInput, infill_mean, infill_near_boundary, load_infill_input, zero_baseline
from src.errors import FormatError, ParameterError
from src.flow_types import FlowField, InstanceMask, InstanceMaskSet, OcclusionGraph
from src.metrics import evaluate_stack
from src.stratify import stratify
from src.synthgen import generate, generate_frame, parse_scene

HEIGHT, WIDTH = 6, 8


def _occluded_scene():
    """Object 1 (cols 2-7) half hidden by object 2 (cols 5-7) in front."""
    back = box_mask(HEIGHT, WIDTH, 0, 2, HEIGHT, WIDTH)
    front = box_mask(HEIGHT, WIDTH, 0, 5, HEIGHT, WIDTH)
    rows, cols = np.mgrid[0:HEIGHT, 0:WIDTH].astype(np.float32)
    u = np.where(front, 9.0, np.where(back, cols, 0.5)).astype(np.float32)
    v = np.where(front, 9.0, np.where(back, rows, 0.0)).astype(np.float32)
    instances = InstanceMaskSet((
        InstanceMask(1, "car", back, back & ~front),
        InstanceMask(2, "truck", front, front),
    ))
    winner = np.where(front, 2, np.where(back, 1, 0))
    return InfillInput(
        modal_flow=FlowField(u, v),
        instances=instances,
        graph=stratify(instances, winner),
        background_flow=FlowField.constant(WIDTH, HEIGHT, 0.5, 0.0),
    )


def test_levels_follow_the_occlusion_order():
    data = _occluded_scene()
    assert data.graph.levels == {2: 1, 1: 2}
    stack = infill_near_boundary(data)
    assert stack.num_levels == 3
    assert np.all(stack.levels[0].mask)
    assert np.all(stack.levels[0].flow.u == 0.5)
    assert np.array_equal(stack.levels[1].mask, data.instances.by_id()[2].amodal_mask)
    assert np.array_equal(stack.levels[2].mask, data.instances.by_id()[1].amodal_mask)
    assert np.all(stack.levels[1].flow.u[stack.levels[1].mask] == 9.0)


def test_near_boundary_copies_the_closest_visible_flow():
    stack = infill_near_boundary(_occluded_scene())
    level = stack.levels[2]
    rows = np.arange(HEIGHT, dtype=np.float32)
    # visible part keeps the modal flow
    assert np.array_equal(level.flow.u[:, 2:5], np.tile([2.0, 3.0, 4.0], (HEIGHT, 1)))
    # occluded columns take column 4 of the same row
    assert np.all(level.flow.u[:, 5:] == 4.0)
    assert np.array_equal(level.flow.v[:, 5:], np.repeat(rows[:, None], 3, axis=1))
    assert np.all(level.flow.u[:, :2] == 0.0)


def test_near_boundary_breaks_distance_ties_by_row_then_column():
    amodal = np.ones((5, 5), bool)
    visible = np.zeros((5, 5), bool)
    visible[1, 3] = visible[3, 1] = True
    u = np.zeros((5, 5), np.float32)
    u[1, 3], u[3, 1] = 1.0, 2.0
    instances = InstanceMaskSet((InstanceMask(1, "car", amodal, visible),))
    data = InfillInput(
        modal_flow=FlowField(u, np.zeros((5, 5), np.float32)),
        instances=instances,
        graph=OcclusionGraph(nodes=(1,), edges=frozenset(), levels={1: 1}),
    )
    filled = infill_near_boundary(data).levels[1].flow.u
    # (2, 2) is sqrt(2) from both visible pixels
    assert filled[2, 2] == 1.0
    # (1, 1) and (3, 3) are 2 px from both
    assert filled[1, 1] == 1.0
    assert filled[3, 3] == 1.0
    assert filled[0, 0] == 1.0 and filled[4, 4] == 1.0
    # (4, 0) is closest to (3, 1) alone
    assert filled[4, 0] == 2.0


def test_mean_fills_with_the_visible_average():
    level = infill_mean(_occluded_scene()).levels[2]
    assert np.allclose(level.flow.u[:, 5:], 3.0)
    assert np.allclose(level.flow.v[:, 5:], 2.5)
    assert np.array_equal(level.flow.u[:, 2:5], np.tile([2.0, 3.0, 4.0], (HEIGHT, 1)))


def test_zero_baseline_keeps_masks_only():
    data = _occluded_scene()
    stack = zero_baseline(data)
    assert stack.num_levels == 3
    for level in stack:
        assert not level.flow.u.any() and not level.flow.v.any()
    assert np.array_equal(stack.levels[2].mask, data.instances.by_id()[1].amodal_mask)


def test_fully_hidden_object_takes_background_flow(caplog):
    hidden = box_mask(HEIGHT, WIDTH, 0, 5, 3, WIDTH)
    front = box_mask(HEIGHT, WIDTH, 0, 4, HEIGHT, WIDTH)
    instances = InstanceMaskSet((
        InstanceMask(1, "ball", hidden, np.zeros((HEIGHT, WIDTH), bool)),
        InstanceMask(2, "truck", front, front),
    ))
    data = InfillInput(
        modal_flow=FlowField.constant(WIDTH, HEIGHT, 7.0, 0.0),
        instances=instances,
        graph=OcclusionGraph(nodes=(1, 2), edges=frozenset({(2, 1)}), levels={1: 2, 2: 1}),
        background_flow=FlowField.constant(WIDTH, HEIGHT, -1.0, 0.25),
    )
    caplog.set_level(logging.WARNING)
    level = infill_near_boundary(data).levels[2]
    assert np.all(level.flow.u[hidden] == -1.0)
    assert np.all(level.flow.v[hidden] == 0.25)
    assert any("INFILL_FALLBACK" in record.getMessage() for record in caplog.records)


def test_instances_need_a_level():
    data = _occluded_scene()
    with pytest.raises(ParameterError):
        InfillInput(data.modal_flow, data.instances, OcclusionGraph(nodes=(1,), edges=frozenset(), levels={1: 1}))


def test_method_registry():
    assert METHODS == {"near-boundary": infill_near_boundary, "mean": infill_mean, "zero": zero_baseline}


# ==================== On generated ground truth ====================

SCENE = {
    "frames": 2,
    "camera": {"fx": 100.0, "fy": 100.0, "cx": 32.0, "cy": 24.0, "width": 64, "height": 48},
    "objects": [
        {"id": 1, "class": "sign", "shape": {"type": "quad", "width": 1.0, "height": 1.0},
         "pose": {"translation": [0.0, 0.0, 5.0]}},
        {"id": 2, "class": "panel", "shape": {"type": "quad", "width": 4.0, "height": 4.0},
         "trajectory": {"start": {"translation": [0.0, 0.0, 10.0]}, "step_translation": [1.0, 0.0, 0.0]}},
    ],
}


@pytest.fixture
def generated(tmp_path):
    scene = parse_scene(SCENE)
    generate(scene, str(tmp_path / "gt"), threads=1)
    return scene, str(tmp_path / "gt")


@pytest.mark.parametrize("infill", [infill_near_boundary, infill_mean])
def test_infilling_recovers_a_translating_object(generated, infill):
    scene, gt_dir = generated
    data = load_infill_input(gt_dir, gt_dir, 0)
    assert data.graph.levels == {1: 1, 2: 2}
    assert [inst.class_label for inst in data.instances] == ["sign", "panel"]

    gt = generate_frame(scene, 0).amodal_stack
    report = evaluate_stack(infill(data), gt)
    assert report.miou == 1.0
    assert report.mwauc == pytest.approx(1.0)
    assert report.afq == pytest.approx(1.0)


def test_infill_methods_agree_on_rigid_translation(generated):
    _, gt_dir = generated
    data = load_infill_input(gt_dir, gt_dir, 0)
    near, mean = infill_near_boundary(data), infill_mean(data)
    assert near.num_levels == mean.num_levels == 3
    for a, b in zip(near, mean):
        assert np.array_equal(a.mask, b.mask)
        # reprojected flow carries float residuals
        assert np.allclose(a.flow.u, b.flow.u, atol=1e-4)
        assert np.allclose(a.flow.v, b.flow.v, atol=1e-4)


def test_levels_are_stratified_without_a_manifest(generated):
    _, gt_dir = generated
    os.remove(os.path.join(gt_dir, "manifest.json"))
    data = load_infill_input(gt_dir, gt_dir, 0)
    assert data.graph.levels == {1: 1, 2: 2}
    assert [inst.class_label for inst in data.instances] == ["object", "object"]


def test_missing_modal_flow(generated, tmp_path):
    _, gt_dir = generated
    with pytest.raises(FormatError):
        load_infill_input(str(tmp_path / "nowhere"), gt_dir, 0)
