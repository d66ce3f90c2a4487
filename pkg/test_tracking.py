"""Tests for assignment, mask propagation tracking and track scoring."""

import itertools

import numpy as np
import pytest

from conftest import box_mask, two_level_stack
from src.errors import ParameterError
from src.flow_types import FlowField, InstanceMask, InstanceMaskSet
from src.synthgen import generate_frame, parse_scene
from src.tracking import AMODAL, MODAL, MaskPropagationTracker, TrackState, hungarian_max, mask_iou, \
    match_to_ground_truth, score_tracking, select_flow_layer, step


# ==================== Assignment ====================

def test_ties_resolve_to_the_lexicographically_first_assignment():
    assert hungarian_max([[0.5, 0.25], [0.75, 0.5]]) == [(0, 0), (1, 1)]


def test_more_rows_than_columns_skips_rows():
    scores = [[0.125, 0.0], [0.5, 0.25], [0.75, 0.5]]
    assert hungarian_max(scores) == [(1, 0), (2, 1)]


def test_degenerate_score_matrices():
    assert hungarian_max(np.zeros((0, 3))) == []
    with pytest.raises(ParameterError):
        hungarian_max([[np.nan, 1.0]])


def _brute_force(scores):
    rows, cols = scores.shape
    size = min(rows, cols)
    best_total, best_key = -1.0, None
    for chosen_rows in itertools.combinations(range(rows), size):
        for chosen_cols in itertools.permutations(range(cols), size):
            total = sum(scores[r, c] for r, c in zip(chosen_rows, chosen_cols))
            by_row = dict(zip(chosen_rows, chosen_cols))
            key = tuple(by_row.get(r, cols) for r in range(rows))
            if total > best_total or (total == best_total and key < best_key):
                best_total, best_key = total, key
    return best_total, [(r, c) for r, c in enumerate(best_key) if c < cols]


def test_matches_brute_force_on_random_matrices(rng):
    for _ in range(200):
        shape = tuple(rng.integers(1, 7, size=2))
        scores = rng.integers(0, 65, size=shape) / 64.0
        total, expected = _brute_force(scores)
        pairs = hungarian_max(scores)
        assert pairs == expected
        assert sum(scores[r, c] for r, c in pairs) == total


# ==================== Masks and layers ====================

def test_mask_iou():
    a = box_mask(4, 4, 0, 0, 2, 4)
    assert mask_iou(a, a) == 1.0
    assert mask_iou(a, box_mask(4, 4, 1, 0, 3, 4)) == pytest.approx(1 / 3)
    assert mask_iou(a, ~a) == 0.0
    assert mask_iou(np.zeros((2, 2), bool), np.zeros((2, 2), bool)) == 0.0


def test_select_flow_layer():
    stack = two_level_stack()
    assert select_flow_layer(box_mask(6, 8, 0, 5, 2, 8), stack) == 1
    assert select_flow_layer(box_mask(6, 8, 0, 0, 2, 3), stack) == 0


# ==================== Tracker ====================

def _frame(*objects):
    """Instances from (id, mask) pairs, fully visible."""
    return InstanceMaskSet(tuple(InstanceMask(i, "object", m, m) for i, m in objects))


STILL = FlowField.zeros(8, 6)


def test_a_frame_gap_keeps_the_track_id():
    mask = box_mask(6, 8, 1, 1, 4, 4)
    frames = [_frame((1, mask)), _frame(), _frame((1, mask))]
    assignments = MaskPropagationTracker().run(frames, [STILL, STILL])
    assert assignments == [{1: 1}, {}, {1: 1}]


def test_retired_ids_are_never_reused():
    mask = box_mask(6, 8, 1, 1, 4, 4)
    other = box_mask(6, 8, 4, 5, 6, 8)
    frames = [_frame((1, mask)), _frame(), _frame(), _frame((1, mask), (2, other))]
    tracker = MaskPropagationTracker()
    assignments = tracker.run(frames, [STILL] * 3)
    assert assignments[3] == {1: 2, 2: 3}
    assert [t.track_id for t in tracker.state.tracks] == [2, 3]
    assert tracker.state.next_id == 4


def test_flow_moves_the_track_mask():
    before = box_mask(6, 8, 1, 0, 3, 2)
    after = box_mask(6, 8, 1, 3, 3, 5)
    shift = FlowField.constant(8, 6, 3.0, 0.0)
    assert MaskPropagationTracker().run([_frame((5, before)), _frame((9, after))], [shift]) == [{5: 1}, {9: 1}]
    # without the flow the masks do not overlap
    assert MaskPropagationTracker().run([_frame((5, before)), _frame((9, after))], [STILL]) == [{5: 1}, {9: 2}]


def test_tracker_arguments_are_checked():
    with pytest.raises(ParameterError):
        MaskPropagationTracker(mode="optical")
    with pytest.raises(ParameterError):
        MaskPropagationTracker(min_iou=1.5)
    with pytest.raises(ParameterError):
        MaskPropagationTracker().run([_frame(), _frame()], [])


def test_step_requires_matching_flow():
    state, _ = step(TrackState(), None, _frame((1, box_mask(6, 8, 0, 0, 2, 2))))
    with pytest.raises(ParameterError):
        step(state, None, _frame())
    with pytest.raises(ParameterError):
        step(state, STILL, _frame(), mode=AMODAL)
    with pytest.raises(ParameterError):
        step(state, two_level_stack(), _frame(), mode=MODAL)


# ==================== Synthetic sequences ====================

def _sequence(objects, frames):
    scene = parse_scene({
        "frames": frames,
        "camera": {"fx": 100.0, "fy": 100.0, "cx": 64.0, "cy": 48.0, "width": 128, "height": 96},
        "objects": objects,
    })
    return [generate_frame(scene, t) for t in range(frames - 1)]


def _quad(instance_id, width, height, start, step=(0.0, 0.0, 0.0)):
    return {
        "id": instance_id,
        "shape": {"type": "quad", "width": width, "height": height},
        "trajectory": {"start": {"translation": list(start)}, "step_translation": list(step)},
    }


@pytest.fixture(scope="module")
def hidden_pass():
    """Object 2 slides behind objects 1 and 3 and is fully hidden in frame 4."""
    return _sequence([
        _quad(1, 1.0, 1.2, (0.0, 0.0, 5.0)),
        _quad(2, 2.4, 1.0, (-1.9, 0.0, 10.0), step=(0.6, 0.0, 0.0)),
        _quad(3, 1.2, 1.2, (0.6, 0.0, 6.0)),
    ], frames=8)


def test_hidden_pass_scene(hidden_pass):
    assert not hidden_pass[4].instances.by_id()[2].visible_mask.any()
    assert hidden_pass[3].instances.by_id()[2].visible_mask.any()
    assert hidden_pass[5].instances.by_id()[2].visible_mask.any()


def test_modal_tracking_loses_the_hidden_object(hidden_pass):
    tracker = MaskPropagationTracker(mode=MODAL)
    assignments = tracker.run([gt.instances for gt in hidden_pass], [gt.modal_flow for gt in hidden_pass[:-1]])
    assert 2 not in assignments[4]
    assert assignments[5][2] != assignments[3][2]
    assert score_tracking(assignments).id_switches == 1


def test_amodal_tracking_bridges_the_occlusion(hidden_pass):
    tracker = MaskPropagationTracker(mode=AMODAL)
    assignments = tracker.run([gt.instances for gt in hidden_pass], [gt.amodal_stack for gt in hidden_pass[:-1]])
    assert len({a[2] for a in assignments}) == 1
    score = score_tracking(assignments)
    assert score.id_switches == 0
    assert score.association_accuracy == 1.0


def test_crossing_objects_keep_their_ids():
    sequence = _sequence([
        _quad(1, 0.8, 0.8, (-1.5, -0.6, 10.0), step=(0.5, 0.0, 0.0)),
        _quad(2, 0.8, 0.8, (1.5, 0.6, 10.0), step=(-0.5, 0.0, 0.0)),
    ], frames=7)
    assignments = MaskPropagationTracker().run(
        [gt.instances for gt in sequence], [gt.modal_flow for gt in sequence[:-1]]
    )
    assert all(a == {1: 1, 2: 2} for a in assignments)


# ==================== Scoring ====================

def test_match_to_ground_truth():
    a = box_mask(4, 6, 0, 0, 4, 2)
    b = box_mask(4, 6, 0, 3, 4, 6)
    predicted = {10: a, 11: b, 12: box_mask(4, 6, 0, 2, 1, 3)}
    ground_truth = {1: b, 2: a, 3: box_mask(4, 6, 3, 2, 4, 3)}
    assert match_to_ground_truth(predicted, ground_truth) == {1: 11, 2: 10}


def test_score_tracking():
    score = score_tracking([{1: 1, 2: 2}, {1: 1, 2: 3}, {1: 1}, {2: 3}])
    assert score.checks == 4
    assert score.id_switches == 1
    assert score.association_accuracy == pytest.approx(0.75)
    assert score_tracking([{1: 1}]).association_accuracy is None


def test_unmatched_frames_are_bridged_by_the_last_match():
    # instance 1 unmatched in the middle frame
    kept = score_tracking([{1: 5}, {}, {1: 5}])
    assert (kept.checks, kept.id_switches) == (1, 0)
    lost = score_tracking([{1: 5}, {}, {1: 6}])
    assert (lost.checks, lost.id_switches) == (1, 1)
    assert lost.association_accuracy == 0.0


def test_single_id_change_on_a_ten_frame_track():
    score = score_tracking([{1: 1}] * 5 + [{1: 2}] * 5)
    assert score.checks == 9
    assert score.id_switches == 1
    assert score.association_accuracy == pytest.approx(8 / 9)
