"""Tests for .flo, PNG and layered stack I/O."""

import os
import struct

import numpy as np
import pytest
from PIL import Image

import config
from conftest import box_mask, two_level_stack
from src.errors import FormatError, ShapeError
from src.flow_io import (decode_amfl, decode_flo, encode_amfl, encode_flo, frame_dir, list_frames, read_flo,
                         read_id_map_png, read_mask_png, read_segmentation, read_stack, write_flo,
                         write_id_map_png, write_mask_png, write_stack)
from src.flow_types import FlowField, LayeredFlowStack, LevelField


def _flo_bytes(width, height, values, magic=config.FLO_MAGIC):
    return struct.pack("<fii", magic, width, height) + struct.pack(f"<{len(values)}f", *values)


def test_flo_byte_layout():
    field = FlowField(np.array([[1.0, 3.0]]), np.array([[2.0, 4.0]]))
    data = encode_flo(field)
    assert struct.unpack("<fii", data[:12]) == (202021.25, 2, 1)
    assert struct.unpack("<4f", data[12:]) == (1.0, 2.0, 3.0, 4.0)


def test_flo_file_round_trip_is_bit_exact(tmp_path, rng):
    field = FlowField.from_array(rng.normal(scale=20.0, size=(5, 7, 2)).astype(np.float32))
    path = tmp_path / "a" / "flow.flo"
    write_flo(field, path)
    assert read_flo(path).equals(field)
    assert os.path.getsize(path) == 12 + 5 * 7 * 8


def test_decode_flo_single_pixel():
    field = decode_flo(_flo_bytes(1, 1, [0.25, -3.5]))
    assert field.shape == (1, 1)
    assert (field.u[0, 0], field.v[0, 0]) == (0.25, -3.5)


@pytest.mark.parametrize("data", [
    b"PIEH",
    _flo_bytes(2, 2, [0.0] * 8, magic=1.0),
    _flo_bytes(0, 2, []),
    _flo_bytes(2, 2, [0.0] * 7),
    _flo_bytes(2, 2, [0.0] * 9),
    _flo_bytes(1, 1, [float("nan"), 0.0]),
])
def test_decode_flo_rejects_malformed_input(data):
    with pytest.raises(FormatError):
        decode_flo(data)


def test_mask_png_round_trip_and_value_check(tmp_path):
    mask = box_mask(4, 5, 1, 1, 3, 4)
    write_mask_png(mask, tmp_path / "m.png")
    assert np.array_equal(read_mask_png(tmp_path / "m.png"), mask)

    Image.fromarray(np.full((2, 2), 7, np.uint8)).save(tmp_path / "bad.png")
    with pytest.raises(FormatError):
        read_mask_png(tmp_path / "bad.png")


def test_id_map_keeps_sixteen_bit_ids(tmp_path):
    ids = np.array([[0, 1], [40000, 65535]])
    write_id_map_png(ids, tmp_path / "ids.png")
    assert read_id_map_png(tmp_path / "ids.png").tolist() == ids.tolist()
    with pytest.raises(FormatError):
        write_id_map_png(np.array([[70000]]), tmp_path / "big.png")


def test_stack_directory_round_trip_with_visible_masks(tmp_path):
    stack = two_level_stack()
    visible = stack[1].mask.copy()
    visible[0, :] = False
    stack = LayeredFlowStack((stack[0], LevelField(stack[1].mask, stack[1].flow, visible)))
    write_stack(stack, tmp_path / "frame_000000")
    loaded = read_stack(tmp_path / "frame_000000")
    assert loaded.equals(stack)
    assert loaded[0].visible is None
    assert np.array_equal(loaded[1].visible, visible)


def test_amfl_round_trip_drops_visible_masks(tmp_path):
    stack = two_level_stack()
    path = tmp_path / "frame_000003.amfl"
    write_stack(stack, path)
    assert read_stack(path).equals(stack)
    assert decode_amfl(encode_amfl(stack)).equals(stack)


def test_amfl_rejects_bad_containers():
    data = encode_amfl(two_level_stack())
    with pytest.raises(FormatError):
        decode_amfl(b"XXXX" + data[4:])
    with pytest.raises(FormatError):
        decode_amfl(data[:-1])
    corrupted = bytearray(data)
    corrupted[17] = 2  # first mask byte
    with pytest.raises(FormatError):
        decode_amfl(bytes(corrupted))


def test_writing_more_than_eight_levels_fails(tmp_path):
    base = two_level_stack()
    stack = LayeredFlowStack((base[0],) + (base[1],) * 8)
    with pytest.raises(FormatError):
        write_stack(stack, tmp_path / "frame_000000")
    with pytest.raises(FormatError):
        encode_amfl(stack)


def test_level_zero_mask_defaults_to_full_frame(tmp_path):
    directory = tmp_path / "frame_000000"
    write_flo(FlowField.constant(3, 2, 1.0, 0.0), directory / "level_0.flo")
    stack = read_stack(directory)
    assert stack.num_levels == 1
    assert stack[0].mask.all()


def test_missing_object_mask_and_level_gaps_are_format_errors(tmp_path):
    directory = tmp_path / "frame_000000"
    write_stack(two_level_stack(), directory)
    os.remove(directory / "level_1_mask.png")
    with pytest.raises(FormatError):
        read_stack(directory)

    gap = tmp_path / "frame_000001"
    write_flo(FlowField.zeros(3, 2), gap / "level_0.flo")
    write_flo(FlowField.zeros(3, 2), gap / "level_2.flo")
    with pytest.raises(FormatError):
        read_stack(gap)


def test_stack_levels_must_share_dimensions():
    with pytest.raises(ShapeError):
        LayeredFlowStack((LevelField.full(FlowField.zeros(3, 2)), LevelField.full(FlowField.zeros(2, 3))))


def test_list_frames_finds_directories_and_containers(tmp_path):
    write_stack(two_level_stack(), frame_dir(tmp_path, 2))
    write_stack(two_level_stack(), os.path.join(tmp_path, "frame_000005.amfl"))
    os.makedirs(tmp_path / "frame_12")
    (tmp_path / "notes.txt").write_text("x")
    assert list_frames(tmp_path) == [2, 5]
    with pytest.raises(FormatError):
        list_frames(tmp_path / "missing")


def test_read_segmentation_merges_id_map_and_amodal_masks(tmp_path):
    ids = np.zeros((4, 6), np.int32)
    ids[1:3, 0:2] = 3
    ids[1:3, 2:4] = 7
    write_id_map_png(ids, tmp_path / "ids.png")
    amodal = box_mask(4, 6, 1, 0, 3, 3)
    write_mask_png(amodal, tmp_path / "inst_3_amodal.png")

    instances = read_segmentation(tmp_path).by_id()
    assert sorted(instances) == [3, 7]
    assert np.array_equal(instances[3].amodal_mask, amodal)
    assert np.array_equal(instances[3].visible_mask, ids == 3)
    assert np.array_equal(instances[7].amodal_mask, ids == 7)
    assert instances[3].occluded_mask.sum() == 2
