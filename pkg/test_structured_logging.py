"""Tests for the JSON structured logger and the logging setup."""

import json
import logging

import numpy as np
import pytest

from src.errors import FormatError, ParameterError
from src.flow_io import decode_flo
from src.flow_types import InstanceMask, InstanceMaskSet
from src.stratify import stratify
from src.structured_logger import Stage, StructuredLogger
from src.utils import setup_logging


def _events(caplog, stage):
    events = []
    for record in caplog.records:
        try:
            entry = json.loads(record.getMessage())
        except ValueError:
            continue
        if entry.get("stage") == stage.value:
            events.append((record, entry))
    return events


def test_entries_are_json_with_standard_fields(caplog):
    caplog.set_level(logging.DEBUG)
    StructuredLogger("amflow.test").log_viz_done(path="out.png", num_levels=3)

    [(record, entry)] = _events(caplog, Stage.VIZ_DONE)
    assert record.levelno == logging.INFO
    assert record.name == "amflow.test"
    assert entry["logger"] == "amflow.test"
    assert entry["path"] == "out.png"
    assert entry["num_levels"] == 3
    assert "timestamp" in entry


def test_format_error_is_logged_before_raising(caplog):
    caplog.set_level(logging.DEBUG)
    with pytest.raises(FormatError):
        decode_flo(b"\x00" * 12, path="broken.flo")

    [(record, entry)] = _events(caplog, Stage.FORMAT_ERROR)
    assert record.levelno == logging.WARNING
    assert entry["path"] == "broken.flo"
    assert entry["reason"] == "bad_magic"


def test_stratify_logs_levels_and_broken_cycles(caplog):
    caplog.set_level(logging.DEBUG)
    mask = np.ones((2, 2), bool)
    instances = InstanceMaskSet((
        InstanceMask(1, "a", mask, np.zeros((2, 2), bool)),
        InstanceMask(2, "b", mask, np.zeros((2, 2), bool)),
    ))
    stratify(instances, [(1, 2), (2, 1)])

    [(_, broken)] = _events(caplog, Stage.STRATIFY_CYCLE_BROKEN)
    assert broken["cycle"] == [1, 2]
    assert broken["overlap_pixels"] == 4
    [(_, done)] = _events(caplog, Stage.STRATIFY_DONE)
    assert done["edge_count"] == 1
    assert done["num_levels"] == 3


def test_command_arguments_are_stringified(caplog):
    caplog.set_level(logging.INFO)
    StructuredLogger("amflow.cli").log_command_start(command="eval", arguments={"means": [0.5, 0.4], "json": None})

    [(_, entry)] = _events(caplog, Stage.COMMAND_START)
    assert entry["command"] == "eval"
    assert set(entry["arguments"]) == {"means", "json"}


def test_setup_logging_writes_daily_file(log_dir):
    logger = setup_logging("debug")
    logger.info("hello")
    files = list(log_dir.glob("amflow-*.log"))
    assert len(files) == 1
    for handler in logging.getLogger().handlers:
        handler.flush()
    assert "hello" in files[0].read_text(encoding="utf-8")


def test_setup_logging_rejects_unknown_level():
    with pytest.raises(ParameterError):
        setup_logging("verbose")


def test_level_comes_from_environment(monkeypatch):
    monkeypatch.setenv("AMFLOW_LOG", "error")
    setup_logging()
    assert logging.getLogger().level == logging.ERROR
