"""train_log.jsonl chain tests."""

import json

import pytest

from deobstruct.core.errors import ValidationError
from deobstruct.core.runlog import GENESIS, RunLog, chain_hash


def _log(tmp_path, steps=3):
    log = RunLog(tmp_path / "train_log.jsonl")
    for step in range(steps):
        log.append({"step": step * 10, "loss": 1.0 / (step + 1)})
    return log


def _rewrite(log, edit):
    lines = log.path.read_text(encoding="utf-8").splitlines()
    edit(lines)
    log.path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def test_steps_verify_in_order(tmp_path):
    log = _log(tmp_path)
    assert log.verify().ok
    assert log.verify().records == 3
    assert log.steps() == [0, 10, 20]


def test_first_record_links_to_genesis(tmp_path):
    log = _log(tmp_path, steps=1)
    record = json.loads(log.path.read_text().splitlines()[0])
    assert record["prev_hash"] == GENESIS
    assert record["hash"] == chain_hash(GENESIS, {"step": 0, "loss": 1.0})


def test_resumed_run_extends_the_same_chain(tmp_path):
    _log(tmp_path, steps=2)
    RunLog(tmp_path / "train_log.jsonl").append({"step": 20, "loss": 0.1})
    assert RunLog(tmp_path / "train_log.jsonl").verify().records == 3


def test_edited_loss_is_caught(tmp_path):
    log = _log(tmp_path)

    def edit(lines):
        record = json.loads(lines[1])
        record["payload"]["loss"] = 0.01
        lines[1] = json.dumps(record)

    _rewrite(log, edit)
    result = log.verify()
    assert (result.ok, result.broken_line, result.reason) == (False, 2, "hash mismatch")


def test_dropped_step_is_caught(tmp_path):
    log = _log(tmp_path, steps=4)
    _rewrite(log, lambda lines: lines.pop(1))
    result = log.verify()
    assert not result.ok
    assert result.records == 1
    assert result.reason == "prev_hash mismatch"


def test_swapped_steps_are_caught(tmp_path):
    log = _log(tmp_path)
    _rewrite(log, lambda lines: lines.insert(0, lines.pop(1)))
    assert log.verify().broken_line == 1


def test_non_finite_loss_is_refused(tmp_path):
    log = RunLog(tmp_path / "train_log.jsonl")
    with pytest.raises(ValidationError):
        log.append({"step": 0, "loss": float("nan")})
    assert log.verify().records == 0


def test_absent_log_is_empty_and_valid(tmp_path):
    log = RunLog(tmp_path / "none.jsonl")
    assert log.verify().ok
    assert log.payloads() == []
