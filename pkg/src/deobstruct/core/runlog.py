# deobstruct.core.runlog
#
# train_log.jsonl: one line per logged training step,
#
#     {"prev_hash": h_{k-1}, "payload": {"step": ..., "loss": ...}, "hash": h_k}
#     h_k = SHA-256(h_{k-1} + canonical_json(payload)),  h_0 = 64 zeros
#
# Training into a directory that already holds a log extends its chain, so
# one file can span several resumed runs. verify() walks the file and stops
# at the first record whose link does not hold.
#
# Copyright 2026 Leon Priest (7h3v01d). PETL v1.0.

from __future__ import annotations

import hashlib
import json
import logging
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Optional

from .errors import ValidationError

logger = logging.getLogger(__name__)

GENESIS = "0" * 64


def chain_hash(prev_hash: str, payload: dict) -> str:
    canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"), ensure_ascii=False)
    return hashlib.sha256(f"{prev_hash}{canonical}".encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class VerifyResult:
    ok: bool
    records: int
    broken_line: Optional[int] = None
    reason: str = ""


class RunLog:
    """Chain-hashed log of training steps at ``path``."""

    def __init__(self, path: Path) -> None:
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._head: Optional[str] = None

    def _lines(self) -> Iterator[tuple[int, str]]:
        if not self.path.exists():
            return
        with self.path.open("r", encoding="utf-8") as fh:
            for number, line in enumerate(fh, start=1):
                if line.strip():
                    yield number, line

    def _walk(self) -> tuple[str, VerifyResult]:
        head, count = GENESIS, 0
        for number, line in self._lines():
            try:
                record = json.loads(line)
            except json.JSONDecodeError:
                return head, VerifyResult(False, count, number, "malformed JSON")
            if record.get("prev_hash") != head:
                return head, VerifyResult(False, count, number, "prev_hash mismatch")
            if record.get("hash") != chain_hash(head, record.get("payload", {})):
                return head, VerifyResult(False, count, number, "hash mismatch")
            head, count = record["hash"], count + 1
        return head, VerifyResult(True, count)

    def append(self, payload: dict) -> str:
        """Append one step record; returns its hash."""
        try:
            body = json.dumps(payload, allow_nan=False, ensure_ascii=False)
        except ValueError as exc:
            raise ValidationError(f"run-log payload is not finite JSON: {exc}") from exc
        if self._head is None:
            self._head, status = self._walk()
            if not status.ok:
                logger.warning("run log %s is broken at line %s (%s); chaining from the last good record",
                               self.path, status.broken_line, status.reason)
        digest = chain_hash(self._head, payload)
        with self.path.open("a", encoding="utf-8") as fh:
            fh.write(f'{{"prev_hash": "{self._head}", "payload": {body}, "hash": "{digest}"}}\n')
            fh.flush()
            os.fsync(fh.fileno())
        self._head = digest
        return digest

    def payloads(self) -> list[dict]:
        return [json.loads(line)["payload"] for _, line in self._lines()]

    def steps(self) -> list[int]:
        return [p["step"] for p in self.payloads() if "step" in p]

    def verify(self) -> VerifyResult:
        return self._walk()[1]
