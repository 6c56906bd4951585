"""Append-only event log: the durable source of truth for server state.

Records are length-prefixed (4-byte big-endian) UTF-8 JSON documents in a
single file.  Sequences are gapless starting at 1; an append is flushed
to the OS before the caller is allowed to respond (write-ahead
discipline).  A torn final record, the signature of dying mid-append, is
ignored on open and truncated by the next append; corruption anywhere
else raises CorruptLog.
"""

from __future__ import annotations

import json
import struct
import threading
from dataclasses import dataclass
from pathlib import Path

_LEN = struct.Struct(">I")


class EventLogError(Exception):
    pass


class SequenceGap(EventLogError):
    pass


class CorruptLog(EventLogError):
    def __init__(self, message: str, sequence: int):
        super().__init__(f"{message} (at sequence {sequence})")
        self.sequence = sequence


class StorageFailure(EventLogError):
    pass


@dataclass(frozen=True)
class EventRecord:
    sequence: int
    occurred_at: float
    kind: str
    payload: dict

    def to_bytes(self) -> bytes:
        body = json.dumps(
            {"sequence": self.sequence, "occurred_at": self.occurred_at,
             "kind": self.kind, "payload": self.payload},
            separators=(",", ":"), sort_keys=True).encode("utf-8")
        return _LEN.pack(len(body)) + body


def _scan_log(path: Path) -> tuple[list[EventRecord], int]:
    """Parse records and return them with the byte offset of the valid tail."""
    records: list[EventRecord] = []
    if not path.exists():
        return records, 0
    data = path.read_bytes()
    offset = 0
    expected_seq = 1
    while offset < len(data):
        if offset + _LEN.size > len(data):
            break  # torn length prefix at EOF
        (length,) = _LEN.unpack_from(data, offset)
        if offset + _LEN.size + length > len(data):
            break  # torn body at EOF
        body = data[offset + _LEN.size: offset + _LEN.size + length]
        try:
            doc = json.loads(body.decode("utf-8"))
            record = EventRecord(sequence=int(doc["sequence"]),
                                 occurred_at=float(doc["occurred_at"]),
                                 kind=str(doc["kind"]),
                                 payload=dict(doc["payload"]))
        except (ValueError, KeyError, TypeError) as exc:
            raise CorruptLog(f"undecodable record: {exc}", expected_seq) \
                from None
        if record.sequence != expected_seq:
            raise CorruptLog(
                f"sequence {record.sequence} where {expected_seq} expected",
                expected_seq)
        records.append(record)
        expected_seq += 1
        offset += _LEN.size + length
    return records, offset


def read_log(path: str | Path) -> list[EventRecord]:
    """Read and validate all records; tolerates only a torn final record."""
    records, _ = _scan_log(Path(path))
    return records


class EventLog:
    """Single-writer append handle over the log file."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()
        self._records, valid_bytes = _scan_log(self.path)
        self._failed = False
        # drop any torn tail so appends start at a record boundary
        if self.path.exists() and self.path.stat().st_size > valid_bytes:
            with open(self.path, "r+b") as fh:
                fh.truncate(valid_bytes)
        self._fh = open(self.path, "ab")

    @property
    def next_sequence(self) -> int:
        with self._lock:
            return len(self._records) + 1

    def records(self) -> list[EventRecord]:
        with self._lock:
            return list(self._records)

    def append(self, record: EventRecord) -> None:
        with self._lock:
            if self._failed:
                raise StorageFailure("log is failed; writes refused")
            expected = len(self._records) + 1
            if record.sequence != expected:
                raise SequenceGap(
                    f"sequence {record.sequence} where {expected} expected")
            try:
                self._fh.write(record.to_bytes())
                self._fh.flush()
            except (OSError, ValueError) as exc:
                self._failed = True
                raise StorageFailure(str(exc)) from None
            self._records.append(record)

    def close(self) -> None:
        with self._lock:
            try:
                self._fh.close()
            except OSError:
                pass
