"""
The experiment journal: an append-only NDJSON file, one record per line.

Any thread may append. Records are queued and written by a single consumer
thread, so the application never waits on the disk. Timestamps are clamped
at enqueue time so that the file is always ordered by `ts`.
"""

import json
import logging
import queue
import threading
import time
from pathlib import Path
from typing import Any

from ..constants import JournalKind
from .base import JournalRecord

logger = logging.getLogger(__name__)

_STOP = object()


class Journal:
    """
    Writer of one journal file. Opening an existing file appends to it and
    carries on its sequence numbers and timestamps.
    """

    def __init__(self, path: Path | str, wall_clock=time.time):
        self.path = Path(path)
        self._wall_clock = wall_clock
        self._lock = threading.Lock()
        self._queue: queue.SimpleQueue[Any] = queue.SimpleQueue()
        self._thread: threading.Thread | None = None
        self.dropped = 0

        self._seq = 0
        self._last_ts = 0.0

        for record in read_journal(self.path):
            self._seq = max(self._seq, record.seq + 1)
            self._last_ts = max(self._last_ts, record.ts)

    def start(self) -> "Journal":
        """Starts the writer thread"""

        if self._thread is None:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self._thread = threading.Thread(
                target=self._consume,
                name="chaoscatch-journal",
                daemon=True,
            )
            self._thread.start()

        return self

    def append(
        self,
        kind: JournalKind,
        point_id: str | None = None,
        payload: dict[str, Any] | None = None,
        ts: float | None = None,
    ) -> JournalRecord:
        """
        Queues a record. Never blocks on I/O and never raises because of the
        disk: failed writes are counted in `dropped`.
        """

        with self._lock:
            ts = max(self._wall_clock() if ts is None else ts, self._last_ts)
            self._last_ts = ts
            record = JournalRecord(
                seq=self._seq,
                ts=ts,
                kind=kind,
                point_id=point_id,
                payload=payload or {},
            )
            self._seq += 1
            self._queue.put(record)

        if self._thread is None:
            self.start()

        return record

    def flush(self, timeout: float = 5.0) -> bool:
        """Waits until everything queued so far hit the file"""

        if self._thread is None:
            return True

        done = threading.Event()
        self._queue.put(done)
        return done.wait(timeout)

    def close(self, timeout: float = 5.0) -> None:
        """Flushes and stops the writer thread"""

        if self._thread is None:
            return

        self._queue.put(_STOP)
        self._thread.join(timeout)
        self._thread = None

    def _drop(self) -> None:
        self.dropped += 1
        if self.dropped == 1 or not self.dropped % 100:
            logger.warning("Journal %s dropped %d records", self.path, self.dropped)

    def _consume(self) -> None:
        try:
            f = self.path.open("a", encoding="utf-8")
        except OSError:
            logger.exception("Cannot open journal %s", self.path)
            f = None

        try:
            while True:
                item = self._queue.get()

                if item is _STOP:
                    return

                if isinstance(item, threading.Event):
                    if f:
                        f.flush()
                    item.set()
                    continue

                if f is None:
                    self._drop()
                    continue

                try:
                    f.write(item.model_dump_json() + "\n")
                    if self._queue.empty():
                        f.flush()
                except Exception:
                    self._drop()
        finally:
            if f:
                f.close()


def read_journal(path: Path | str) -> list[JournalRecord]:
    """
    Reads a journal back. A torn last line (the writer died mid-write) is
    ignored, any other invalid line is skipped with a warning.
    """

    path = Path(path)

    if not path.exists():
        return []

    out = []
    lines = path.read_text(encoding="utf-8", errors="replace").splitlines()

    for n, line in enumerate(lines):
        if not line.strip():
            continue

        try:
            out.append(JournalRecord.model_validate(json.loads(line)))
        except ValueError:
            if n != len(lines) - 1:
                logger.warning("Skipping invalid line %d of %s", n + 1, path)

    return out
