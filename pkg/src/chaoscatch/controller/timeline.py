"""
The merged command/event timeline of a run, one JSON object per line, with
controller wall-clock timestamps. It is what tells after the fact how many
injectors were active at the same time.
"""

import json
import logging
import time
from collections.abc import Callable, Iterable
from pathlib import Path
from typing import Any

from pydantic import BaseModel

from ..protocol.messages import Message, MsgType
from ..protocol.session import Direction

logger = logging.getLogger(__name__)

SESSION_CLOSED = "session-closed"


class TimelineEntry(BaseModel):
    """One line of the timeline"""

    ts: float
    window_id: str
    direction: Direction | None = None
    msg_type: str
    correlation_id: int = 0
    point_id: str | None = None
    duration: float | None = None
    kind: str | None = None


class Timeline:
    """
    Appends entries to ``timeline.ndjson``. One timeline per run, shared by
    all the windows of that run.
    """

    def __init__(self, path: Path | str, clock: Callable[[], float] = time.time):
        self.path = Path(path)
        self.clock = clock
        self.path.parent.mkdir(parents=True, exist_ok=True)

    def _write(self, entry: TimelineEntry) -> None:
        try:
            with self.path.open("a", encoding="utf-8") as f:
                f.write(entry.model_dump_json(exclude_none=True) + "\n")
        except OSError as e:
            logger.warning("Could not write the timeline: %s", e)

    def hook(self, window_id: str) -> Callable[[Direction, Message], None]:
        """A frame hook for the `AgentSession` of one window"""

        def record(direction: Direction, message: Message) -> None:
            payload: dict[str, Any] = message.payload
            self._write(
                TimelineEntry(
                    ts=self.clock(),
                    window_id=window_id,
                    direction=direction,
                    msg_type=message.msg_type.value,
                    correlation_id=message.correlation_id,
                    point_id=payload.get("point_id"),
                    duration=payload.get("duration"),
                    kind=payload.get("kind"),
                )
            )

        return record

    def session_closed(self, window_id: str) -> None:
        """The agent of that window is gone, so are its active injectors"""
        self._write(
            TimelineEntry(ts=self.clock(), window_id=window_id, msg_type=SESSION_CLOSED)
        )


def read_timeline(path: Path | str) -> list[TimelineEntry]:
    """Reads a timeline back"""

    out = []

    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.strip():
            out.append(TimelineEntry.model_validate(json.loads(line)))

    return out


def activation_intervals(
    entries: Iterable[TimelineEntry],
) -> list[tuple[float, float, str]]:
    """
    Spans during which each injector may have been active: from the ACTIVATE
    being sent until its duration elapsed, it was deactivated or its agent
    went away, whichever comes first.
    """

    ordered = sorted(entries, key=lambda e: e.ts)
    open_: dict[tuple[str, str], tuple[float, float]] = {}
    out = []

    for e in ordered:
        if e.direction == "sent" and e.msg_type == MsgType.ACTIVATE.value:
            open_[(e.window_id, e.point_id or "")] = (e.ts, e.ts + (e.duration or 0))
        elif e.direction == "sent" and e.msg_type == MsgType.DEACTIVATE.value:
            key = (e.window_id, e.point_id or "")
            if key in open_:
                start, deadline = open_.pop(key)
                out.append((start, min(deadline, e.ts), key[1]))
        elif e.msg_type == SESSION_CLOSED:
            for key in [k for k in open_ if k[0] == e.window_id]:
                start, deadline = open_.pop(key)
                out.append((start, min(deadline, e.ts), key[1]))

    out.extend((start, deadline, key[1]) for key, (start, deadline) in open_.items())

    return sorted(out)


def max_concurrent_active(entries: Iterable[TimelineEntry]) -> int:
    """Highest number of injectors active at the same instant"""

    edges = []

    for start, end, _ in activation_intervals(entries):
        edges.append((start, 1))
        edges.append((end, -1))

    # An injector ending at the very instant another starts doesn't overlap it
    edges.sort(key=lambda x: (x[0], x[1]))

    current = peak = 0

    for _, delta in edges:
        current += delta
        peak = max(peak, current)

    return peak
