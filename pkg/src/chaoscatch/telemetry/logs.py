"""
Log evidence. We look for traces of an injection in the application logs
using three rules, in order:

1. the injection marker carrying the point id
2. the name of the injected error kind
3. a stack frame naming the routine of the point

The first rule that matches anything wins and is reported.
"""

import abc
import logging
import re
from dataclasses import dataclass
from datetime import UTC, datetime
from pathlib import Path
from typing import NamedTuple

from ..agent.base import InjectionPoint
from ..agent.core import injection_message
from ..constants import JournalKind, MatchRule
from .base import LogEvidence
from .journal import read_journal

logger = logging.getLogger(__name__)

MAX_SAMPLE_LINES = 10

ISO_PREFIX = re.compile(
    r"^\[?(\d{4}-\d{2}-\d{2}[T ]\d{2}:\d{2}:\d{2}(?:[.,]\d+)?"
    r"(?:Z|[+-]\d{2}:?\d{2})?)"
)


class LogLine(NamedTuple):
    """A line of log and the time it was written, when known"""

    ts: float | None
    text: str


class TimeWindow(NamedTuple):
    """
    Closed time range, either bound may be open. A line of unknown time only
    belongs to a window open on both sides.
    """

    start: float | None = None
    end: float | None = None

    def __contains__(self, ts: object) -> bool:
        if ts is None:
            return self.start is None and self.end is None
        assert isinstance(ts, float | int)  # noqa: S101
        if self.start is not None and ts < self.start:
            return False
        return not (self.end is not None and ts > self.end)


def parse_timestamp(line: str) -> float | None:
    """Epoch of the ISO timestamp starting the line, if any (naive means UTC)"""

    if not (m := ISO_PREFIX.match(line)):
        return None

    raw = m.group(1).replace(",", ".").replace("Z", "+00:00")

    try:
        dt = datetime.fromisoformat(raw)
    except ValueError:
        return None

    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=UTC)

    return dt.timestamp()


class LogSink(abc.ABC):
    """Somewhere the application logs end up"""

    @abc.abstractmethod
    def read_lines(self) -> list[LogLine]:
        """
        Returns every line with its timestamp.

        Raises
        ------
        OSError
            When the sink can't be read
        """

        raise NotImplementedError


@dataclass
class FileLogSink(LogSink):
    """
    A plain log file. Lines starting with an ISO timestamp open a record,
    the following lines (typically tracebacks) belong to the same record.
    Lines before the first timestamp have no known time.
    """

    path: Path

    def read_lines(self) -> list[LogLine]:
        """Reads the whole file"""

        out = []
        current_ts = None

        with Path(self.path).open(encoding="utf-8", errors="replace") as f:
            for raw in f:
                line = raw.rstrip("\n")
                if (ts := parse_timestamp(line)) is not None:
                    current_ts = ts
                out.append(LogLine(current_ts, line))

        return out


@dataclass
class JournalLogSink(LogSink):
    """Log records captured in-process by the sidecar's log hook"""

    path: Path

    def read_lines(self) -> list[LogLine]:
        """Flattens every log record of the journal into lines"""

        if not Path(self.path).exists():
            msg = f"No journal at {self.path}"
            raise FileNotFoundError(msg)

        out = []

        for record in read_journal(self.path):
            if record.kind != JournalKind.LOG:
                continue

            text = str(record.payload.get("message", ""))
            for line in text.splitlines() or [""]:
                out.append(LogLine(record.ts, line))

        return out


def _rules(point: InjectionPoint) -> list[tuple[MatchRule, re.Pattern[str]]]:
    kind = re.split(r"[.:$]", point.error_kind)[-1]
    unit = re.split(r"[.:]", point.unit)[-1]
    routine = re.escape(point.routine)

    return [
        (MatchRule.MARKER, re.compile(re.escape(injection_message(point.point_id)))),
        (MatchRule.EXCEPTION_NAME, re.compile(rf"\b{re.escape(kind)}\b")),
        (
            MatchRule.STACK_FRAME,
            re.compile(
                rf"(?:\bin {routine}\s*$)"
                rf"|(?:\b{re.escape(unit)}\.{routine}\()"
            ),
        ),
    ]


def scan_logs(
    point: InjectionPoint,
    window: TimeWindow,
    sink: LogSink | None,
) -> LogEvidence:
    """
    Looks for evidence of `point`'s injections in the lines of `sink` that
    fall inside `window`. An unreadable (or missing) sink is reported as
    such instead of as a negative.
    """

    if sink is None:
        return LogEvidence(point_id=point.point_id, diagnostic="log-unavailable")

    try:
        lines = [line for line in sink.read_lines() if line.ts in window]
    except OSError as e:
        logger.warning("Log sink unavailable for %s: %s", point.point_id, e)
        return LogEvidence(point_id=point.point_id, diagnostic="log-unavailable")

    for rule, pattern in _rules(point):
        samples = [line.text for line in lines if pattern.search(line.text)]

        if samples:
            return LogEvidence(
                point_id=point.point_id,
                matched=True,
                sample_lines=samples[:MAX_SAMPLE_LINES],
                match_rule=rule,
            )

    return LogEvidence(point_id=point.point_id)
