"""
The monitoring sidecar, living next to the agent inside the target process.
It turns what the agent sees into journal records and protocol events,
samples metrics periodically and, optionally, hooks into `logging` to capture
the application's own log records.
"""

import logging
import threading
import time
import traceback
from collections import Counter
from collections.abc import Callable
from typing import TYPE_CHECKING

from ..agent.core import AgentObserver
from ..constants import JournalKind, Verbosity
from ..errors import SamplingError
from ..protocol.messages import Event
from .base import JournalRecord, MetricsSnapshot
from .metrics import MetricsSampler, PeriodicSampler

if TYPE_CHECKING:
    from ..agent.base import InjectionPoint
    from .journal import Journal

logger = logging.getLogger(__name__)

# In focused mode, only the first injections of a point get a stack capture
FOCUSED_STACK_CAPTURES = 10
FOCUSED_METRICS_INTERVAL = 5.0

EventSink = Callable[[Event], None]


def capture_stack(skip: int = 2, limit: int = 32) -> list[str]:
    """Compact rendering of the current call stack, innermost frame last"""

    frames = traceback.extract_stack()[: -skip or None][-limit:]
    return [f"{f.filename}:{f.lineno} in {f.name}" for f in frames]


class ApplicationLogHandler(logging.Handler):
    """
    Copies application log records into the journal. Our own loggers are
    left out, they would pollute the evidence.
    """

    def __init__(self, journal: "Journal"):
        super().__init__()
        self.journal = journal
        self.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
        self.addFilter(
            lambda r: r.name != "chaoscatch" and not r.name.startswith("chaoscatch.")
        )

    def emit(self, record: logging.LogRecord) -> None:
        """Appends the formatted record (traceback included)"""

        try:
            self.journal.append(
                JournalKind.LOG,
                payload={
                    "logger": record.name,
                    "level": record.levelname,
                    "message": self.format(record),
                },
                ts=record.created,
            )
        except Exception:
            self.handleError(record)


class Sidecar(AgentObserver):
    """
    Parameters
    ----------
    journal
        Where to write records, if anywhere
    verbosity
        ``full`` captures a stack for every injection, ``focused`` only for
        the first ones of each point and samples metrics less often
    metrics_interval
        Seconds between two metrics samples in full mode
    event_sink
        Called with every event to forward to the controller
    log_hook
        Whether to capture the application's log records into the journal
    """

    def __init__(
        self,
        journal: "Journal | None" = None,
        verbosity: Verbosity = Verbosity.FULL,
        metrics_interval: float = 1.0,
        event_sink: EventSink | None = None,
        log_hook: bool = True,
        sampler: MetricsSampler | None = None,
    ):
        self.journal = journal
        self.verbosity = Verbosity(verbosity)
        self.metrics_interval = (
            metrics_interval
            if self.verbosity == Verbosity.FULL
            else max(metrics_interval, FOCUSED_METRICS_INTERVAL)
        )
        self.event_sink = event_sink
        self.sampler = sampler or MetricsSampler()
        self.last_metrics: MetricsSnapshot | None = None

        self._log_hook = log_hook
        self._log_handler: ApplicationLogHandler | None = None
        self._periodic: PeriodicSampler | None = None
        self._injections: Counter[str] = Counter()
        self._lock = threading.Lock()

    def start(self) -> "Sidecar":
        """Starts the journal, the sampler and the log hook"""

        if self.journal:
            self.journal.start()

            if self._log_hook:
                self._log_handler = ApplicationLogHandler(self.journal)
                logging.getLogger().addHandler(self._log_handler)

        self._periodic = PeriodicSampler(
            self.sampler, self.on_sample, self.metrics_interval
        ).start()

        return self

    def stop(self) -> None:
        """Takes a last sample and closes everything down"""

        if self._periodic:
            self._periodic.stop()
            self._periodic = None

        self.sample_now()

        if self._log_handler:
            logging.getLogger().removeHandler(self._log_handler)
            self._log_handler = None

        if self.journal:
            self.journal.close()

    def _emit(self, kind: str, ts: float, point_id: str | None, data: dict) -> None:
        if self.event_sink is None:
            return

        try:
            self.event_sink(Event(kind=kind, ts=ts, point_id=point_id, data=data))
        except Exception:
            logger.exception("Could not forward %s event", kind)

    def record_injection_event(
        self,
        point_id: str,
        timestamp: float,
        stack_capture: list[str],
    ) -> JournalRecord | None:
        """Journals one injection. Returns the record, if there is a journal."""

        if self.journal is None:
            return None

        return self.journal.append(
            JournalKind.INJECTION,
            point_id=point_id,
            payload={"stack": stack_capture},
            ts=timestamp,
        )

    def on_injection(self, point: "InjectionPoint", timestamp: float) -> None:
        """Journals and forwards an injection"""

        with self._lock:
            self._injections[point.point_id] += 1
            n = self._injections[point.point_id]

        if self.verbosity == Verbosity.FULL or n <= FOCUSED_STACK_CAPTURES:
            stack = capture_stack(skip=3)
        else:
            stack = []

        self.record_injection_event(point.point_id, timestamp, stack)
        self._emit("injection", timestamp, point.point_id, {"n": n})

    def on_unknown_point(self, point_id: str) -> None:
        """Forwards a warning, unknown ids never reach the journal"""

        self._emit(
            "warning",
            time.time(),
            None,
            {"reason": "unknown-point", "point_id": point_id},
        )

    def sample_now(self) -> MetricsSnapshot | None:
        """Takes a sample immediately, None if the process can't be sampled"""

        try:
            snapshot = self.sampler.sample()
        except SamplingError:
            return None

        self.on_sample(snapshot)
        return snapshot

    def on_sample(self, snapshot: MetricsSnapshot) -> None:
        """Journals and forwards a metrics sample"""

        self.last_metrics = snapshot

        if self.journal:
            self.journal.append(
                JournalKind.METRICS,
                payload=snapshot.model_dump(mode="json"),
                ts=snapshot.wall_clock,
            )

        self._emit("metrics", snapshot.wall_clock, None, snapshot.model_dump())
