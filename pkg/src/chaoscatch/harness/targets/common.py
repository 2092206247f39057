"""
Plumbing shared by the demo targets: the agent hooks, which stay inert when
the target runs without an agent, the body-side probes and the application
log.
"""

import json
import logging
import os
import time
from collections import Counter
from pathlib import Path

from ...agent.base import Location
from ...agent.runtime import Runtime, attach_from_env

APP_LOG_ENV = "CHAOS_APP_LOG"
PROBES_FILE = "probes.json"


class UtcFormatter(logging.Formatter):
    """ISO 8601 timestamps in UTC, with milliseconds"""

    converter = time.gmtime

    def formatTime(self, record: logging.LogRecord, datefmt: str | None = None) -> str:
        """2026-10-17T08:30:00.123Z"""
        stamp = time.strftime("%Y-%m-%dT%H:%M:%S", self.converter(record.created))
        return f"{stamp}.{int(record.msecs):03d}Z"


def setup_logging(name: str) -> logging.Logger:
    """
    The application logger. It writes to the file named by ``CHAOS_APP_LOG``
    when there is one, and otherwise only propagates (to the journal hook of
    the agent, if any).
    """

    logger = logging.getLogger(name)
    logger.setLevel(logging.INFO)

    if path := os.environ.get(APP_LOG_ENV):
        handler: logging.Handler = logging.FileHandler(path, encoding="utf-8")
        handler.setFormatter(
            UtcFormatter("%(asctime)s %(levelname)s %(name)s: %(message)s")
        )
    else:
        handler = logging.NullHandler()

    logger.addHandler(handler)
    return logger


class Instrumentation:
    """
    The recovery blocks of a demo target and their injectors. Without an
    agent, `enter` does nothing and the target runs as if uninstrumented.
    Probes count how many times each protected body actually ran.
    """

    def __init__(self):
        self.runtime: Runtime | None = None
        self.points: dict[str, str] = {}
        self.probes: Counter[str] = Counter()

    def attach(self) -> "Instrumentation":
        """Attaches the agent, if the environment asks for one"""
        self.runtime = attach_from_env()
        return self

    def register(
        self,
        name: str,
        unit: str,
        routine: str,
        error_kind: str,
        arm_ordinal: int = 0,
    ) -> None:
        """Declares one recovery arm under a local `name`"""

        if self.runtime is None:
            return

        self.points[name] = self.runtime.agent.register_point(
            Location(unit, routine), error_kind, arm_ordinal
        )

    def ready(self) -> None:
        """Everything is registered, hold here if the controller asked to"""

        if self.runtime is not None:
            self.runtime.ready()

    def enter(self, *names: str) -> None:
        """Entry of a protected block, one name per arm"""

        if self.runtime is None:
            return

        for name in names:
            self.runtime.agent.check(self.points[name])

    def probe(self, block: str) -> None:
        """The protected body of `block` is running"""
        self.probes[block] += 1

    def dump_probes(self, run_dir: Path | None) -> None:
        """Writes the probe counters next to the other window files"""

        if run_dir is None:
            return

        run_dir.mkdir(parents=True, exist_ok=True)
        path = run_dir / PROBES_FILE
        path.write_text(json.dumps(dict(self.probes), sort_keys=True), "utf-8")
