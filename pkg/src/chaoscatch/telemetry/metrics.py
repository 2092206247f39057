"""
Process metrics: CPU time, resident memory and peak thread count, sampled
with psutil, plus the comparison that decides whether a perturbed run looks
abnormal next to the baseline.
"""

import logging
import os
import threading
import time
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field

import psutil

from ..constants import DEFAULT_METRICS_THRESHOLD
from ..errors import SamplingError
from .base import MetricsDelta, MetricsSnapshot

logger = logging.getLogger(__name__)

# Short labels used in flags and notes (cpu+, threads+, ...)
FIELD_LABELS = {
    "cpu_time": "cpu",
    "memory_bytes": "memory",
    "peak_threads": "threads",
}

# Below these absolute increases a change is noise, whatever its ratio
DEFAULT_FLOORS = {
    "cpu_time": 250.0,
    "memory_bytes": 16 * 1024 * 1024,
    "peak_threads": 2,
}


@dataclass
class MetricsSampler:
    """
    Samples one process (the current one by default). The peak thread count
    is tracked across samples.
    """

    pid: int | None = None
    _process: psutil.Process | None = field(default=None, init=False, repr=False)
    _peak_threads: int = field(default=0, init=False, repr=False)

    def _get_process(self) -> psutil.Process:
        if self._process is None:
            self._process = psutil.Process(self.pid or os.getpid())
        return self._process

    def sample(self) -> MetricsSnapshot:
        """
        Takes a snapshot.

        Raises
        ------
        SamplingError
            The process does not exist (anymore)
        """

        try:
            proc = self._get_process()

            with proc.oneshot():
                cpu = proc.cpu_times()
                memory = proc.memory_info().rss
                threads = proc.num_threads()
        except (psutil.NoSuchProcess, psutil.ZombieProcess) as e:
            msg = f"Process {self.pid or os.getpid()} is gone"
            raise SamplingError(msg) from e

        self._peak_threads = max(self._peak_threads, threads)

        return MetricsSnapshot(
            cpu_time=round((cpu.user + cpu.system) * 1000, 3),
            memory_bytes=memory,
            peak_threads=self._peak_threads,
            wall_clock=time.time(),
        )


class PeriodicSampler:
    """Calls `on_sample` with a fresh snapshot every `interval` seconds"""

    def __init__(
        self,
        sampler: MetricsSampler,
        on_sample: Callable[[MetricsSnapshot], None],
        interval: float = 1.0,
    ):
        self.sampler = sampler
        self.on_sample = on_sample
        self.interval = interval
        self._stop = threading.Event()
        self._thread = threading.Thread(
            target=self._run, name="chaoscatch-metrics", daemon=True
        )

    def start(self) -> "PeriodicSampler":
        """Starts sampling in the background"""
        self._thread.start()
        return self

    def stop(self) -> None:
        """Stops sampling, the current sample (if any) completes"""
        self._stop.set()
        if self._thread.is_alive():
            self._thread.join(self.interval + 1)

    def _run(self) -> None:
        while not self._stop.wait(self.interval):
            try:
                self.on_sample(self.sampler.sample())
            except SamplingError:
                return
            except Exception:
                logger.exception("Metrics sampling failed")


def summarize(series: Sequence[MetricsSnapshot]) -> MetricsSnapshot | None:
    """
    Reduces a series to one snapshot: the last CPU time, the highest memory
    and the highest thread count.
    """

    if not series:
        return None

    return MetricsSnapshot(
        cpu_time=max(s.cpu_time for s in series),
        memory_bytes=max(s.memory_bytes for s in series),
        peak_threads=max(s.peak_threads for s in series),
        wall_clock=series[-1].wall_clock,
    )


def diff_metrics(
    baseline: MetricsSnapshot | None,
    perturbed: MetricsSnapshot | None,
    threshold: float = DEFAULT_METRICS_THRESHOLD,
    floors: dict[str, float] | None = None,
) -> MetricsDelta:
    """
    Compares two snapshots field by field. A field is abnormal when it grew
    by more than `threshold` (relative) and more than its floor (absolute).
    Decreases are noted but never abnormal. A missing side makes the runs
    not comparable.
    """

    if baseline is None or perturbed is None:
        return MetricsDelta(comparable=False)

    floors = DEFAULT_FLOORS | (floors or {})
    changes: dict[str, float | None] = {}
    flags = []
    notes = []

    for name, label in FIELD_LABELS.items():
        before = float(getattr(baseline, name))
        after = float(getattr(perturbed, name))
        delta = after - before

        if before:
            relative = delta / before
        elif delta:
            relative = None
        else:
            relative = 0.0

        changes[name] = None if relative is None else round(relative, 4)

        grew_enough = relative is None or relative > threshold
        shrank_enough = relative is not None and relative < -threshold

        if grew_enough and delta > floors[name]:
            flags.append(f"{label}+")
            notes.append(f"{label}+")
        elif shrank_enough and -delta > floors[name]:
            notes.append(f"{label}-")

    return MetricsDelta(changes=changes, flags=flags, notes=notes)
