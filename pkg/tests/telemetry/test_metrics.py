import subprocess
import sys

import pytest

from chaoscatch.errors import SamplingError
from chaoscatch.telemetry.base import MetricsSnapshot
from chaoscatch.telemetry.metrics import MetricsSampler, diff_metrics, summarize


def snapshot(cpu=1000.0, memory=100 * 2**20, threads=4, wall=0.0):
    return MetricsSnapshot(
        cpu_time=cpu, memory_bytes=memory, peak_threads=threads, wall_clock=wall
    )


def test_unchanged_is_no_diff():
    delta = diff_metrics(snapshot(), snapshot())

    assert not delta.abnormal
    assert delta.label == "no diff"


def test_cpu_increase_is_flagged():
    delta = diff_metrics(snapshot(), snapshot(cpu=3000))

    assert delta.flags == ["cpu+"]
    assert delta.changes["cpu_time"] == 2.0


def test_small_absolute_increase_is_noise():
    delta = diff_metrics(snapshot(threads=1), snapshot(threads=2))

    assert not delta.abnormal


def test_thread_increase_is_flagged():
    delta = diff_metrics(snapshot(threads=4), snapshot(threads=12))

    assert delta.label == "threads+"


def test_decrease_is_noted_but_normal():
    delta = diff_metrics(snapshot(), snapshot(memory=10 * 2**20))

    assert not delta.abnormal
    assert delta.notes == ["memory-"]


def test_missing_side_is_not_comparable():
    delta = diff_metrics(snapshot(), None)

    assert not delta.comparable
    assert delta.label == "-"


def test_summarize():
    series = [snapshot(cpu=10, threads=3, wall=1), snapshot(cpu=20, threads=2, wall=2)]

    summary = summarize(series)

    assert summary is not None
    assert summary.cpu_time == 20
    assert summary.peak_threads == 3
    assert summary.wall_clock == 2
    assert summarize([]) is None


def test_sample_current_process():
    sampled = MetricsSampler().sample()

    assert sampled.memory_bytes > 0
    assert sampled.peak_threads >= 1


def test_sample_gone_process():
    done = subprocess.Popen([sys.executable, "-c", "pass"])  # noqa: S603
    pid = done.pid
    done.wait()

    with pytest.raises(SamplingError):
        MetricsSampler(pid=pid).sample()
