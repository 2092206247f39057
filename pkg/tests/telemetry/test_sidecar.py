import logging
from unittest.mock import MagicMock

from chaoscatch.agent.core import Agent
from chaoscatch.constants import JournalKind, Verbosity
from chaoscatch.errors import SamplingError
from chaoscatch.telemetry.base import MetricsSnapshot
from chaoscatch.telemetry.journal import Journal, read_journal
from chaoscatch.telemetry.metrics import MetricsSampler
from chaoscatch.telemetry.sidecar import FOCUSED_STACK_CAPTURES, Sidecar


def fake_sampler():
    sampler = MagicMock(spec=MetricsSampler)
    sampler.sample.return_value = MetricsSnapshot(
        cpu_time=5, memory_bytes=1024, peak_threads=2, wall_clock=1.0
    )
    return sampler


def make_sidecar(tmp_path, verbosity=Verbosity.FULL, **kwargs):
    journal = Journal(tmp_path / "journal.ndjson")
    sidecar = Sidecar(
        journal=journal,
        verbosity=verbosity,
        metrics_interval=60,
        sampler=fake_sampler(),
        **kwargs,
    )
    agent = Agent()
    agent.add_observer(sidecar)
    return agent, sidecar, journal


def inject(agent: Agent, times: int) -> str:
    pid = agent.register_point(("Mirror", "fetch_chunk", 0), "OSError")
    agent.set_active(pid, True, duration=60)
    for _ in range(times):
        agent.enter_block(pid)
    return pid


def test_full_mode_captures_every_stack(tmp_path):
    agent, sidecar, journal = make_sidecar(tmp_path)
    sidecar.start()
    pid = inject(agent, 12)
    sidecar.stop()

    injections = [
        r for r in read_journal(journal.path) if r.kind == JournalKind.INJECTION
    ]

    assert len(injections) == 12
    assert all(r.point_id == pid for r in injections)
    assert all(r.payload["stack"] for r in injections)


def test_focused_mode_caps_stack_captures(tmp_path):
    agent, sidecar, journal = make_sidecar(tmp_path, Verbosity.FOCUSED)
    sidecar.start()
    inject(agent, FOCUSED_STACK_CAPTURES + 5)
    sidecar.stop()

    stacks = [
        r.payload["stack"]
        for r in read_journal(journal.path)
        if r.kind == JournalKind.INJECTION
    ]

    assert sum(1 for s in stacks if s) == FOCUSED_STACK_CAPTURES
    assert len(stacks) == FOCUSED_STACK_CAPTURES + 5
    assert sidecar.metrics_interval >= 5


def test_events_are_forwarded(tmp_path):
    sink = MagicMock()
    agent, sidecar, _ = make_sidecar(tmp_path, event_sink=sink)
    inject(agent, 1)
    agent.enter_block("ghost")

    kinds = [call.args[0].kind for call in sink.call_args_list]

    assert kinds == ["injection", "warning"]


def test_log_hook_skips_own_loggers(tmp_path):
    _, sidecar, journal = make_sidecar(tmp_path)
    sidecar.start()

    logging.getLogger("mirror").warning("retrying chunk 3")
    logging.getLogger("chaoscatch.agent").warning("not evidence")

    sidecar.stop()

    messages = [
        r.payload["message"]
        for r in read_journal(journal.path)
        if r.kind == JournalKind.LOG
    ]

    assert messages == ["WARNING mirror: retrying chunk 3"]


def test_stop_takes_last_sample(tmp_path):
    _, sidecar, journal = make_sidecar(tmp_path)
    sidecar.start()
    sidecar.stop()

    assert sidecar.last_metrics is not None
    assert any(r.kind == JournalKind.METRICS for r in read_journal(journal.path))


def test_gone_process_is_not_sampled(tmp_path):
    _, sidecar, _ = make_sidecar(tmp_path)
    sidecar.sampler.sample.side_effect = SamplingError("gone")

    assert sidecar.sample_now() is None
