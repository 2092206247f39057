from datetime import UTC, datetime

import pytest

from chaoscatch.agent.base import InjectionPoint
from chaoscatch.constants import JournalKind, MatchRule
from chaoscatch.telemetry.journal import Journal
from chaoscatch.telemetry.logs import (
    FileLogSink,
    JournalLogSink,
    TimeWindow,
    parse_timestamp,
    scan_logs,
)

POINT = InjectionPoint(
    point_id="p123",
    unit="Mirror",
    routine="fetch_chunk",
    block=0,
    error_kind="builtins.ConnectionResetError",
    arm_ordinal=0,
)

T0 = datetime(2026, 3, 1, 12, 0, 0, tzinfo=UTC).timestamp()


def write_log(tmp_path, lines):
    path = tmp_path / "app.log"
    path.write_text("\n".join(lines) + "\n")
    return FileLogSink(path)


def test_parse_timestamp():
    assert parse_timestamp("2026-03-01T12:00:00Z INFO go") == T0
    assert parse_timestamp("[2026-03-01 12:00:00,500] INFO go") == T0 + 0.5
    assert parse_timestamp("2026-03-01T14:00:00+02:00 x") == T0
    assert parse_timestamp("Traceback (most recent call last):") is None


def test_marker_wins(tmp_path):
    sink = write_log(
        tmp_path,
        [
            "2026-03-01T12:00:01Z WARNING ConnectionResetError: CHAOS_INJECTED:p123",
            "2026-03-01T12:00:02Z WARNING ConnectionResetError: other",
        ],
    )

    evidence = scan_logs(POINT, TimeWindow(), sink)

    assert evidence.matched
    assert evidence.match_rule == MatchRule.MARKER
    assert len(evidence.sample_lines) == 1


def test_exception_name_rule(tmp_path):
    sink = write_log(tmp_path, ["2026-03-01T12:00:01Z ERROR ConnectionResetError"])

    evidence = scan_logs(POINT, TimeWindow(), sink)

    assert evidence.match_rule == MatchRule.EXCEPTION_NAME


def test_stack_frame_rule_on_continuation_lines(tmp_path):
    sink = write_log(
        tmp_path,
        [
            "2026-03-01T12:00:01Z ERROR download failed",
            '  File "mirror.py", line 12, in fetch_chunk',
        ],
    )

    evidence = scan_logs(POINT, TimeWindow(T0, T0 + 2), sink)

    assert evidence.match_rule == MatchRule.STACK_FRAME


def test_lines_outside_window_are_ignored(tmp_path):
    sink = write_log(tmp_path, ["2026-03-01T12:00:01Z CHAOS_INJECTED:p123"])

    evidence = scan_logs(POINT, TimeWindow(T0 + 5, None), sink)

    assert not evidence.matched
    assert evidence.diagnostic is None


def test_lines_without_time_follow_the_previous_record(tmp_path):
    sink = write_log(
        tmp_path,
        [
            "starting CHAOS_INJECTED:p123",
            "2026-03-01T12:00:10Z ERROR fetch failed",
            "ConnectionResetError: reset by peer",
        ],
    )

    inside = scan_logs(POINT, TimeWindow(T0 + 5, T0 + 15), sink)
    before = scan_logs(POINT, TimeWindow(T0, T0 + 5), sink)
    anytime = scan_logs(POINT, TimeWindow(), sink)

    assert inside.match_rule == MatchRule.EXCEPTION_NAME
    assert not before.matched
    assert anytime.match_rule == MatchRule.MARKER


@pytest.mark.parametrize("sink", [None, FileLogSink("/nonexistent/app.log")])
def test_unavailable_sink(sink):
    evidence = scan_logs(POINT, TimeWindow(), sink)

    assert not evidence.matched
    assert evidence.diagnostic == "log-unavailable"


def test_journal_sink(tmp_path):
    journal = Journal(tmp_path / "journal.ndjson")
    journal.append(
        JournalKind.LOG,
        payload={"message": "WARNING mirror: retrying\nConnectionResetError: x"},
        ts=T0,
    )
    journal.append(JournalKind.METRICS, payload={"cpu_time": 1}, ts=T0)
    journal.close()

    sink = JournalLogSink(journal.path)

    assert [line.text for line in sink.read_lines()] == [
        "WARNING mirror: retrying",
        "ConnectionResetError: x",
    ]
    assert scan_logs(POINT, TimeWindow(T0, T0), sink).matched
