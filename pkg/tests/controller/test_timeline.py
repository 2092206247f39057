from chaoscatch.controller.timeline import (
    Timeline,
    activation_intervals,
    max_concurrent_active,
    read_timeline,
)
from chaoscatch.protocol.messages import Activate, Deactivate, Message, MsgType


class FakeClock:
    def __init__(self):
        self.now = 0.0

    def __call__(self):
        return self.now


def activate(point_id, duration=10.0):
    return Message.make(
        MsgType.ACTIVATE, Activate(point_id=point_id, duration=duration)
    )


def deactivate(point_id):
    return Message.make(MsgType.DEACTIVATE, Deactivate(point_id=point_id))


def test_sequential_windows_never_overlap(tmp_path):
    clock = FakeClock()
    timeline = Timeline(tmp_path / "timeline.ndjson", clock=clock)

    for n, pid in enumerate(["a", "b", "c"]):
        hook = timeline.hook(f"w{n}")
        clock.now = n * 10
        hook("sent", activate(pid))
        clock.now = n * 10 + 4
        hook("sent", deactivate(pid))

    entries = read_timeline(timeline.path)

    assert max_concurrent_active(entries) == 1
    assert [end - start for start, end, _ in activation_intervals(entries)] == [
        4,
        4,
        4,
    ]


def test_back_to_back_is_not_overlap(tmp_path):
    clock = FakeClock()
    timeline = Timeline(tmp_path / "timeline.ndjson", clock=clock)

    timeline.hook("w0")("sent", activate("a", duration=5))
    clock.now = 5
    timeline.hook("w1")("sent", activate("b", duration=5))

    assert max_concurrent_active(read_timeline(timeline.path)) == 1


def test_overlap_is_detected(tmp_path):
    clock = FakeClock()
    timeline = Timeline(tmp_path / "timeline.ndjson", clock=clock)
    hook = timeline.hook("w0")

    hook("sent", activate("a"))
    clock.now = 1
    hook("sent", activate("b"))

    assert max_concurrent_active(read_timeline(timeline.path)) == 2


def test_session_closed_ends_activations(tmp_path):
    clock = FakeClock()
    timeline = Timeline(tmp_path / "timeline.ndjson", clock=clock)

    timeline.hook("w0")("sent", activate("a", duration=60))
    clock.now = 3
    timeline.session_closed("w0")
    clock.now = 4
    timeline.hook("w1")("sent", activate("b", duration=60))

    entries = read_timeline(timeline.path)

    assert activation_intervals(entries)[0] == (0, 3, "a")
    assert max_concurrent_active(entries) == 1


def test_received_frames_are_recorded(tmp_path):
    timeline = Timeline(tmp_path / "timeline.ndjson")

    timeline.hook("w0")("received", Message.make(MsgType.REPORT, correlation_id=7))

    [entry] = read_timeline(timeline.path)
    assert entry.direction == "received"
    assert entry.correlation_id == 7
