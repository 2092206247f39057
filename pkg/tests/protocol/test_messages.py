import asyncio
import json
import random
import string

import pytest

from chaoscatch.agent.base import InjectionPoint, InjectorState
from chaoscatch.constants import MAX_FRAME_BYTES
from chaoscatch.errors import FrameError, UnknownMessageType
from chaoscatch.protocol.messages import (
    HEADER,
    Activate,
    CounterEntry,
    Event,
    Message,
    MsgType,
    Query,
    RegisterPoints,
    Report,
    decode,
    encode,
    read_frame,
)


def random_text(rng: random.Random) -> str:
    alphabet = string.ascii_letters + string.digits + "é漢$/#,_ "
    return "".join(rng.choice(alphabet) for _ in range(rng.randint(0, 24)))


def random_message(rng: random.Random) -> Message:
    msg_type = rng.choice(list(MsgType))
    cid = rng.randint(0, 2**31)

    match msg_type:
        case MsgType.ACTIVATE:
            body = Activate(point_id=random_text(rng), duration=rng.uniform(0.1, 60))
        case MsgType.QUERY:
            body = Query(what=rng.choice(["counters", "metrics", "all"]))
        case MsgType.REGISTER_POINTS:
            body = RegisterPoints(
                points=[
                    InjectionPoint(
                        point_id=random_text(rng),
                        unit=random_text(rng),
                        routine=random_text(rng),
                        block=rng.randint(0, 5),
                        error_kind=random_text(rng) or "OSError",
                        arm_ordinal=rng.randint(0, 3),
                    )
                    for _ in range(rng.randint(0, 4))
                ]
            )
        case MsgType.REPORT:
            body = Report(
                counters=[
                    CounterEntry(
                        point_id=random_text(rng),
                        state=InjectorState(
                            active=rng.random() < 0.5,
                            executions_observation=rng.randint(0, 10**6),
                            executions_perturbed=rng.randint(0, 10**6),
                            injections_fired=rng.randint(0, 10**6),
                        ),
                    )
                ],
                metrics={"cpu": rng.random(), "rss": float(rng.randint(0, 2**30))},
            )
        case MsgType.EVENT:
            body = Event(
                kind=random_text(rng), ts=rng.random() * 1e9, data={"n": rng.random()}
            )
        case _:
            body = None

    return Message.make(msg_type, body, correlation_id=cid)


def test_seeded_round_trips():
    rng = random.Random(1234)  # noqa: S311

    for _ in range(10_000):
        message = random_message(rng)
        assert decode(encode(message)) == message


def test_encoding_is_deterministic():
    message = Message.make(MsgType.ACTIVATE, Activate(point_id="p1", duration=5))

    assert encode(message) == encode(message.model_copy())


@pytest.mark.parametrize("cut", [0, 2, 4, 10])
def test_truncated_frame_is_rejected(cut):
    frame = encode(Message.make(MsgType.QUERY, Query()))

    with pytest.raises(FrameError):
        decode(frame[: len(frame) - cut - 1])


def test_trailing_garbage_is_rejected():
    frame = encode(Message.make(MsgType.QUERY, Query()))

    with pytest.raises(FrameError):
        decode(frame + b"x")


def test_oversized_announcement_is_rejected():
    with pytest.raises(FrameError, match="exceeds"):
        decode(HEADER.pack(MAX_FRAME_BYTES + 1) + b"{}")


def test_oversized_body_is_not_encoded():
    huge = Event(kind="log", ts=0, data={"text": "x" * (MAX_FRAME_BYTES + 1)})

    with pytest.raises(FrameError):
        encode(Message.make(MsgType.EVENT, huge))


def test_invalid_json_is_rejected():
    body = b"{not json"

    with pytest.raises(FrameError):
        decode(HEADER.pack(len(body)) + body)


def test_unknown_type_keeps_correlation_id():
    body = json.dumps({"msg_type": "RESTART", "correlation_id": 42}).encode()

    with pytest.raises(UnknownMessageType) as exc_info:
        decode(HEADER.pack(len(body)) + body)

    assert exc_info.value.correlation_id == 42


@pytest.mark.asyncio
async def test_read_frame_from_stream():
    first = Message.make(MsgType.QUERY, Query(), correlation_id=1)
    second = Message.make(MsgType.BYE, correlation_id=2)
    reader = asyncio.StreamReader()
    reader.feed_data(encode(first) + encode(second))
    reader.feed_eof()

    assert await read_frame(reader) == first
    assert await read_frame(reader) == second
    assert await read_frame(reader) is None


@pytest.mark.asyncio
async def test_read_frame_cut_mid_body():
    frame = encode(Message.make(MsgType.QUERY, Query()))
    reader = asyncio.StreamReader()
    reader.feed_data(frame[:-3])
    reader.feed_eof()

    with pytest.raises(FrameError):
        await read_frame(reader)
