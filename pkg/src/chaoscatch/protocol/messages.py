"""
Messages exchanged between the controller and an agent, and the framing that
carries them: a 4-byte big-endian length followed by the UTF-8 JSON body.

The JSON body is serialized with sorted keys and no whitespace so that a
message always encodes to the same bytes.
"""

import asyncio
import json
import struct
from enum import Enum
from typing import Any, Literal

from pydantic import BaseModel, Field, ValidationError

from ..agent.base import InjectionPoint, InjectorState
from ..constants import MAX_FRAME_BYTES, PROTOCOL_VERSION
from ..errors import FrameError, UnknownMessageType

HEADER = struct.Struct(">I")


class MsgType(str, Enum):
    """The whole vocabulary of the protocol"""

    HELLO = "HELLO"
    REGISTER_POINTS = "REGISTER_POINTS"
    ACTIVATE = "ACTIVATE"
    DEACTIVATE = "DEACTIVATE"
    QUERY = "QUERY"
    REPORT = "REPORT"
    EVENT = "EVENT"
    ERROR = "ERROR"
    BYE = "BYE"


COMMANDS = frozenset({MsgType.ACTIVATE, MsgType.DEACTIVATE, MsgType.QUERY})
REPLIES = frozenset({MsgType.REPORT, MsgType.ERROR})


class Message(BaseModel, frozen=True):
    """One frame worth of protocol"""

    version: int = PROTOCOL_VERSION
    msg_type: MsgType
    correlation_id: int = 0
    payload: dict[str, Any] = Field(default_factory=dict)

    @classmethod
    def make(
        cls,
        msg_type: MsgType,
        body: BaseModel | None = None,
        correlation_id: int = 0,
    ) -> "Message":
        """Builds a message out of a typed body"""
        return cls(
            msg_type=msg_type,
            correlation_id=correlation_id,
            payload=body.model_dump(mode="json") if body is not None else {},
        )

    def body[M: BaseModel](self, model: type[M]) -> M:
        """Parses the payload as the typed body `model`"""
        return model.model_validate(self.payload)


# --- Typed bodies ---


class Hello(BaseModel):
    """Both sides introduce themselves with this"""

    version: int = PROTOCOL_VERSION
    role: Literal["controller", "agent"]
    pid: int | None = None
    app: str | None = None


class RegisterPoints(BaseModel):
    """Full or incremental list of injection points"""

    points: list[InjectionPoint]


class Activate(BaseModel):
    """Turn one injector on for `duration` seconds"""

    point_id: str
    duration: float


class Deactivate(BaseModel):
    """Turn one injector off"""

    point_id: str


class Query(BaseModel):
    """Ask the agent for counters (of one point or all) and/or a metrics sample"""

    what: Literal["counters", "metrics", "all"] = "all"
    point_id: str | None = None


class CounterEntry(BaseModel):
    """One injector state, attached to its id"""

    point_id: str
    state: InjectorState


class Report(BaseModel):
    """Reply to a command"""

    counters: list[CounterEntry] = Field(default_factory=list)
    metrics: dict[str, float] | None = None


class Event(BaseModel):
    """Something the agent saw happen"""

    kind: str
    ts: float
    point_id: str | None = None
    data: dict[str, Any] = Field(default_factory=dict)


class Error(BaseModel):
    """Reply to a command that could not be honored"""

    code: str
    message: str


class Bye(BaseModel):
    """The sender is going away"""

    reason: str = ""


# --- Framing ---


def encode(message: Message) -> bytes:
    """
    Serializes a message into one frame.

    Raises
    ------
    FrameError
        If the body would not fit in a frame
    """

    body = json.dumps(
        message.model_dump(mode="json"),
        sort_keys=True,
        separators=(",", ":"),
        ensure_ascii=False,
    ).encode("utf-8")

    if len(body) > MAX_FRAME_BYTES:
        msg = f"Frame of {len(body)} bytes exceeds {MAX_FRAME_BYTES}"
        raise FrameError(msg)

    return HEADER.pack(len(body)) + body


def decode_body(body: bytes) -> Message:
    """
    Parses the body of a frame (the part after the length prefix).

    Raises
    ------
    FrameError
        Invalid UTF-8, JSON or message structure
    UnknownMessageType
        The body is fine but the message type is not part of the vocabulary
    """

    try:
        raw = json.loads(body.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        msg = f"Undecodable frame body: {e}"
        raise FrameError(msg) from e

    if not isinstance(raw, dict):
        msg = "Frame body is not an object"
        raise FrameError(msg)

    msg_type = raw.get("msg_type")
    if msg_type not in MsgType._value2member_map_:
        cid = raw.get("correlation_id")
        msg = f"Unknown message type {msg_type!r}"
        raise UnknownMessageType(msg, correlation_id=cid if isinstance(cid, int) else 0)

    try:
        return Message.model_validate(raw)
    except ValidationError as e:
        msg = f"Malformed message: {e}"
        raise FrameError(msg) from e


def decode(frame: bytes) -> Message:
    """
    Parses exactly one complete frame. A frame that is shorter or longer than
    its length prefix says is rejected as a whole.
    """

    if len(frame) < HEADER.size:
        msg = "Truncated frame header"
        raise FrameError(msg)

    (length,) = HEADER.unpack_from(frame)

    if length > MAX_FRAME_BYTES:
        msg = f"Announced frame of {length} bytes exceeds {MAX_FRAME_BYTES}"
        raise FrameError(msg)

    body = frame[HEADER.size :]

    if len(body) != length:
        msg = f"Frame announces {length} bytes but carries {len(body)}"
        raise FrameError(msg)

    return decode_body(body)


async def read_frame(reader: asyncio.StreamReader) -> Message | None:
    """
    Reads the next message from a stream. Returns None on a clean end of
    stream (between two frames).
    """

    try:
        header = await reader.readexactly(HEADER.size)
    except asyncio.IncompleteReadError as e:
        if not e.partial:
            return None
        msg = "Stream ended inside a frame header"
        raise FrameError(msg) from e

    (length,) = HEADER.unpack(header)

    if length > MAX_FRAME_BYTES:
        msg = f"Announced frame of {length} bytes exceeds {MAX_FRAME_BYTES}"
        raise FrameError(msg)

    try:
        body = await reader.readexactly(length)
    except asyncio.IncompleteReadError as e:
        msg = f"Stream ended after {len(e.partial)} of {length} bytes"
        raise FrameError(msg) from e

    return decode_body(body)


async def write_frame(writer: asyncio.StreamWriter, message: Message) -> None:
    """Writes one message and waits for the buffer to drain"""
    writer.write(encode(message))
    await writer.drain()
