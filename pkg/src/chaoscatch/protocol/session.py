"""
Controller side of the protocol: one `AgentSession` per agent. Commands are
serialized and each gets exactly one reply, matched by correlation id, while
events are consumed in the background so that they never hold a reply up.
"""

import asyncio
import itertools
import logging
import time
from collections.abc import Callable
from typing import Literal

from pydantic import BaseModel
from tenacity import (
    AsyncRetrying,
    RetryError,
    retry_if_exception_type,
    stop_after_delay,
    wait_fixed,
)

from ..agent.base import InjectionPoint
from ..errors import (
    AgentCommandError,
    AgentUnreachable,
    FrameError,
    ProtocolError,
    UnknownMessageType,
)
from .messages import (
    Activate,
    Bye,
    Deactivate,
    Error,
    Event,
    Hello,
    Message,
    MsgType,
    Query,
    RegisterPoints,
    Report,
    read_frame,
    write_frame,
)

logger = logging.getLogger(__name__)

Direction = Literal["sent", "received"]
FrameHook = Callable[[Direction, Message], None]


class AgentSession:
    """
    Parameters
    ----------
    host, port
        Where the agent listens
    heartbeat
        The agent's heartbeat period. Two missed heartbeats mean the agent is
        gone.
    connect_timeout
        How long to keep trying to connect (the agent may still be booting)
    reply_timeout
        How long to wait for the reply to a command
    on_frame
        Called with every frame sent or received, for the timeline
    """

    def __init__(
        self,
        host: str,
        port: int,
        heartbeat: float = 5.0,
        connect_timeout: float = 10.0,
        reply_timeout: float = 10.0,
        on_frame: FrameHook | None = None,
    ):
        self.host = host
        self.port = port
        self.heartbeat = heartbeat
        self.connect_timeout = connect_timeout
        self.reply_timeout = reply_timeout
        self.on_frame = on_frame

        self.points: dict[str, InjectionPoint] = {}
        self.events: asyncio.Queue[Event] = asyncio.Queue()
        self.final: Report | None = None
        self.agent_pid: int | None = None
        self.disconnected = False
        self.said_bye = False
        self._closing = False

        self._cids = itertools.count(1)
        self._pending: dict[int, asyncio.Future[Message]] = {}
        self._command_lock = asyncio.Lock()
        self._registered = asyncio.Event()
        self._closed = asyncio.Event()
        self._last_seen = time.monotonic()
        self._reader: asyncio.StreamReader | None = None
        self._writer: asyncio.StreamWriter | None = None
        self._tasks: list[asyncio.Task] = []

    @property
    def endpoint(self) -> str:
        """host:port"""
        return f"{self.host}:{self.port}"

    @property
    def alive(self) -> bool:
        """Connected and not said goodbye"""
        return not self._closed.is_set()

    def _trace(self, direction: Direction, message: Message) -> None:
        if self.on_frame:
            try:
                self.on_frame(direction, message)
            except Exception:
                logger.exception("Timeline hook failed")

    async def _send(self, message: Message) -> None:
        assert self._writer is not None  # noqa: S101
        self._trace("sent", message)
        await write_frame(self._writer, message)

    async def _open(self) -> None:
        try:
            async for attempt in AsyncRetrying(
                retry=retry_if_exception_type(OSError),
                stop=stop_after_delay(self.connect_timeout),
                wait=wait_fixed(0.1),
            ):
                with attempt:
                    self._reader, self._writer = await asyncio.open_connection(
                        self.host, self.port
                    )
        except RetryError as e:
            msg = f"No agent at {self.endpoint}"
            raise AgentUnreachable(msg) from e

    async def connect(self, wait_registration: bool = True) -> "AgentSession":
        """
        Connects, says HELLO and waits for the agent's HELLO and its first
        REGISTER_POINTS.

        Raises
        ------
        AgentUnreachable
            Nobody answered in time
        ProtocolError
            The agent refused the session (version mismatch)
        """

        await self._open()
        assert self._reader is not None  # noqa: S101

        cid = next(self._cids)
        await self._send(
            Message.make(MsgType.HELLO, Hello(role="controller"), correlation_id=cid)
        )

        try:
            async with asyncio.timeout(self.reply_timeout):
                reply = await read_frame(self._reader)
        except (TimeoutError, FrameError, ConnectionError) as e:
            await self._drop_connection()
            msg = f"Agent at {self.endpoint} did not answer HELLO"
            raise AgentUnreachable(msg) from e

        if reply is not None:
            self._trace("received", reply)

        if reply is None or reply.msg_type == MsgType.ERROR:
            await self._drop_connection()
            detail = reply.body(Error).message if reply else "connection closed"
            msg = f"Agent at {self.endpoint} refused the session: {detail}"
            raise ProtocolError(msg)

        if reply.msg_type != MsgType.HELLO:
            await self._drop_connection()
            msg = f"Expected HELLO, got {reply.msg_type.value}"
            raise ProtocolError(msg)

        self.agent_pid = reply.body(Hello).pid
        self._last_seen = time.monotonic()
        self._tasks = [
            asyncio.create_task(self._read_loop()),
            asyncio.create_task(self._watchdog()),
        ]

        if wait_registration:
            try:
                async with asyncio.timeout(self.reply_timeout):
                    await self._registered.wait()
            except TimeoutError as e:
                msg = f"Agent at {self.endpoint} never registered its points"
                raise ProtocolError(msg) from e

        return self

    async def _read_loop(self) -> None:
        assert self._reader is not None  # noqa: S101

        try:
            while True:
                try:
                    message = await read_frame(self._reader)
                except UnknownMessageType as e:
                    self._last_seen = time.monotonic()
                    logger.warning("Agent at %s: %s", self.endpoint, e)
                    await self._send(
                        Message.make(
                            MsgType.ERROR,
                            Error(code="unknown-type", message=str(e)),
                            e.correlation_id,
                        )
                    )
                    continue

                if message is None:
                    break

                self._last_seen = time.monotonic()
                self._trace("received", message)
                self._on_message(message)

                if message.msg_type == MsgType.BYE:
                    self.said_bye = True
                    break
        except (FrameError, ConnectionError) as e:
            logger.warning("Lost agent at %s: %s", self.endpoint, e)
        except ProtocolError as e:
            logger.warning("Agent at %s sent garbage: %s", self.endpoint, e)
        finally:
            self._mark_closed()

    def _on_message(self, message: Message) -> None:
        match message.msg_type:
            case MsgType.REGISTER_POINTS:
                for point in message.body(RegisterPoints).points:
                    self.points[point.point_id] = point
                self._registered.set()
            case MsgType.REPORT | MsgType.ERROR:
                future = self._pending.pop(message.correlation_id, None)
                if future is None or future.done():
                    logger.warning(
                        "Unexpected reply with correlation id %s",
                        message.correlation_id,
                    )
                else:
                    future.set_result(message)
            case MsgType.EVENT:
                event = message.body(Event)
                if event.kind == "final":
                    self.final = Report.model_validate(event.data)
                if event.kind != "heartbeat":
                    self.events.put_nowait(event)
            case _:
                pass

    async def _watchdog(self) -> None:
        while not self._closed.is_set():
            await asyncio.sleep(self.heartbeat / 2)
            if time.monotonic() - self._last_seen > 2 * self.heartbeat:
                logger.warning("Agent at %s missed two heartbeats", self.endpoint)
                self._mark_closed()
                if self._writer:
                    self._writer.close()

    def _mark_closed(self) -> None:
        if not self._closed.is_set() and not (self.said_bye or self._closing):
            self.disconnected = True

        self._closed.set()

        for future in self._pending.values():
            if not future.done():
                future.set_exception(ProtocolError("Agent connection lost"))
        self._pending.clear()

    async def wait_closed(self, timeout: float | None = None) -> bool:
        """Waits for the agent to go away, returns False on timeout"""

        try:
            async with asyncio.timeout(timeout):
                await self._closed.wait()
        except TimeoutError:
            return False
        return True

    async def wait_for_point(self, point_id: str, timeout: float) -> bool:
        """
        Waits until `point_id` has been registered. Points registered after
        the session opened arrive in later REGISTER_POINTS frames.
        """

        deadline = time.monotonic() + timeout

        while point_id not in self.points:
            if not self.alive or time.monotonic() >= deadline:
                return False
            await asyncio.sleep(0.05)

        return True

    async def command(self, msg_type: MsgType, body: BaseModel) -> Report:
        """
        Sends a command and waits for its reply.

        Raises
        ------
        AgentCommandError
            The agent replied ERROR
        ProtocolError
            The session is gone or the reply never came
        """

        async with self._command_lock:
            if not self.alive:
                msg = f"Session with {self.endpoint} is closed"
                raise ProtocolError(msg)

            cid = next(self._cids)
            loop = asyncio.get_running_loop()
            future: asyncio.Future[Message] = loop.create_future()
            self._pending[cid] = future

            try:
                await self._send(Message.make(msg_type, body, correlation_id=cid))
                async with asyncio.timeout(self.reply_timeout):
                    reply = await future
            except (TimeoutError, ConnectionError) as e:
                self._pending.pop(cid, None)
                msg = f"No reply to {msg_type.value} from {self.endpoint}"
                raise ProtocolError(msg) from e

        if reply.msg_type == MsgType.ERROR:
            error = reply.body(Error)
            raise AgentCommandError(error.code, error.message)

        return reply.body(Report)

    async def activate(self, point_id: str, duration: float) -> Report:
        """Turns an injector on"""
        return await self.command(
            MsgType.ACTIVATE, Activate(point_id=point_id, duration=duration)
        )

    async def deactivate(self, point_id: str) -> Report:
        """Turns an injector off"""
        return await self.command(MsgType.DEACTIVATE, Deactivate(point_id=point_id))

    async def query(
        self,
        what: Literal["counters", "metrics", "all"] = "all",
        point_id: str | None = None,
    ) -> Report:
        """Asks for counters and/or metrics"""
        return await self.command(MsgType.QUERY, Query(what=what, point_id=point_id))

    async def _drop_connection(self) -> None:
        if self._writer:
            self._writer.close()
            try:
                await self._writer.wait_closed()
            except (ConnectionError, OSError):
                pass
        self._closed.set()

    async def close(self) -> None:
        """Says goodbye (if still possible) and tears the session down"""

        self._closing = True

        if self.alive and self._writer:
            try:
                await self._send(Message.make(MsgType.BYE, Bye(reason="done")))
            except (ConnectionError, OSError):
                pass

        self._closed.set()

        for task in self._tasks:
            task.cancel()
        await asyncio.gather(*self._tasks, return_exceptions=True)

        await self._drop_connection()

    async def __aenter__(self) -> "AgentSession":
        return await self.connect()

    async def __aexit__(self, *_) -> None:
        await self.close()
