"""
The agent's side of the chaos protocol. It listens for the controller on a
TCP port, runs on its own event loop in a daemon thread (the host
application doesn't need to know about asyncio) and forwards to the
controller everything the sidecar reports.
"""

import asyncio
import logging
import os
import threading
import time
from typing import TYPE_CHECKING

from pydantic import ValidationError

from ..async_tools import BackgroundLoop
from ..constants import PROTOCOL_VERSION
from ..errors import FrameError, UnknownMessageType, UnknownPoint
from ..protocol.messages import (
    Activate,
    Bye,
    CounterEntry,
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
from .core import Agent, AgentObserver

if TYPE_CHECKING:
    from ..agent.base import InjectionPoint
    from ..telemetry.sidecar import Sidecar

logger = logging.getLogger(__name__)


class _Session:
    """One connected controller and its outbox"""

    def __init__(self, writer: asyncio.StreamWriter):
        self.writer = writer
        self.outbox: asyncio.Queue[Message | None] = asyncio.Queue()
        self.closed = False

    async def pump(self) -> None:
        """Single writer of the connection, in outbox order"""

        try:
            while (message := await self.outbox.get()) is not None:
                await write_frame(self.writer, message)
        except (ConnectionError, OSError) as e:
            logger.debug("Controller connection lost: %s", e)
        finally:
            self.closed = True
            self.writer.close()

    def send(self, message: Message) -> None:
        """Queues a message, to be called from the loop"""
        if not self.closed:
            self.outbox.put_nowait(message)


class AgentServer(AgentObserver):
    """
    Parameters
    ----------
    agent
        The agent to expose
    host, port
        Where to listen. Port 0 picks a free port.
    heartbeat
        Seconds between two heartbeat events
    sidecar
        Gives access to the latest metrics sample for QUERY replies
    """

    def __init__(
        self,
        agent: Agent,
        host: str = "127.0.0.1",
        port: int = 0,
        heartbeat: float = 5.0,
        sidecar: "Sidecar | None" = None,
        app_name: str | None = None,
    ):
        self.agent = agent
        self.host = host
        self.port = port
        self.heartbeat = heartbeat
        self.sidecar = sidecar
        self.app_name = app_name
        self.first_command = threading.Event()

        self._loop = BackgroundLoop("chaoscatch-agent")
        self._server: asyncio.Server | None = None
        self._session: _Session | None = None
        self._tasks: set[asyncio.Task] = set()

        agent.add_observer(self)

    @property
    def address(self) -> tuple[str, int]:
        """Where the server listens"""
        return self.host, self.port

    def start(self) -> tuple[str, int]:
        """Starts listening, returns the bound address"""

        self._loop.start()
        self._loop.submit(self._listen()).result(timeout=10)
        logger.debug("Agent listening on %s:%s", self.host, self.port)
        return self.address

    async def _listen(self) -> None:
        self._server = await asyncio.start_server(self._handle, self.host, self.port)
        self.host, self.port = self._server.sockets[0].getsockname()[:2]

    def wait_for_controller(self, timeout: float | None = None) -> bool:
        """
        Blocks until the controller sent its first command. Returns False if
        `timeout` expired first.
        """

        return self.first_command.wait(timeout)

    def _spawn(self, coro) -> None:
        task = asyncio.create_task(coro)
        self._tasks.add(task)
        task.add_done_callback(self._tasks.discard)

    async def _handle(
        self, reader: asyncio.StreamReader, writer: asyncio.StreamWriter
    ) -> None:
        session = _Session(writer)

        try:
            first = await read_frame(reader)
        except (FrameError, UnknownMessageType, ConnectionError) as e:
            logger.warning("Bad opening from controller: %s", e)
            writer.close()
            return

        if first is None or first.msg_type != MsgType.HELLO:
            writer.close()
            return

        if first.version != PROTOCOL_VERSION:
            msg = f"Protocol version {first.version} not supported"
            await write_frame(
                writer,
                Message.make(
                    MsgType.ERROR,
                    Error(code="version-mismatch", message=msg),
                    first.correlation_id,
                ),
            )
            writer.close()
            return

        if self._session is not None:
            logger.info("New controller connection replaces the previous one")
            self._session.outbox.put_nowait(None)

        self._session = session
        self._spawn(session.pump())

        session.send(
            Message.make(
                MsgType.HELLO,
                Hello(role="agent", pid=os.getpid(), app=self.app_name),
                first.correlation_id,
            )
        )
        points = RegisterPoints(points=self.agent.points())
        session.send(Message.make(MsgType.REGISTER_POINTS, points))

        beat = asyncio.create_task(self._beat(session))

        try:
            await self._serve(reader, session)
        finally:
            beat.cancel()
            if self._session is session:
                self._session = None
            session.outbox.put_nowait(None)

    async def _beat(self, session: _Session) -> None:
        while not session.closed:
            await asyncio.sleep(self.heartbeat)
            beat = Event(kind="heartbeat", ts=time.time())
            session.send(Message.make(MsgType.EVENT, beat))

    async def _serve(self, reader: asyncio.StreamReader, session: _Session) -> None:
        while True:
            try:
                message = await read_frame(reader)
            except UnknownMessageType as e:
                session.send(
                    Message.make(
                        MsgType.ERROR,
                        Error(code="unknown-type", message=str(e)),
                        e.correlation_id,
                    )
                )
                continue
            except (FrameError, ConnectionError) as e:
                logger.warning("Controller stream broken: %s", e)
                return

            if message is None:
                return

            if message.msg_type == MsgType.BYE:
                return

            session.send(self._dispatch(message))

    def _dispatch(self, message: Message) -> Message:
        """
        Executes one command and builds its reply. A held host is only
        released once the first command has taken effect.
        """

        reply = self._execute(message)

        if message.msg_type in (MsgType.ACTIVATE, MsgType.DEACTIVATE, MsgType.QUERY):
            self.first_command.set()

        return reply

    def _execute(self, message: Message) -> Message:
        """Runs one command, the reply is REPORT or ERROR"""

        cid = message.correlation_id

        try:
            match message.msg_type:
                case MsgType.ACTIVATE:
                    body = message.body(Activate)
                    state = self.agent.set_active(body.point_id, True, body.duration)
                    report = Report(
                        counters=[CounterEntry(point_id=body.point_id, state=state)]
                    )
                case MsgType.DEACTIVATE:
                    body = message.body(Deactivate)
                    state = self.agent.set_active(body.point_id, False)
                    report = Report(
                        counters=[CounterEntry(point_id=body.point_id, state=state)]
                    )
                case MsgType.QUERY:
                    report = self._query(message.body(Query))
                case _:
                    msg = f"{message.msg_type.value} is not a command"
                    return Message.make(
                        MsgType.ERROR, Error(code="unexpected", message=msg), cid
                    )
        except UnknownPoint as e:
            return Message.make(
                MsgType.ERROR, Error(code="unknown-point", message=str(e)), cid
            )
        except (ValueError, ValidationError) as e:
            return Message.make(
                MsgType.ERROR, Error(code="invalid-argument", message=str(e)), cid
            )

        return Message.make(MsgType.REPORT, report, cid)

    def _query(self, query: Query) -> Report:
        report = Report()

        if query.what in ("counters", "all"):
            report.counters = [
                CounterEntry(point_id=pid, state=state)
                for pid, state in self.agent.snapshot_counters(query.point_id)
            ]

        if query.what in ("metrics", "all") and self.sidecar:
            snapshot = self.sidecar.sample_now() or self.sidecar.last_metrics
            if snapshot:
                report.metrics = snapshot.model_dump()

        return report

    # --- Called from any thread ---

    def _post(self, message: Message) -> None:
        def deliver():
            if self._session:
                self._session.send(message)

        self._loop.call_soon(deliver)

    def push_event(self, event: Event) -> None:
        """Forwards an event to the controller, if one is connected"""
        self._post(Message.make(MsgType.EVENT, event))

    def on_register(self, point: "InjectionPoint") -> None:
        """Late registrations are pushed as they happen"""
        self._post(
            Message.make(MsgType.REGISTER_POINTS, RegisterPoints(points=[point]))
        )

    def shutdown(self, reason: str = "exit", timeout: float = 2.0) -> None:
        """
        Sends the final counters (and the last metrics), says goodbye and
        stops the server.
        """

        async def close():
            session = self._session

            if session is not None:
                final = self._query(Query(what="counters"))
                if self.sidecar and self.sidecar.last_metrics:
                    final.metrics = self.sidecar.last_metrics.model_dump()

                session.send(
                    Message.make(
                        MsgType.EVENT,
                        Event(kind="final", ts=time.time(), data=final.model_dump()),
                    )
                )
                session.send(Message.make(MsgType.BYE, Bye(reason=reason)))
                session.outbox.put_nowait(None)

                async with asyncio.timeout(timeout):
                    while not session.closed:
                        await asyncio.sleep(0.01)

            if self._server:
                self._server.close()

        try:
            self._loop.submit(close()).result(timeout + 1)
        except Exception:
            logger.debug("Agent shutdown was not clean", exc_info=True)
        finally:
            self.agent.remove_observer(self)
            self._loop.stop()
