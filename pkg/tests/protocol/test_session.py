import asyncio
import json

import pytest

from chaoscatch.agent.core import Agent
from chaoscatch.agent.server import AgentServer
from chaoscatch.errors import AgentCommandError, AgentUnreachable, ProtocolError
from chaoscatch.harness.base import free_port
from chaoscatch.protocol.messages import (
    HEADER,
    Error,
    Event,
    Hello,
    Message,
    MsgType,
    RegisterPoints,
    Report,
    read_frame,
    write_frame,
)
from chaoscatch.protocol.session import AgentSession


@pytest.fixture
def agent():
    agent = Agent()
    agent.register_point(("Mirror", "fetch_chunk", 0), "ConnectionError")
    agent.register_point(("Mirror", "fetch_chunk", 0), "TimeoutError", 1)
    return agent


@pytest.fixture
def server(agent):
    server = AgentServer(agent, heartbeat=0.2)
    server.start()
    yield server
    server.shutdown(timeout=0.5)


def session_for(server: AgentServer, **kwargs) -> AgentSession:
    host, port = server.address
    return AgentSession(host, port, heartbeat=0.2, **kwargs)


@pytest.mark.asyncio
async def test_connect_lists_points(server, agent):
    async with session_for(server) as session:
        assert set(session.points) == {p.point_id for p in agent.points()}
        assert session.agent_pid is not None


@pytest.mark.asyncio
async def test_activate_and_query(server, agent):
    pid = agent.points()[0].point_id

    async with session_for(server) as session:
        report = await session.activate(pid, 10)
        assert report.counters[0].state.active

        for _ in range(3):
            agent.enter_block(pid)

        report = await session.query("counters", pid)
        assert report.counters[0].state.injections_fired == 3

        await session.deactivate(pid)
        assert agent.active_points() == []


@pytest.mark.asyncio
async def test_command_errors_are_typed(server):
    async with session_for(server) as session:
        with pytest.raises(AgentCommandError) as exc_info:
            await session.activate("nope", 1)
        assert exc_info.value.code == "unknown-point"

        with pytest.raises(AgentCommandError) as exc_info:
            await session.activate(next(iter(session.points)), -1)
        assert exc_info.value.code == "invalid-argument"

        # The session survives errors
        report = await session.query()
        assert len(report.counters) == 2


@pytest.mark.asyncio
async def test_replies_match_concurrent_commands(server, agent):
    ids = [p.point_id for p in agent.points()]

    async with session_for(server) as session:
        reports = await asyncio.gather(
            *(session.query("counters", ids[i % 2]) for i in range(20))
        )

    for i, report in enumerate(reports):
        assert report.counters[0].point_id == ids[i % 2]


@pytest.mark.asyncio
async def test_late_registration_is_pushed(server, agent):
    async with session_for(server) as session:
        pid = agent.register_point(("Mirror", "verify", 0), "ValueError")

        assert await session.wait_for_point(pid, timeout=2)


@pytest.mark.asyncio
async def test_events_are_forwarded(server):
    async with session_for(server) as session:
        server.push_event(Event(kind="log", ts=1.0, data={"line": "hello"}))

        event = await asyncio.wait_for(session.events.get(), timeout=2)

    assert event.kind == "log"
    assert event.data == {"line": "hello"}


@pytest.mark.asyncio
async def test_shutdown_sends_final_counters(agent):
    server = AgentServer(agent, heartbeat=0.2)
    server.start()
    pid = agent.points()[0].point_id
    agent.enter_block(pid)

    session = await session_for(server).connect()
    await asyncio.to_thread(server.shutdown)

    assert await session.wait_closed(2)
    assert session.said_bye
    assert not session.disconnected
    assert session.final is not None
    counters = {c.point_id: c.state for c in session.final.counters}
    assert counters[pid].executions_observation == 1

    await session.close()


@pytest.mark.asyncio
async def test_closed_session_refuses_commands(server):
    session = await session_for(server).connect()
    await session.close()

    with pytest.raises(ProtocolError):
        await session.query()


@pytest.mark.asyncio
async def test_nobody_listening():
    session = AgentSession("127.0.0.1", free_port(), connect_timeout=0.3)

    with pytest.raises(AgentUnreachable):
        await session.connect()


@pytest.mark.asyncio
async def test_held_host_sees_the_first_activation(server, agent):
    pid = agent.points()[0].point_id

    def held_host() -> bool:
        assert server.wait_for_controller(5)
        return agent.enter_block(pid).should_raise

    host = asyncio.create_task(asyncio.to_thread(held_host))

    async with session_for(server) as session:
        await session.activate(pid, 10)
        assert await host

    [(_, state)] = agent.snapshot_counters(pid)
    assert state.injections_fired == 1


@pytest.mark.asyncio
async def test_unknown_frame_from_agent_is_answered(agent):
    received: list[Message] = []
    finished = asyncio.Event()

    async def fake_agent(reader, writer):
        hello = await read_frame(reader)
        await write_frame(
            writer,
            Message.make(
                MsgType.HELLO, Hello(role="agent", pid=1), hello.correlation_id
            ),
        )
        points = RegisterPoints(points=agent.points())
        await write_frame(writer, Message.make(MsgType.REGISTER_POINTS, points))
        body = json.dumps({"msg_type": "GOSSIP", "correlation_id": 7}).encode()
        writer.write(HEADER.pack(len(body)) + body)

        while (message := await read_frame(reader)) is not None:
            received.append(message)
            if message.msg_type == MsgType.QUERY:
                await write_frame(
                    writer,
                    Message.make(MsgType.REPORT, Report(), message.correlation_id),
                )

        writer.close()
        finished.set()

    server = await asyncio.start_server(fake_agent, "127.0.0.1", 0)
    host, port = server.sockets[0].getsockname()[:2]

    async with server:
        async with AgentSession(host, port) as session:
            report = await session.query()
            assert session.alive

        await asyncio.wait_for(finished.wait(), timeout=2)

    [error] = [m for m in received if m.msg_type == MsgType.ERROR]

    assert report.counters == []
    assert error.correlation_id == 7
    assert error.body(Error).code == "unknown-type"
    assert not session.disconnected
