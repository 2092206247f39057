"""
The two kinds of workload: a batch task that runs to completion (a download
client, a converter, ...) and a request/response service driven by a
recorded trace.
"""

import asyncio
import hashlib
import logging
import time
from collections.abc import Mapping, Sequence
from pathlib import Path
from typing import ClassVar

import httpx
from tenacity import (
    AsyncRetrying,
    RetryError,
    retry_if_exception_type,
    stop_after_delay,
    wait_fixed,
)

from ..constants import ExitStatus
from ..errors import ExperimentInvalid
from ..telemetry.base import Interaction, record_exit
from .base import (
    DriveResult,
    LogSinkKind,
    TargetProcess,
    WindowOutcome,
    Workload,
    free_port,
)
from .trace import Trace, TraceRequest, record, replay_step

logger = logging.getLogger(__name__)

DEFAULT_STEP_GAP = 0.1


def _read_channel(path: Path) -> bytes:
    try:
        return path.read_bytes()
    except FileNotFoundError:
        return b""


def _hash_file(path: Path) -> str | None:
    if not path.is_file():
        return None
    return hashlib.sha256(path.read_bytes()).hexdigest()


class CliTaskWorkload(Workload):
    """
    A task that starts, does its job and exits. Its transcripts are its
    standard output and error output, its outcome is the artifact it
    produces (when it produces one) or else a normal exit.

    Parameters
    ----------
    artifact
        Path of the produced artifact, relative to the window directory
    """

    kind: ClassVar[str] = "cli-task"
    hold_start: ClassVar[bool] = True
    default_preset: ClassVar[str] = "cli-task"

    def __init__(
        self,
        command: Sequence[str],
        artifact: str | None = None,
        cwd: Path | None = None,
        env: Mapping[str, str] | None = None,
        log_sink: LogSinkKind = "file",
    ):
        super().__init__(command, cwd=cwd, env=env, log_sink=log_sink)
        self.artifact = artifact

    @property
    def has_artifact(self) -> bool:
        """Completion is decided on the artifact, when there is one"""
        return self.artifact is not None

    async def drive(
        self, target: TargetProcess, window: float, stall_timeout: float
    ) -> DriveResult:
        """
        Nothing to send, the task drives itself. Waits for it to exit, at
        most until the stall timeout counted from its launch.
        """

        remaining = max(stall_timeout - target.elapsed, 0)
        exited = await target.wait(remaining)

        if not exited:
            logger.info(
                "Target %s still running after %ss, considered stalled",
                target.pid,
                stall_timeout,
            )

        return DriveResult(exited=exited)

    async def finish(
        self, target: TargetProcess, drive: DriveResult, stall_timeout: float
    ) -> WindowOutcome:
        """Kills a stalled task, then collects its outputs"""

        if target.alive:
            await target.kill()
            exit_record = record_exit(ExitStatus.STALLED_KILLED, stall_timeout)
        else:
            code = target.process.returncode
            status = ExitStatus.NORMAL if code == 0 else ExitStatus.CRASHED
            exit_record = record_exit(status, code)

        target.close_files()

        stdout = _read_channel(target.stdout_path)
        stderr = _read_channel(target.stderr_path)

        artifact_hash = (
            _hash_file(target.run_dir / self.artifact) if self.artifact else None
        )

        return WindowOutcome(
            exit=exit_record,
            passes=[
                [
                    Interaction(interaction_id="stdout", body=stdout),
                    Interaction(
                        interaction_id="stderr",
                        body=stderr,
                        error_content=bool(stderr.strip()),
                    ),
                ]
            ],
            artifact_hash=artifact_hash,
            completed=exit_record.status == ExitStatus.NORMAL,
        )


class HttpServiceWorkload(Workload):
    """
    A long-running HTTP service. During a window the trace is replayed in a
    loop, step after step with a small gap, until the window is over.

    Parameters
    ----------
    trace
        The recorded session to replay
    health_path
        Path answering 2xx once the service is ready, and as long as it is
        healthy
    step_timeout
        A step without response after this long is missing
    step_gap
        Pause between two steps
    """

    kind: ClassVar[str] = "http"
    default_preset: ClassVar[str] = "http"

    def __init__(
        self,
        command: Sequence[str],
        trace: Trace,
        health_path: str = "/health",
        step_timeout: float = 5.0,
        step_gap: float = DEFAULT_STEP_GAP,
        cwd: Path | None = None,
        env: Mapping[str, str] | None = None,
        log_sink: LogSinkKind = "file",
    ):
        super().__init__(command, cwd=cwd, env=env, log_sink=log_sink)
        self.trace = trace
        self.health_path = health_path
        self.step_timeout = step_timeout
        self.step_gap = step_gap

    async def launch(
        self,
        env: Mapping[str, str],
        run_dir: Path,
        base_url: str | None = None,
        **extra: object,
    ) -> TargetProcess:
        """Starts the service on a port of its own"""

        port = free_port()
        return await super().launch(
            env, run_dir, base_url=f"http://127.0.0.1:{port}", port=port, **extra
        )

    def client(self, target: TargetProcess) -> httpx.AsyncClient:
        """An HTTP client bound to the service"""
        return httpx.AsyncClient(
            base_url=target.base_url or "", timeout=self.step_timeout
        )

    async def _healthy(self, client: httpx.AsyncClient) -> bool:
        try:
            response = await client.get(self.health_path)
        except httpx.HTTPError:
            return False
        return response.is_success

    async def wait_ready(self, target: TargetProcess, timeout: float) -> None:
        """
        Polls the health path until it answers.

        Raises
        ------
        ExperimentInvalid
            The service died or never became ready
        """

        async with self.client(target) as client:
            try:
                async for attempt in AsyncRetrying(
                    retry=retry_if_exception_type(httpx.HTTPError),
                    stop=stop_after_delay(timeout),
                    wait=wait_fixed(0.1),
                ):
                    with attempt:
                        if not target.alive:
                            msg = "Target exited before being ready"
                            raise ExperimentInvalid(msg)
                        response = await client.get(self.health_path)
                        response.raise_for_status()
            except RetryError as e:
                msg = f"Target not ready after {timeout}s"
                raise ExperimentInvalid(msg) from e

    async def drive(
        self, target: TargetProcess, window: float, stall_timeout: float
    ) -> DriveResult:
        """
        Replays the trace until the window is over, at least once. When the
        service dies, the steps that can't be sent anymore are missing.
        """

        deadline = time.monotonic() + window
        passes: list[list[Interaction]] = []

        if not self.trace.steps:
            await target.wait(window)
            return DriveResult(exited=not target.alive)

        async with self.client(target) as client:
            while True:
                transcripts = []

                for step in self.trace.steps:
                    if target.alive:
                        transcripts.append(await replay_step(client, step))
                        await asyncio.sleep(self.step_gap)
                    else:
                        transcripts.append(
                            Interaction(
                                interaction_id=step.interaction_id, missing=True
                            )
                        )

                passes.append(transcripts)

                if not target.alive or time.monotonic() >= deadline:
                    break

        logger.debug("Replayed %s passes of the trace", len(passes))

        return DriveResult(exited=not target.alive, passes=passes)

    async def finish(
        self, target: TargetProcess, drive: DriveResult, stall_timeout: float
    ) -> WindowOutcome:
        """
        A dead service crashed, an unhealthy one is stalled and gets killed,
        a healthy one is shut down normally.
        """

        if not target.alive:
            exit_record = record_exit(ExitStatus.CRASHED, target.process.returncode)
            target.close_files()
        else:
            async with self.client(target) as client:
                healthy = await self._healthy(client)

            if healthy:
                code = await target.terminate()
                exit_record = record_exit(ExitStatus.NORMAL, code)
            else:
                logger.info("Target %s stopped answering, killing it", target.pid)
                elapsed = target.elapsed
                await target.kill()
                exit_record = record_exit(ExitStatus.STALLED_KILLED, elapsed)

        return WindowOutcome(exit=exit_record, passes=drive.passes)


async def record_service_trace(
    workload: HttpServiceWorkload,
    requests: Sequence[TraceRequest],
    run_dir: Path,
    ready_timeout: float = 30.0,
) -> Trace:
    """
    Starts the service without any agent, sends it the scripted session and
    keeps what it answered as the trace to replay.
    """

    target = await workload.launch({}, run_dir)

    try:
        await workload.wait_ready(target, ready_timeout)
        async with workload.client(target) as client:
            return await record(client, requests, base_url=target.base_url or "")
    finally:
        await target.terminate()
