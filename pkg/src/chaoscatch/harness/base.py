"""
Workloads: how a target is started, driven through one window and stopped.
A workload knows nothing about injectors, the controller tells it when.
"""

import abc
import asyncio
import contextlib
import logging
import os
import socket
import sys
import time
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, ClassVar, Literal

from pydantic import BaseModel, Field

from ..telemetry.base import ExitRecord, Interaction

logger = logging.getLogger(__name__)

LogSinkKind = Literal["file", "hook"]


def free_port(host: str = "127.0.0.1") -> int:
    """A port nobody listens on right now"""

    with socket.socket(socket.AF_INET, socket.SOCK_STREAM) as s:
        s.bind((host, 0))
        return s.getsockname()[1]


def _open_outputs(run_dir: Path) -> tuple[IO[bytes], IO[bytes]]:
    return (run_dir / "stdout.txt").open("wb"), (run_dir / "stderr.txt").open("wb")


@dataclass
class TargetProcess:
    """A running instance of the target"""

    process: asyncio.subprocess.Process
    run_dir: Path
    started: float
    base_url: str | None = None
    _files: list[IO[bytes]] = field(default_factory=list)

    @property
    def stdout_path(self) -> Path:
        """Where the target's standard output goes"""
        return self.run_dir / "stdout.txt"

    @property
    def stderr_path(self) -> Path:
        """Where the target's error output goes"""
        return self.run_dir / "stderr.txt"

    @property
    def pid(self) -> int:
        """OS process id"""
        return self.process.pid

    @property
    def alive(self) -> bool:
        """Not exited yet"""
        return self.process.returncode is None

    @property
    def elapsed(self) -> float:
        """Seconds since launch"""
        return time.monotonic() - self.started

    async def wait(self, timeout: float | None) -> bool:
        """Waits for the process to exit, False if it didn't in time"""

        try:
            async with asyncio.timeout(timeout):
                await self.process.wait()
        except TimeoutError:
            return False
        return True

    async def kill(self) -> None:
        """No questions asked"""

        if self.alive:
            with contextlib.suppress(ProcessLookupError):
                self.process.kill()
            await self.process.wait()

        self.close_files()

    async def terminate(self, grace: float = 5.0) -> int | None:
        """Asks politely, then kills after `grace` seconds"""

        if self.alive:
            with contextlib.suppress(ProcessLookupError):
                self.process.terminate()

            if not await self.wait(grace):
                logger.warning("Target %s ignored SIGTERM, killing it", self.pid)
                await self.kill()

        self.close_files()
        return self.process.returncode

    def close_files(self) -> None:
        """Closes the output files handed to the process"""

        for f in self._files:
            f.close()
        self._files.clear()


class DriveResult(BaseModel):
    """What driving the target during a window produced"""

    exited: bool = False
    passes: list[list[Interaction]] = Field(default_factory=list)


class WindowOutcome(BaseModel):
    """
    How the window ended for the target.

    Parameters
    ----------
    exit
        Exit record of the process
    passes
        Transcripts, one list per replay pass (one single pass for a task)
    artifact_hash
        Digest of the produced artifact, if the workload produces one and it
        exists
    completed
        The workload's own completion flag, None when it has none
    """

    exit: ExitRecord
    passes: list[list[Interaction]] = Field(default_factory=list)
    artifact_hash: str | None = None
    completed: bool | None = None


class Workload(abc.ABC):
    """
    Starts and drives a target.

    Parameters
    ----------
    command
        Command line of the target. ``{python}`` is replaced by the current
        interpreter, ``{run_dir}`` by the directory of the window and, for
        services, ``{port}`` by the port to listen on.
    cwd
        Working directory of the target
    env
        Extra environment variables
    log_sink
        ``file`` when the target writes its log where ``CHAOS_APP_LOG``
        says, ``hook`` to capture its `logging` records into the journal
    """

    kind: ClassVar[str]
    hold_start: ClassVar[bool] = False
    default_preset: ClassVar[str]

    def __init__(
        self,
        command: Sequence[str],
        cwd: Path | None = None,
        env: Mapping[str, str] | None = None,
        log_sink: LogSinkKind = "file",
    ):
        self.command = list(command)
        self.cwd = cwd
        self.env = dict(env or {})
        self.log_sink = log_sink

    @property
    def has_artifact(self) -> bool:
        """Whether completion is decided by comparing a produced artifact"""
        return False

    def format_command(self, run_dir: Path, **extra: object) -> list[str]:
        """The command line for one window"""

        values = {"python": sys.executable, "run_dir": str(run_dir), **extra}
        return [part.format(**values) for part in self.command]

    async def launch(
        self,
        env: Mapping[str, str],
        run_dir: Path,
        base_url: str | None = None,
        **extra: object,
    ) -> TargetProcess:
        """
        Starts the target with `env` added to the inherited environment. Its
        outputs go to files of `run_dir`.
        """

        run_dir.mkdir(parents=True, exist_ok=True)
        command = self.format_command(run_dir, **extra)

        stdout, stderr = _open_outputs(run_dir)

        logger.debug("Starting %s", command)

        process = await asyncio.create_subprocess_exec(
            *command,
            cwd=self.cwd,
            env={**os.environ, **self.env, **env},
            stdin=asyncio.subprocess.DEVNULL,
            stdout=stdout,
            stderr=stderr,
        )

        return TargetProcess(
            process=process,
            run_dir=run_dir,
            started=time.monotonic(),
            base_url=base_url,
            _files=[stdout, stderr],
        )

    async def wait_ready(  # noqa: B027
        self, target: TargetProcess, timeout: float
    ) -> None:
        """Returns once the target can be driven"""

    @abc.abstractmethod
    async def drive(
        self, target: TargetProcess, window: float, stall_timeout: float
    ) -> DriveResult:
        """Exercises the target for the duration of a window"""

        raise NotImplementedError

    @abc.abstractmethod
    async def finish(
        self, target: TargetProcess, drive: DriveResult, stall_timeout: float
    ) -> WindowOutcome:
        """Ends the window: stops the target and says how it ended"""

        raise NotImplementedError

    async def abort(self, target: TargetProcess) -> None:
        """Gets rid of the target after a failure"""
        await target.kill()
