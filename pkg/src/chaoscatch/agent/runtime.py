"""
Bootstrap of the agent inside a target process. The workload launcher sets a
few ``CHAOS_*`` environment variables, the target calls `attach_from_env()`
once at start-up and gets its agent, sidecar and protocol server wired
together.
"""

import atexit
import logging
import os
from collections.abc import Mapping
from dataclasses import dataclass, field
from pathlib import Path

from pydantic import BaseModel, ValidationError

from ..constants import Verbosity
from ..errors import ConfigError
from ..telemetry.journal import Journal
from ..telemetry.sidecar import Sidecar
from .core import Agent
from .server import AgentServer

logger = logging.getLogger(__name__)

ENV_PREFIX = "CHAOS_"


class AgentSettings(BaseModel):
    """What the launcher tells the agent through the environment"""

    agent_port: int
    agent_host: str = "127.0.0.1"
    agent_hold: bool = False
    agent_hold_timeout: float = 30.0
    journal: Path | None = None
    app_log: Path | None = None
    telemetry_verbosity: Verbosity = Verbosity.FULL
    metrics_interval: float = 1.0
    heartbeat_seconds: float = 5.0

    @classmethod
    def from_env(cls, environ: Mapping[str, str]) -> "AgentSettings | None":
        """
        Reads the settings, None when no agent port is configured (the
        process runs uninstrumented).
        """

        if f"{ENV_PREFIX}AGENT_PORT" not in environ:
            return None

        values = {
            name: environ[key]
            for name in cls.model_fields
            if (key := f"{ENV_PREFIX}{name.upper()}") in environ and environ[key]
        }

        try:
            return cls.model_validate(values)
        except ValidationError as e:
            msg = f"Invalid agent environment: {e}"
            raise ConfigError(msg) from e


@dataclass
class Runtime:
    """The agent and its companions, as attached to this process"""

    agent: Agent
    sidecar: Sidecar
    server: AgentServer
    settings: AgentSettings
    _closed: bool = field(default=False, init=False)

    def ready(self) -> None:
        """
        To be called by the host once its points are registered. When the
        launcher asked for it, this holds until the controller sent its first
        command, or the hold timeout expired (in which case we carry on).
        """

        if not self.settings.agent_hold:
            return

        if not self.server.wait_for_controller(self.settings.agent_hold_timeout):
            logger.warning(
                "No controller command after %ss, starting anyway",
                self.settings.agent_hold_timeout,
            )

    def close(self) -> None:
        """Last metrics, final counters, goodbye"""

        if self._closed:
            return

        self._closed = True
        self.sidecar.stop()
        self.server.shutdown()


_runtime: Runtime | None = None


def current() -> Runtime | None:
    """The runtime attached to this process, if any"""
    return _runtime


def attach_from_env(environ: Mapping[str, str] | None = None) -> Runtime | None:
    """
    Attaches the agent according to the environment. Returns None when the
    environment doesn't ask for an agent. Calling it twice returns the same
    runtime.
    """

    global _runtime

    if _runtime is not None:
        return _runtime

    settings = AgentSettings.from_env(os.environ if environ is None else environ)

    if settings is None:
        return None

    agent = Agent()
    journal = Journal(settings.journal) if settings.journal else None
    server = AgentServer(
        agent,
        host=settings.agent_host,
        port=settings.agent_port,
        heartbeat=settings.heartbeat_seconds,
    )
    sidecar = Sidecar(
        journal=journal,
        verbosity=settings.telemetry_verbosity,
        metrics_interval=settings.metrics_interval,
        event_sink=server.push_event,
        log_hook=settings.app_log is None,
    )
    server.sidecar = sidecar
    agent.add_observer(sidecar)

    sidecar.start()
    server.start()

    _runtime = Runtime(agent=agent, sidecar=sidecar, server=server, settings=settings)
    atexit.register(_runtime.close)

    return _runtime
