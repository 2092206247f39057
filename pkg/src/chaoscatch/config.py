"""
Experiment configuration. The tree comes out of a `providers.Configuration`
filled from the YAML file, then from ``CHAOS_*`` environment variables, then
from command line flags, and is validated here before anything runs.
"""

from collections.abc import Mapping
from pathlib import Path
from typing import Any, Literal

from pydantic import BaseModel, Field, ValidationError, field_validator

from .constants import DEFAULT_METRICS_THRESHOLD, Mode
from .controller.base import ExperimentPlan
from .errors import ConfigError

ENV_PREFIX = "CHAOS_"
DEFAULT_TRACE_NAME = "trace.ndjson"
MAX_PORT = 65535


class TargetConfig(BaseModel):
    """
    The application under experiment: either one of the demo targets, by
    name, or a command line.
    """

    demo: str | None = None
    variant: str | None = None
    kind: Literal["cli-task", "http"] = "cli-task"
    command: list[str] = Field(default_factory=list)
    artifact: str | None = None
    cwd: Path | None = None
    log_sink: Literal["file", "hook"] = "file"
    health_path: str = "/health"


class ExperimentConfig(BaseModel):
    """Everything an experiment needs to know, validated"""

    agent_endpoint: str = "127.0.0.1:0"
    mode: Mode = Mode.EXPLORATION
    window_seconds: float = Field(default=60.0, gt=0)
    stall_timeout_seconds: float = Field(default=300.0, gt=0)
    max_concurrent_active: int = Field(default=1, ge=1)
    budget_seconds: float | None = Field(default=None, ge=0)
    cooldown_seconds: float = Field(default=2.0, ge=0)
    spec: str | None = None
    comparator: str | None = None
    trace: Path | None = None
    experiment_dir: Path = Path(".chaoscatch")
    metrics_threshold: float = Field(default=DEFAULT_METRICS_THRESHOLD, gt=0)
    app_version: str = ""
    heartbeat_seconds: float = Field(default=5.0, gt=0)
    target: TargetConfig = Field(default_factory=TargetConfig)

    @field_validator("agent_endpoint")
    @classmethod
    def _host_and_port(cls, value: str) -> str:
        host, sep, port = value.rpartition(":")
        if not (sep and host and port.isdigit()) or int(port) > MAX_PORT:
            msg = f"Expected host:port, got {value!r}"
            raise ValueError(msg)
        return value

    @property
    def agent_host(self) -> str:
        """Host part of the agent endpoint"""
        return self.agent_endpoint.rpartition(":")[0]

    @property
    def agent_port(self) -> int:
        """Port of the agent endpoint, 0 to pick one per window"""
        return int(self.agent_endpoint.rpartition(":")[2])

    @property
    def trace_path(self) -> Path:
        """The configured trace, or where a recorded one is kept by default"""
        return self.trace or self.experiment_dir / DEFAULT_TRACE_NAME

    def plan(
        self, mode: Mode, run_id: str, targets: list[str] | None = None
    ) -> ExperimentPlan:
        """An experiment plan following this configuration"""

        try:
            return ExperimentPlan(
                mode=mode,
                run_id=run_id,
                targets=targets or [],
                window_seconds=self.window_seconds,
                stall_timeout_seconds=self.stall_timeout_seconds,
                max_concurrent_active=self.max_concurrent_active,
                budget_seconds=self.budget_seconds,
                cooldown_seconds=self.cooldown_seconds,
            )
        except ValidationError as e:
            msg = f"Invalid experiment plan: {e}"
            raise ConfigError(msg) from e


ENV_FIELDS = [name for name in ExperimentConfig.model_fields if name != "target"]


def env_overrides(environ: Mapping[str, str]) -> dict[str, Any]:
    """
    The configuration values set in the environment. Each top-level field
    maps to its upper-cased name, e.g. ``CHAOS_WINDOW_SECONDS``.
    """

    return {
        name: environ[key]
        for name in ENV_FIELDS
        if (key := f"{ENV_PREFIX}{name.upper()}") in environ and environ[key] != ""
    }


def load_config(tree: Mapping[str, Any] | None) -> ExperimentConfig:
    """
    Validates the merged configuration tree.

    Raises
    ------
    ConfigError
        The tree doesn't describe a valid experiment
    """

    try:
        return ExperimentConfig.model_validate(dict(tree or {}))
    except ValidationError as e:
        msg = f"Invalid configuration: {e}"
        raise ConfigError(msg) from e
