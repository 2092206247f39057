"""Dependency injection container for chaoscatch."""

from dependency_injector import containers, providers

from .classifier import SteadyStateSpec, load_spec
from .config import ExperimentConfig, TargetConfig, load_config
from .controller.orchestrator import Controller
from .errors import ConfigError
from .harness.base import Workload
from .harness.targets import demo_targets
from .harness.trace import Trace, load_trace
from .harness.workloads import CliTaskWorkload, HttpServiceWorkload
from .services import ExperimentStore


def target_kind(settings: ExperimentConfig) -> str:
    """Kind of the configured target, a demo target decides for itself"""

    if demo := settings.target.demo:
        targets = demo_targets()
        if demo not in targets:
            error_msg = f"Unknown demo target {demo!r}, known: {sorted(targets)}"
            raise ConfigError(error_msg)
        return targets[demo].kind

    return settings.target.kind


def create_spec(settings: ExperimentConfig) -> SteadyStateSpec:
    """The steady-state spec, the target's preset unless configured"""
    return load_spec(settings.spec or target_kind(settings), settings.comparator)


def create_trace(settings: ExperimentConfig) -> Trace:
    """The trace to replay against a service"""

    path = settings.trace_path

    if not path.exists():
        error_msg = f"No trace at {path}, record one with 'chaoscatch record-trace'"
        raise ConfigError(error_msg)

    return load_trace(path)


def _require_command(target: TargetConfig) -> None:
    if not target.command:
        error_msg = "The target has neither a demo name nor a command"
        raise ConfigError(error_msg)


def create_cli_workload(target: TargetConfig) -> Workload:
    """Factory function to create a CLI task workload"""

    if target.demo:
        return demo_targets()[target.demo].workload(
            variant=target.variant, log_sink=target.log_sink
        )

    _require_command(target)

    return CliTaskWorkload(
        target.command,
        artifact=target.artifact,
        cwd=target.cwd,
        log_sink=target.log_sink,
    )


def create_http_workload(target: TargetConfig, trace: Trace | None) -> Workload:
    """Factory function to create a service workload"""

    if target.demo:
        return demo_targets()[target.demo].workload(
            trace=trace,
            variant=target.variant,
            log_sink=target.log_sink,
            health_path=target.health_path,
        )

    _require_command(target)

    return HttpServiceWorkload(
        target.command,
        trace=trace or Trace(),
        health_path=target.health_path,
        cwd=target.cwd,
        log_sink=target.log_sink,
    )


class Container(containers.DeclarativeContainer):
    """Dependency injection container for chaoscatch."""

    config = providers.Configuration()

    settings = providers.Singleton(load_config, config)

    store = providers.Singleton(
        ExperimentStore,
        root=settings.provided.experiment_dir,
    )

    spec = providers.Factory(create_spec, settings)

    trace = providers.Factory(create_trace, settings)

    # Workloads
    cli_task_workload = providers.Factory(
        create_cli_workload,
        target=settings.provided.target,
    )

    http_workload = providers.Factory(
        create_http_workload,
        target=settings.provided.target,
        trace=trace,
    )

    # Same service, without a trace yet
    recording_workload = providers.Factory(
        create_http_workload,
        target=settings.provided.target,
        trace=None,
    )

    workload = providers.Selector(
        providers.Callable(target_kind, settings),
        **{"cli-task": cli_task_workload},
        http=http_workload,
    )

    controller = providers.Factory(
        Controller,
        workload=workload,
        spec=spec,
        store=store,
        agent_host=settings.provided.agent_host,
        agent_port=settings.provided.agent_port,
        app_version=settings.provided.app_version,
        metrics_threshold=settings.provided.metrics_threshold,
        heartbeat=settings.provided.heartbeat_seconds,
    )
