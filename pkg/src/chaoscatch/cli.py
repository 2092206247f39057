"""
The logic specific to the CLI interface
"""

import functools
import importlib.metadata
import logging
import os
import sys
from collections.abc import Callable
from pathlib import Path
from typing import Any

import rich_click as click
from rich.console import Console
from rich.logging import RichHandler
from rich.table import Table
from rich.theme import Theme

from .async_tools import run_sync
from .classifier import classify_corpus
from .config import ExperimentConfig, env_overrides
from .config_template import DEFAULT_CONFIG_CONTENT
from .constants import Category, HypothesisStatus, Mode
from .containers import Container, target_kind
from .controller.base import Baseline, ExplorationResult, Verdict
from .errors import (
    AgentUnreachable,
    ChaosError,
    ConfigError,
    ExperimentInvalid,
    HypothesisError,
)
from .harness.overhead import OVERHEAD_CHUNKS, measure_overhead
from .harness.targets import demo_targets
from .harness.trace import TraceRequest, save_trace
from .harness.workloads import HttpServiceWorkload, record_service_trace
from .report import make_entry, render
from .services import new_run_id

logger = logging.getLogger(__name__)

custom_theme = Theme(
    {
        "info": "dim cyan",
        "warning": "magenta",
        "danger": "bold red",
    }
)
console = Console(theme=custom_theme)
err_console = Console(theme=custom_theme, stderr=True)

EXIT_CODES: list[tuple[type[ChaosError], int]] = [
    (ConfigError, 2),
    (AgentUnreachable, 3),
    (ExperimentInvalid, 4),
    (HypothesisError, 4),
]

OVERRIDES = [
    "window_seconds",
    "stall_timeout_seconds",
    "max_concurrent_active",
    "spec",
    "trace",
    "experiment_dir",
    "app_version",
]


def print_version(ctx, _, value):
    """Prints the version and exits."""
    if not value or ctx.resilient_parsing:
        return

    version_str = importlib.metadata.version("chaoscatch")
    console.print(f"[bold green]chaoscatch version: [bold yellow]{version_str}[/]")

    ctx.exit()


def setup_logging(verbose: bool) -> None:
    """Sends our own logs to the terminal, through rich"""

    root = logging.getLogger("chaoscatch")

    for handler in list(root.handlers):
        if isinstance(handler, RichHandler):
            root.removeHandler(handler)

    root.addHandler(RichHandler(console=err_console, show_path=False))
    root.setLevel(logging.DEBUG if verbose else logging.INFO)


def handle_errors[**P, R](fn: Callable[P, R]) -> Callable[P, R]:
    """Turns our errors into a message and the matching exit code"""

    @functools.wraps(fn)
    def wrapper(*args: P.args, **kwargs: P.kwargs) -> R:
        try:
            return fn(*args, **kwargs)
        except ChaosError as e:
            code = next((c for t, c in EXIT_CODES if isinstance(e, t)), 1)
            err_console.print(f"[danger]Error:[/danger] {e}")
            sys.exit(code)

    return wrapper


def experiment_options(fn: Callable[..., Any]) -> Callable[..., Any]:
    """
    The flags overriding the configuration. They are applied to the
    container's configuration before the command runs.
    """

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        container: Container = click.get_current_context().obj

        for name in OVERRIDES:
            value = kwargs.pop(name)
            if value is not None:
                getattr(container.config, name).from_value(value)

        return fn(*args, **kwargs)

    options = [
        click.option(
            "--window",
            "window_seconds",
            type=float,
            help="How long each injector stays active, in seconds.",
        ),
        click.option(
            "--timeout",
            "stall_timeout_seconds",
            type=float,
            help="Kill a target still running after this many seconds.",
        ),
        click.option(
            "--max-active",
            "max_concurrent_active",
            type=int,
            help="How many injectors may be active at once.",
        ),
        click.option(
            "--spec",
            "spec",
            help="Steady-state preset: cli-task or http.",
        ),
        click.option(
            "--trace",
            "trace",
            type=click.Path(dir_okay=False),
            help="Recorded trace to replay against a service.",
        ),
        click.option(
            "--out",
            "experiment_dir",
            type=click.Path(file_okay=False),
            help="Experiment directory.",
        ),
        click.option(
            "--app-version",
            "app_version",
            help="Label of the version under test.",
        ),
    ]

    for option in reversed(options):
        wrapper = option(wrapper)

    return wrapper


@click.group()
@click.option(
    "--version",
    is_flag=True,
    callback=print_version,
    expose_value=False,
    is_eager=True,
    help="Show the version and exit.",
)
@click.option(
    "--config",
    "-c",
    default="chaoscatch.yml",
    help="Path to the configuration file.",
    type=click.Path(dir_okay=False),
)
@click.option("--verbose", "-v", is_flag=True, help="Show debug logs.")
@click.pass_context
def cli(ctx, config, verbose):
    """
    Chaos experiments on error-recovery blocks: inject errors, watch what
    the application does, tell which blocks are resilient, observable,
    debuggable or silent.
    """

    setup_logging(verbose)
    container = Container()

    config_path = Path(config)

    if config_path.exists():
        try:
            container.config.from_yaml(str(config_path))
        except Exception as e:
            console.print(f"[danger]Invalid configuration file {config}: {e}[/]")
            ctx.exit(2)
    elif config != "chaoscatch.yml":
        console.print(f"[warning] Configuration file {config} not found.[/warning]")

    container.config.from_dict(env_overrides(os.environ))

    ctx.obj = container


@cli.command()
@click.option(
    "--output",
    "-o",
    default="chaoscatch.yml",
    help="Path to the output configuration file.",
    type=click.Path(dir_okay=False, writable=True, resolve_path=True),
)
def init_config(output):
    """
    Creates a default configuration file.
    """
    output_path = Path(output)

    if output_path.exists():
        if not click.confirm(
            f"File {output_path} already exists. Overwrite?",
            abort=False,
        ):
            console.print("[yellow]Operation cancelled.[/yellow]")
            return

    try:
        output_path.write_text(DEFAULT_CONFIG_CONTENT, encoding="utf-8")
        console.print(f"[green]Default configuration written to {output_path}[/green]")
    except OSError as e:
        console.print(f"[danger]Error writing config file: {e}[/danger]")
        sys.exit(1)


# --- Printing ---


def _print_baseline(baseline: Baseline) -> None:
    table = Table(
        title=f"Baseline {baseline.run_id}", title_justify="left", title_style="bold"
    )
    table.add_column("Point", style="bold cyan")
    table.add_column("Block", style="magenta")
    table.add_column("Executions", justify="right")

    for point in baseline.points:
        state = baseline.counters.get(point.point_id)
        table.add_row(
            point.point_id,
            point.key,
            str(state.executions_observation if state else 0),
        )

    console.print(table)
    console.print(
        f"[info]{len(baseline.covered)} of {len(baseline.points)} points covered, "
        f"exit {baseline.exit.status.value}[/info]"
    )


def _print_results(results: list[ExplorationResult]) -> None:
    table = Table(title="Exploration", title_justify="left", title_style="bold")
    table.add_column("Block", style="magenta")
    table.add_column("Obs/Pert", justify="right")
    table.add_column("Exit")
    table.add_column("Categories", style="bold")

    for r in results:
        bundle = r.bundle
        label = (
            ", ".join(c.value for c in r.categories.categories)
            if not r.categories.uncovered
            else "[warning]uncovered[/warning]"
        )
        table.add_row(
            bundle.point.key if bundle.point else r.point_id,
            f"{bundle.counts.observation}/{bundle.counts.perturbed}",
            bundle.exit.status.value,
            label or "-",
        )

    console.print(table)


def _print_verdicts(verdicts: list[Verdict]) -> None:
    styles = {
        "validated": "green",
        "falsified": "danger",
        "not-applicable": "warning",
        "skipped": "info",
    }

    table = Table(title="Falsification", title_justify="left", title_style="bold")
    table.add_column("Hypothesis", style="bold cyan")
    table.add_column("Block", style="magenta")
    table.add_column("Category")
    table.add_column("Result")
    table.add_column("Why")

    for v in verdicts:
        table.add_row(
            v.hypothesis.hypothesis_id,
            v.hypothesis.key,
            v.hypothesis.category.value,
            f"[{styles[v.result]}]{v.result}[/]",
            "; ".join(v.diff[:3]),
        )

    console.print(table)


# --- Experiments ---


def _settings(container: Container) -> ExperimentConfig:
    return container.settings()


async def _record(
    container: Container,
    settings: ExperimentConfig,
    requests: list[TraceRequest],
    output: Path,
) -> Path:
    workload = container.recording_workload()
    assert isinstance(workload, HttpServiceWorkload)  # noqa: S101

    run_dir = settings.experiment_dir / "recording" / new_run_id(Mode.OBSERVATION)

    with console.status("[bold green]Recording the trace..."):
        trace = await record_service_trace(workload, requests, run_dir)

    save_trace(trace, output)
    console.print(f"[green]Recorded {len(trace.steps)} steps to {output}[/green]")

    return output


async def _ensure_trace(container: Container, settings: ExperimentConfig) -> None:
    """A demo service gets its scripted session recorded on first use"""

    if target_kind(settings) != "http" or settings.trace_path.exists():
        return

    if demo := settings.target.demo:
        await _record(
            container,
            settings,
            demo_targets()[demo].requests(),
            settings.trace_path,
        )


async def _observe(container: Container) -> Baseline:
    settings = _settings(container)
    await _ensure_trace(container, settings)

    controller = container.controller()
    plan = settings.plan(Mode.OBSERVATION, new_run_id(Mode.OBSERVATION))

    with console.status("[bold green]Observing..."):
        baseline = await controller.run_observation(plan)

    _print_baseline(baseline)
    return baseline


async def _explore(
    container: Container, baseline_id: str | None, points: tuple[str, ...]
) -> list[ExplorationResult]:
    settings = _settings(container)
    baseline = container.store().load_baseline(baseline_id)
    await _ensure_trace(container, settings)

    controller = container.controller()
    plan = settings.plan(Mode.EXPLORATION, new_run_id(Mode.EXPLORATION), list(points))

    with console.status("[bold green]Exploring..."):
        results = await controller.run_exploration(plan, baseline)

    _print_results(results)
    console.print(
        "[info]Accept the hypotheses you agree with: "
        "chaoscatch accept-hypothesis POINT CATEGORY[/info]"
    )

    return results


async def _falsify(container: Container, baseline_id: str | None) -> list[Verdict]:
    settings = _settings(container)
    store = container.store()

    hypotheses = store.hypotheses.with_status(
        HypothesisStatus.ACCEPTED,
        HypothesisStatus.VALIDATED,
        HypothesisStatus.FALSIFIED,
    )

    if not any(h.status != HypothesisStatus.FALSIFIED for h in hypotheses):
        console.print("[warning]No accepted hypothesis, nothing to falsify.[/warning]")
        return []

    controller = container.controller()

    if baseline_id:
        baseline = store.load_baseline(baseline_id)
    else:
        baseline = await _observe(container)

    plan = settings.plan(Mode.FALSIFICATION, new_run_id(Mode.FALSIFICATION))

    with console.status("[bold green]Falsifying..."):
        verdicts = await controller.run_falsification(hypotheses, baseline, plan)

    _print_verdicts(verdicts)
    return verdicts


@cli.command()
@experiment_options
@click.pass_obj
@handle_errors
@run_sync
async def observe(container: Container):
    """
    Runs the target once without any perturbation and records the baseline.
    """
    await _observe(container)


@cli.command()
@click.option("--baseline", "baseline_id", help="Baseline run id (default: latest).")
@click.option(
    "--point",
    "points",
    multiple=True,
    help="Point to perturb (default: every covered point).",
)
@experiment_options
@click.pass_obj
@handle_errors
@run_sync
async def explore(container: Container, baseline_id: str | None, points):
    """
    Perturbs every covered block in turn and proposes hypotheses.
    """
    await _explore(container, baseline_id, points)


@cli.command()
@click.option(
    "--baseline",
    "baseline_id",
    help="Baseline run id (default: a fresh observation).",
)
@experiment_options
@click.pass_obj
@handle_errors
@run_sync
async def falsify(container: Container, baseline_id: str | None):
    """
    Re-checks the accepted hypotheses against the current version.
    """
    await _falsify(container, baseline_id)


@cli.command()
@click.option(
    "--mode",
    type=click.Choice([m.value for m in Mode]),
    help="Mode to run (default: the configured one).",
)
@experiment_options
@click.pass_obj
@handle_errors
@run_sync
async def run(container: Container, mode: str | None):
    """
    Runs the experiment in the given mode.
    """

    match Mode(mode or _settings(container).mode):
        case Mode.OBSERVATION:
            await _observe(container)
        case Mode.EXPLORATION:
            await _explore(container, None, ())
        case Mode.FALSIFICATION:
            await _falsify(container, None)


@cli.command()
@click.option(
    "--format",
    "fmt",
    type=click.Choice(["json", "text"]),
    default="text",
    help="Output format.",
)
@click.option("--run", "run_id", help="Exploration run id (default: latest).")
@click.option(
    "--output",
    "-o",
    type=click.Path(dir_okay=False, writable=True, path_type=Path),
    help="Write the report there instead of the standard output.",
)
@click.option(
    "--by-unit",
    "group_depth",
    type=int,
    help="Also sum the categories up by unit name prefix of this depth.",
)
@experiment_options
@click.pass_obj
@handle_errors
def report(container: Container, fmt, run_id, output, group_depth):
    """
    Renders the report of an exploration, most critical blocks first.
    """

    store = container.store()
    run_id = run_id or store.latest_exploration()
    results = store.load_results(run_id)

    text = render(
        [make_entry(r.bundle, r.categories) for r in results],
        fmt,
        meta={"run_id": run_id},
    )

    if output:
        output.write_text(text, encoding="utf-8")
        console.print(f"[green]Report written to {output}[/green]")
    else:
        click.echo(text, nl=False)

    if group_depth:
        summary = classify_corpus(
            [r.bundle for r in results], container.spec(), group_depth
        )
        table = Table(title="By unit", title_justify="left", title_style="bold")
        table.add_column("Unit", style="magenta")
        for c in Category:
            table.add_column(c.value, justify="right")
        for unit, counts in summary.groups.items():
            table.add_row(unit, *(str(counts[c.value]) for c in Category))
        console.print(table)


@cli.command()
@click.argument("point")
@click.argument("category", type=click.Choice([c.value for c in Category]))
@experiment_options
@click.pass_obj
@handle_errors
def accept_hypothesis(container: Container, point: str, category: str):
    """
    Accepts a hypothesis about a block, by point id or identity key. Without
    a proposed one, records your own claim about a known block.
    """

    settings = _settings(container)
    store = container.store()

    try:
        known = store.load_baseline().points
    except ExperimentInvalid:
        known = []

    hypothesis = store.hypotheses.accept(
        point, Category(category), known, created_in=settings.app_version
    )

    console.print(
        f"[green]✔[/green] Hypothesis [bold cyan]{hypothesis.hypothesis_id}"
        f"[/bold cyan]: {hypothesis.key} is {hypothesis.category.value} "
        f"({hypothesis.status.value})"
    )


@cli.command()
@click.option(
    "--status",
    "statuses",
    multiple=True,
    type=click.Choice([s.value for s in HypothesisStatus]),
    help="Only show these statuses.",
)
@experiment_options
@click.pass_obj
@handle_errors
def list_hypotheses(container: Container, statuses):
    """
    Lists the stored hypotheses.
    """

    store = container.store().hypotheses
    hypotheses = (
        store.with_status(*(HypothesisStatus(s) for s in statuses))
        if statuses
        else store.all()
    )

    table = Table(title="Hypotheses", title_justify="left", title_style="bold")
    table.add_column("Id", style="bold cyan")
    table.add_column("Block", style="magenta")
    table.add_column("Category")
    table.add_column("Status")
    table.add_column("Version")

    for h in hypotheses:
        table.add_row(
            h.hypothesis_id,
            h.key,
            h.category.value,
            h.status.value,
            h.last_checked_in or h.created_in or "-",
        )

    console.print(table)


def _parse_request(value: str) -> TraceRequest:
    method, _, path = value.strip().partition(" ")

    if not path:
        method, path = "GET", method

    return TraceRequest(method=method.upper(), path=path.strip())


@cli.command()
@click.option(
    "--request",
    "-r",
    "requests",
    multiple=True,
    help="Request to send, e.g. 'GET /page/home' (default: the demo session).",
)
@click.option(
    "--output",
    "-o",
    type=click.Path(dir_okay=False, writable=True, path_type=Path),
    help="Where to save the trace (default: the configured trace path).",
)
@experiment_options
@click.pass_obj
@handle_errors
@run_sync
async def record_trace(container: Container, requests, output: Path | None):
    """
    Records what the service answers to a scripted session, as the trace
    to replay during experiments.
    """

    settings = _settings(container)

    if target_kind(settings) != "http":
        msg = "Only service targets (kind: http) replay a trace"
        raise ConfigError(msg)

    if requests:
        scripted = [_parse_request(r) for r in requests]
    elif settings.target.demo:
        scripted = demo_targets()[settings.target.demo].requests()
    else:
        msg = "Nothing to record, give at least one --request"
        raise ConfigError(msg)

    await _record(container, settings, scripted, output or settings.trace_path)


@cli.command()
@click.option(
    "--runs", type=click.IntRange(min=1), default=5, help="Runs per condition."
)
@click.option(
    "--chunks",
    type=click.IntRange(min=1),
    default=OVERHEAD_CHUNKS,
    help="Size of the downloaded file, in chunks.",
)
@experiment_options
@click.pass_obj
@handle_errors
@run_sync
async def overhead(container: Container, runs: int, chunks: int):
    """
    Measures what the agent costs the download demo target.
    """

    settings = _settings(container)

    with console.status("[bold green]Measuring..."):
        result = await measure_overhead(
            settings.experiment_dir,
            runs=runs,
            chunks=chunks,
            timeout=settings.stall_timeout_seconds,
        )

    table = Table(title="Overhead (medians)", title_justify="left", title_style="bold")
    table.add_column("Condition", style="magenta")
    table.add_column("Wall (s)", justify="right")
    table.add_column("CPU (s)", justify="right")

    for condition in result.wall:
        table.add_row(
            condition,
            f"{result.wall[condition]:.3f}",
            f"{result.cpu[condition]:.3f}",
        )

    console.print(table)
    console.print(
        f"[info]Idle agent: {result.idle_wall_overhead:+.1%} wall-clock, "
        f"focused telemetry cheaper than full: {result.focused_is_cheaper}[/info]"
    )
