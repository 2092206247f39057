"""
Cost of the agent on the CLI demo target. The same download is run with no
agent, with an idle agent nobody talks to, and under a perturbation with the
telemetry of exploration (full) and of falsification (focused). Each
condition runs several times and medians are compared.
"""

import logging
import os
import statistics
import time
from pathlib import Path

import psutil
from pydantic import BaseModel

from ..agent.base import Location, make_point_id
from ..classifier import load_spec
from ..constants import Mode, Verbosity
from ..controller.base import ExperimentPlan
from ..controller.blast_radius import BlastRadius
from ..controller.orchestrator import Controller
from ..controller.timeline import Timeline
from ..services import ExperimentStore
from .base import Workload, free_port
from .targets import demo_targets

logger = logging.getLogger(__name__)

CONDITIONS = ("uninstrumented", "idle", "exploration", "falsification")

# Executed once per chunk, its recovery arm leaves the output unchanged
PERTURBED_BLOCK = Location("Mirror", "fetch_chunk")

OVERHEAD_CHUNKS = 2048


class OverheadReport(BaseModel):
    """
    Medians per condition.

    Parameters
    ----------
    wall
        Seconds from launch to exit of the target
    cpu
        CPU seconds (user + system) consumed by the target
    """

    runs: int
    chunks: int
    wall: dict[str, float]
    cpu: dict[str, float]
    samples: dict[str, list[tuple[float, float]]]

    @property
    def idle_wall_overhead(self) -> float:
        """Relative wall-clock cost of an idle agent"""
        base = self.wall["uninstrumented"]
        return (self.wall["idle"] - base) / base if base else 0.0

    @property
    def focused_is_cheaper(self) -> bool:
        """Falsification telemetry costs less CPU than exploration telemetry"""
        return self.cpu["falsification"] < self.cpu["exploration"]


def _children_cpu() -> float:
    times = psutil.Process(os.getpid()).cpu_times()
    return times.children_user + times.children_system


async def _plain_run(
    workload: Workload, env: dict[str, str], run_dir: Path, timeout: float
) -> None:
    target = await workload.launch(env, run_dir)
    drive = await workload.drive(target, 0, timeout)
    await workload.finish(target, drive, timeout)


async def measure_overhead(
    root: Path,
    runs: int = 5,
    chunks: int = OVERHEAD_CHUNKS,
    timeout: float = 60.0,
) -> OverheadReport:
    """
    Runs the download demo ``runs`` times under every condition, in
    interleaved order so that a slow phase of the machine doesn't land on a
    single condition.
    """

    workload = demo_targets()["download"].workload(
        env={"CHAOS_DEMO_CHUNKS": str(chunks)}
    )
    controller = Controller(
        workload, load_spec("cli-task"), ExperimentStore(root), heartbeat=0.5
    )
    plan = ExperimentPlan(
        mode=Mode.EXPLORATION,
        run_id="overhead",
        window_seconds=timeout,
        stall_timeout_seconds=timeout,
        cooldown_seconds=0,
    )
    timeline = Timeline(root / "overhead" / "timeline.ndjson")
    point_id = make_point_id(PERTURBED_BLOCK, 0)

    samples: dict[str, list[tuple[float, float]]] = {c: [] for c in CONDITIONS}

    for n in range(runs):
        for condition in CONDITIONS:
            run_dir = root / "overhead" / f"{condition}-{n}"
            wall_start = time.monotonic()
            cpu_start = _children_cpu()

            match condition:
                case "uninstrumented":
                    await _plain_run(workload, {}, run_dir, timeout)
                case "idle":
                    env = {
                        "CHAOS_AGENT_PORT": str(free_port()),
                        "CHAOS_JOURNAL": str(run_dir / "journal.ndjson"),
                    }
                    await _plain_run(workload, env, run_dir, timeout)
                case _:
                    verbosity = (
                        Verbosity.FULL
                        if condition == "exploration"
                        else Verbosity.FOCUSED
                    )
                    await controller.run_window(
                        plan,
                        f"{condition}-{n}",
                        run_dir,
                        timeline,
                        blast=BlastRadius.from_plan(plan),
                        point_id=point_id,
                        verbosity=verbosity,
                    )

            samples[condition].append(
                (time.monotonic() - wall_start, _children_cpu() - cpu_start)
            )

        logger.info("Overhead run %s/%s done", n + 1, runs)

    return OverheadReport(
        runs=runs,
        chunks=chunks,
        wall={c: statistics.median(w for w, _ in s) for c, s in samples.items()},
        cpu={c: statistics.median(u for _, u in s) for c, s in samples.items()},
        samples=samples,
    )
