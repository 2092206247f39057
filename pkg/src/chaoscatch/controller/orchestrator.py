"""
The controller: runs the target once per window, perturbed or not, and turns
what each window left behind into baselines, evidence bundles, hypotheses
and verdicts.
"""

import asyncio
import logging
import time
from collections.abc import Sequence
from contextlib import suppress
from pathlib import Path

from ..agent.base import InjectionPoint, InjectorState
from ..classifier import CategorySet, EvidenceBundle, SteadyStateSpec, classify
from ..constants import (
    DEFAULT_METRICS_THRESHOLD,
    ExitStatus,
    HypothesisStatus,
    Mode,
    Verbosity,
)
from ..errors import AgentUnreachable, ExperimentInvalid, ProtocolError
from ..harness.base import TargetProcess, WindowOutcome, Workload, free_port
from ..harness.workloads import HttpServiceWorkload
from ..protocol.messages import Report
from ..protocol.session import AgentSession, FrameHook
from ..services import ExperimentStore
from ..telemetry.journal import read_journal
from ..telemetry.logs import FileLogSink, JournalLogSink, LogSink, TimeWindow
from .base import (
    Baseline,
    ExperimentPlan,
    ExplorationResult,
    Hypothesis,
    Verdict,
    VerdictResult,
)
from .blast_radius import BlastRadius
from .evidence import WindowRecord, assemble_bundle, digest_pass, metrics_from_journal
from .hypotheses import HypothesisStore
from .timeline import Timeline

logger = logging.getLogger(__name__)

JOURNAL_FILE = "journal.ndjson"
APP_LOG_FILE = "app.log"
TIMELINE_FILE = "timeline.ndjson"


def _counters(report: Report | None) -> dict[str, InjectorState]:
    if report is None:
        return {}
    return {entry.point_id: entry.state for entry in report.counters}


def _derived(categories: CategorySet) -> str:
    return ", ".join(c.value for c in categories.categories) or "none"


class Controller:
    """
    Parameters
    ----------
    workload
        How to start and drive the target
    spec
        Steady-state definition the windows are classified with
    store
        The experiment directory
    agent_host, agent_port
        Where the agent of the target listens. Port 0 picks a free port for
        every window.
    app_version
        Label of the version under test, stored on hypotheses and verdicts
    heartbeat
        Agent heartbeat period
    connect_timeout
        How long a freshly started target has to open its agent endpoint
    ready_timeout
        How long a service has to become healthy
    """

    def __init__(
        self,
        workload: Workload,
        spec: SteadyStateSpec,
        store: ExperimentStore,
        agent_host: str = "127.0.0.1",
        agent_port: int = 0,
        app_version: str = "",
        metrics_threshold: float = DEFAULT_METRICS_THRESHOLD,
        heartbeat: float = 5.0,
        connect_timeout: float = 15.0,
        ready_timeout: float = 30.0,
    ):
        self.workload = workload
        self.spec = spec
        self.store = store
        self.agent_host = agent_host
        self.agent_port = agent_port
        self.app_version = app_version
        self.metrics_threshold = metrics_threshold
        self.heartbeat = heartbeat
        self.connect_timeout = connect_timeout
        self.ready_timeout = ready_timeout

    @property
    def hypotheses(self) -> HypothesisStore:
        """The hypothesis store of the experiment"""
        return self.store.hypotheses

    def _agent_env(
        self, run_dir: Path, port: int, verbosity: Verbosity
    ) -> dict[str, str]:
        env = {
            "CHAOS_AGENT_PORT": str(port),
            "CHAOS_AGENT_HOST": self.agent_host,
            "CHAOS_JOURNAL": str(run_dir / JOURNAL_FILE),
            "CHAOS_TELEMETRY_VERBOSITY": verbosity.value,
            "CHAOS_HEARTBEAT_SECONDS": str(self.heartbeat),
        }

        if self.workload.hold_start:
            env["CHAOS_AGENT_HOLD"] = "1"
            env["CHAOS_AGENT_HOLD_TIMEOUT"] = str(self.connect_timeout)

        if self.workload.log_sink == "file":
            env["CHAOS_APP_LOG"] = str(run_dir / APP_LOG_FILE)

        return env

    def _log_sink(self, run_dir: Path) -> LogSink:
        if self.workload.log_sink == "file":
            return FileLogSink(run_dir / APP_LOG_FILE)
        return JournalLogSink(run_dir / JOURNAL_FILE)

    async def _collect_counters(
        self, session: AgentSession, target: TargetProcess
    ) -> dict[str, InjectorState]:
        """
        Asks a live agent for its counters. A target that already exited
        left them in its final event.
        """

        if target.alive and session.alive:
            with suppress(ProtocolError):
                return _counters(await session.query("counters"))

        await session.wait_closed(2 * self.heartbeat)
        return _counters(session.final)

    async def _start(
        self, run_dir: Path, port: int, verbosity: Verbosity, on_frame: FrameHook
    ) -> tuple[TargetProcess, AgentSession]:
        target = await self.workload.launch(
            self._agent_env(run_dir, port, verbosity), run_dir
        )
        session = AgentSession(
            self.agent_host,
            port,
            heartbeat=self.heartbeat,
            connect_timeout=self.connect_timeout,
            on_frame=on_frame,
        )

        try:
            await session.connect()
        except (AgentUnreachable, ProtocolError):
            await self.workload.abort(target)
            target.close_files()
            raise

        return target, session

    async def _check_idle(self, session: AgentSession) -> None:
        report = await session.query("counters")

        if active := [e.point_id for e in report.counters if e.state.active]:
            msg = f"Injectors active outside of a window: {active}"
            raise ExperimentInvalid(msg)

    async def run_window(
        self,
        plan: ExperimentPlan,
        window_id: str,
        run_dir: Path,
        timeline: Timeline,
        blast: BlastRadius | None = None,
        point_id: str | None = None,
        verbosity: Verbosity = Verbosity.FULL,
    ) -> tuple[WindowRecord, list[InjectionPoint], WindowOutcome]:
        """
        Runs the target once. With a `point_id`, its injector is activated
        for the duration of the window, otherwise the window checks that no
        injector is active at all.
        """

        logger.info("Window %s starting", window_id)

        port = self.agent_port or free_port(self.agent_host)
        target, session = await self._start(
            run_dir, port, verbosity, timeline.hook(window_id)
        )
        notes: list[str] = []
        activated = False
        span_start = time.time()

        try:
            await self.workload.wait_ready(target, self.ready_timeout)

            if point_id is not None and blast is not None:
                activated = await self._activate(session, blast, plan, point_id, notes)

            if not activated:
                await self._check_idle(session)

            drive = await self.workload.drive(
                target, plan.window_seconds, plan.stall_timeout_seconds
            )
            disconnected = session.disconnected and target.alive

            if activated:
                await self._deactivate(session, blast, point_id)
        except BaseException:
            if activated:
                await self._deactivate(session, blast, point_id)
            await self.workload.abort(target)
            target.close_files()
            await session.close()
            timeline.session_closed(window_id)
            raise

        if target.alive and plan.cooldown_seconds:
            await asyncio.sleep(plan.cooldown_seconds)

        counters = await self._collect_counters(session, target)
        outcome = await self.workload.finish(target, drive, plan.stall_timeout_seconds)
        points = list(session.points.values())

        await session.close()
        timeline.session_closed(window_id)

        journal_path = run_dir / JOURNAL_FILE
        journal = read_journal(journal_path) if journal_path.exists() else []

        if disconnected:
            notes.append("agent disconnected while the target was running")

        record = WindowRecord(
            window_id=window_id,
            run_dir=run_dir,
            points=points,
            counters=counters,
            journal=journal,
            log_sink=self._log_sink(run_dir),
            span=TimeWindow(span_start, time.time()),
            passes=outcome.passes,
            exit=outcome.exit,
            artifact_hash=outcome.artifact_hash,
            disconnected=disconnected,
            activated=activated,
            notes=notes,
        )

        logger.info(
            "Window %s over: exit %s, %s pass(es)",
            window_id,
            outcome.exit.status.value,
            len(outcome.passes),
        )

        return record, points, outcome

    async def _deactivate(
        self,
        session: AgentSession,
        blast: BlastRadius | None,
        point_id: str | None,
    ) -> None:
        if point_id is None:
            return

        with suppress(ProtocolError):
            await session.deactivate(point_id)

        if blast is not None:
            blast.release(point_id)

    async def _activate(
        self,
        session: AgentSession,
        blast: BlastRadius,
        plan: ExperimentPlan,
        point_id: str,
        notes: list[str],
    ) -> bool:
        if not await session.wait_for_point(point_id, self.connect_timeout):
            notes.append("point not registered by the target")
            logger.warning("Point %s was not registered in this run", point_id)
            return False

        if not await blast.acquire(point_id, plan.window_seconds):
            notes.append("activation not admitted by the blast radius")
            return False

        try:
            await session.activate(point_id, plan.window_seconds)
        except ProtocolError:
            blast.release(point_id)
            raise

        return True

    def _outcome_flag(
        self, outcome: WindowOutcome, baseline: Baseline
    ) -> bool | None:
        if self.workload.has_artifact:
            return (
                outcome.artifact_hash is not None
                and outcome.artifact_hash == baseline.artifact_hash
            )
        return outcome.completed

    # --- Observation ---

    async def run_observation(self, plan: ExperimentPlan) -> Baseline:
        """
        Runs the workload once without any perturbation and keeps what it
        looked like as the baseline.

        Raises
        ------
        ExperimentInvalid
            An injector was active, or the target didn't end normally
        AgentUnreachable
            The target never opened its agent endpoint
        """

        run_dir = self.store.run_dir(Mode.OBSERVATION, plan.run_id)
        timeline = Timeline(run_dir / TIMELINE_FILE)

        window, points, outcome = await self.run_window(
            plan, "observation", run_dir / "observation", timeline
        )

        if outcome.exit.status != ExitStatus.NORMAL:
            msg = (
                f"The unperturbed target did not end normally "
                f"({outcome.exit.status.value}), no baseline"
            )
            raise ExperimentInvalid(msg)

        if points and not window.counters:
            msg = "The agent never reported its counters"
            raise ExperimentInvalid(msg)

        digests = (
            digest_pass(outcome.passes[0], self.spec.comparator_id, window.raw_dir)
            if outcome.passes
            else {}
        )

        self._check_replay_fidelity(digests)

        baseline = Baseline(
            run_id=plan.run_id,
            app_version=self.app_version,
            points=points,
            counters=window.counters,
            digests=digests,
            metrics=metrics_from_journal(window.journal),
            exit=outcome.exit,
            artifact_hash=outcome.artifact_hash,
        )

        self.store.save_baseline(baseline)

        logger.info(
            "Baseline %s: %s point(s), %s covered",
            plan.run_id,
            len(baseline.points),
            len(baseline.covered),
        )

        return baseline

    def _check_replay_fidelity(self, digests: dict) -> None:
        if not isinstance(self.workload, HttpServiceWorkload):
            return

        expected = digest_pass(
            self.workload.trace.expected_interactions(), self.spec.comparator_id
        )

        differing = [
            k
            for k, d in expected.items()
            if k not in digests or not d.equivalent(digests[k])
        ]

        if differing:
            logger.warning(
                "The baseline differs from the recorded trace on %s step(s): %s",
                len(differing),
                ", ".join(differing[:5]),
            )

    # --- Exploration ---

    def _ordered_targets(self, plan: ExperimentPlan, baseline: Baseline) -> list[str]:
        covered = baseline.covered

        if not plan.targets:
            return covered

        if uncovered := [t for t in plan.targets if t not in covered]:
            msg = f"Targets not covered by baseline {baseline.run_id}: {uncovered}"
            raise ExperimentInvalid(msg)

        order = {pid: n for n, pid in enumerate(covered)}
        return sorted(set(plan.targets), key=lambda pid: (order[pid], pid))

    async def run_exploration(
        self, plan: ExperimentPlan, baseline: Baseline
    ) -> list[ExplorationResult]:
        """
        Perturbs every target in turn, one window each on a freshly started
        target, and proposes the hypotheses the evidence supports.
        """

        targets = self._ordered_targets(plan, baseline)
        run_dir = self.store.run_dir(Mode.EXPLORATION, plan.run_id)
        timeline = Timeline(run_dir / TIMELINE_FILE)
        blast = BlastRadius.from_plan(plan)
        results = []

        logger.info("Exploring %s point(s)", len(targets))

        for point_id in targets:
            point = baseline.point(point_id)
            assert point is not None  # noqa: S101

            window, _, outcome = await self.run_window(
                plan,
                point_id,
                run_dir / point_id,
                timeline,
                blast=blast,
                point_id=point_id,
                verbosity=Verbosity.FULL,
            )
            window.outcome_flag = self._outcome_flag(outcome, baseline)

            bundle = assemble_bundle(
                point,
                window,
                baseline,
                self.spec.comparator_id,
                self.metrics_threshold,
            )
            categories = classify(bundle, self.spec)

            if window.notes:
                categories.notes["window"] = list(window.notes)

            result = ExplorationResult(
                point_id=point_id, bundle=bundle, categories=categories
            )
            self.store.save_result(plan.run_id, result)
            results.append(result)

            for category in categories.categories:
                self.hypotheses.propose(
                    point,
                    category,
                    evidence_ref=[f"exploration/{plan.run_id}/{point_id}"],
                    created_in=self.app_version,
                )

            logger.info("%s: %s", point.key, _derived(categories))

        return results

    # --- Falsification ---

    async def run_falsification(
        self,
        hypotheses: Sequence[Hypothesis],
        baseline: Baseline,
        plan: ExperimentPlan,
    ) -> list[Verdict]:
        """
        Re-runs the perturbation behind each hypothesis on the version under
        test and checks whether the claimed category still holds. Points are
        matched on their identity key, hypotheses of the same point share one
        window.
        """

        run_dir = self.store.run_dir(Mode.FALSIFICATION, plan.run_id)
        timeline = Timeline(run_dir / TIMELINE_FILE)
        blast = BlastRadius.from_plan(plan)
        verdicts: list[Verdict] = []
        groups: dict[str, list[Hypothesis]] = {}

        for h in hypotheses:
            if h.status == HypothesisStatus.FALSIFIED:
                logger.info("Skipping %s, already falsified", h.hypothesis_id)
                verdicts.append(self._verdict(h, "skipped", ["already falsified"]))
            elif h.status == HypothesisStatus.PROPOSED:
                logger.info("Skipping %s, not accepted", h.hypothesis_id)
                verdicts.append(self._verdict(h, "skipped", ["not accepted"]))
            else:
                groups.setdefault(h.key, []).append(h)

        for key, group in groups.items():
            point = baseline.find(key)

            if point is None or point.point_id not in baseline.covered:
                reason = "point no longer exists" if point is None else "not covered"
                for h in group:
                    verdicts.append(self._verdict(h, "not-applicable", [reason]))
                continue

            window, _, outcome = await self.run_window(
                plan,
                point.point_id,
                run_dir / point.point_id,
                timeline,
                blast=blast,
                point_id=point.point_id,
                verbosity=Verbosity.FOCUSED,
            )
            window.outcome_flag = self._outcome_flag(outcome, baseline)

            bundle = assemble_bundle(
                point,
                window,
                baseline,
                self.spec.comparator_id,
                self.metrics_threshold,
            )
            categories = classify(bundle, self.spec)
            evidence_ref = [f"falsification/{plan.run_id}/{point.point_id}"]

            for h in group:
                verdicts.append(
                    self._check(h, categories, bundle, evidence_ref, plan.run_id)
                )

        self.store.save_verdicts(plan.run_id, verdicts)
        return verdicts

    def _verdict(
        self, h: Hypothesis, result: VerdictResult, diff: list[str]
    ) -> Verdict:
        return Verdict(
            hypothesis=h, result=result, diff=diff, app_version=self.app_version
        )

    def _check(
        self,
        h: Hypothesis,
        categories: CategorySet,
        bundle: EvidenceBundle,
        evidence_ref: list[str],
        run_id: str,
    ) -> Verdict:
        if categories.uncovered:
            return Verdict(
                hypothesis=h,
                result="not-applicable",
                evidence=bundle,
                categories=categories,
                diff=["no injection fired during the window"],
                app_version=self.app_version,
            )

        if h.category in categories.categories:
            status = HypothesisStatus.VALIDATED
            diff: list[str] = []
        else:
            status = HypothesisStatus.FALSIFIED
            diff = [f"expected {h.category.value}, derived {_derived(categories)}"]
            diff += [
                f"{name}: {note}"
                for name, lines in categories.notes.items()
                for note in lines
            ]

        updated = self.hypotheses.transition(
            h,
            status,
            checked_in=self.app_version or run_id,
            evidence_ref=evidence_ref,
        )

        logger.info("%s %s: %s", h.key, h.category.value, status.value)

        return Verdict(
            hypothesis=updated,
            result="validated" if status == HypothesisStatus.VALIDATED else "falsified",
            evidence=bundle,
            categories=categories,
            diff=diff,
            app_version=self.app_version,
        )
