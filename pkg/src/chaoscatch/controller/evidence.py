"""
Assembly of evidence bundles out of what a window left behind: counters from
the agent, the journal, the application log and the workload's transcripts.
"""

import logging
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field
from pathlib import Path

from ..agent.base import InjectionPoint, InjectorState
from ..classifier import Counts, EvidenceBundle
from ..constants import (
    DEFAULT_METRICS_THRESHOLD,
    DiffVerdict,
    ExitStatus,
    JournalKind,
)
from ..telemetry.base import (
    BehaviorDigest,
    ExitRecord,
    Interaction,
    InteractionDiff,
    JournalRecord,
    MetricsSnapshot,
)
from ..telemetry.digest import compare_digests, digest_behavior
from ..telemetry.logs import LogSink, TimeWindow, scan_logs
from ..telemetry.metrics import diff_metrics, summarize
from .base import Baseline

logger = logging.getLogger(__name__)

_PRIORITY = {
    DiffVerdict.EQUAL: 0,
    DiffVerdict.MISSING: 1,
    DiffVerdict.DIFFERENT: 2,
}


def merge_diffs(passes: Iterable[list[InteractionDiff]]) -> list[InteractionDiff]:
    """
    Folds the diffs of several replay passes into one per interaction. The
    worst verdict wins (different, then missing, then equal) and the flags
    are or-ed.
    """

    merged: dict[str, InteractionDiff] = {}

    for diffs in passes:
        for diff in diffs:
            if (known := merged.get(diff.interaction_id)) is None:
                merged[diff.interaction_id] = diff
                continue

            verdict = max(known.verdict, diff.verdict, key=_PRIORITY.__getitem__)
            merged[diff.interaction_id] = InteractionDiff(
                interaction_id=diff.interaction_id,
                verdict=verdict,
                status_changed=known.status_changed or diff.status_changed,
                error_content=known.error_content or diff.error_content,
            )

    return [merged[k] for k in sorted(merged)]


def digest_pass(
    interactions: Sequence[Interaction],
    comparator_id: str,
    raw_dir: Path | None = None,
) -> dict[str, BehaviorDigest]:
    """Digests one replay pass (or the channels of one task run)"""

    return {
        i.interaction_id: digest_behavior(i, comparator_id, raw_dir)
        for i in interactions
    }


def diff_passes(
    baseline: Mapping[str, BehaviorDigest],
    passes: Sequence[Sequence[Interaction]],
    comparator_id: str,
    raw_dir: Path | None = None,
) -> list[InteractionDiff]:
    """
    Compares every pass of a window against the baseline digests. A window
    that produced no pass at all is missing everything.
    """

    if not passes:
        return compare_digests(baseline, {})

    return merge_diffs(
        compare_digests(baseline, digest_pass(p, comparator_id, raw_dir))
        for p in passes
    )


def metrics_from_journal(records: Iterable[JournalRecord]) -> list[MetricsSnapshot]:
    """The metrics series recorded by the sidecar"""

    out = []

    for record in records:
        if record.kind != JournalKind.METRICS:
            continue
        try:
            out.append(MetricsSnapshot.model_validate(record.payload))
        except ValueError:
            logger.debug("Ignoring malformed metrics record %s", record.seq)

    return out


def counts_from_journal(records: Iterable[JournalRecord]) -> dict[str, int]:
    """
    Injections per point as journaled. Used when the process died before it
    could report its counters.
    """

    out: dict[str, int] = {}

    for record in records:
        if record.kind == JournalKind.INJECTION and record.point_id:
            out[record.point_id] = out.get(record.point_id, 0) + 1

    return out


@dataclass
class WindowRecord:
    """
    What one run of the target left behind, perturbed or not.

    Parameters
    ----------
    window_id
        Run-relative name of the window, also the name of its directory
    counters
        Final counters per point, empty if the agent never reported them
    journal
        The journal written by the sidecar and completed by the controller
    span
        Wall-clock span of the window, to select log lines
    passes
        Transcripts of the workload, one list per replay pass
    outcome_flag
        Whether the workload's task reached its outcome, None when the
        workload has no notion of it
    disconnected
        The agent went away while the process still seemed alive
    """

    window_id: str
    run_dir: Path
    points: list[InjectionPoint]
    counters: dict[str, InjectorState]
    journal: list[JournalRecord]
    log_sink: LogSink | None
    span: TimeWindow
    passes: list[list[Interaction]]
    exit: ExitRecord
    artifact_hash: str | None = None
    outcome_flag: bool | None = None
    disconnected: bool = False
    activated: bool = False
    notes: list[str] = field(default_factory=list)

    @property
    def raw_dir(self) -> Path:
        """Where raw bodies are kept"""
        return self.run_dir / "raw"


def assemble_bundle(
    point: InjectionPoint,
    window: WindowRecord,
    baseline: Baseline,
    comparator_id: str,
    metrics_threshold: float = DEFAULT_METRICS_THRESHOLD,
) -> EvidenceBundle:
    """
    Builds the evidence bundle of the window in which `point` was perturbed.
    When the agent couldn't report its counters (it died first), the
    journaled injections stand in for both perturbed executions and fired
    injections.
    """

    observed = baseline.counters.get(point.point_id)
    state = window.counters.get(point.point_id)

    if state is not None:
        perturbed = state.executions_perturbed
        fired = state.injections_fired
    else:
        fired = counts_from_journal(window.journal).get(point.point_id, 0)
        perturbed = fired

    if window.exit.status == ExitStatus.CRASHED or window.disconnected:
        metrics = diff_metrics(None, None)
    else:
        metrics = diff_metrics(
            summarize(baseline.metrics),
            summarize(metrics_from_journal(window.journal)),
            threshold=metrics_threshold,
        )

    return EvidenceBundle(
        point_id=point.point_id,
        point=point,
        window_id=window.window_id,
        counts=Counts(
            observation=observed.executions_observation if observed else 0,
            perturbed=perturbed,
            injections_fired=fired,
        ),
        log_evidence=scan_logs(point, window.span, window.log_sink),
        metrics_delta=metrics,
        digest_diff=diff_passes(
            baseline.digests, window.passes, comparator_id, window.raw_dir
        ),
        exit=window.exit,
        outcome_flag=window.outcome_flag,
        disconnected=window.disconnected,
    )
