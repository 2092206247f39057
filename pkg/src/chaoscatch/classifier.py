"""
Classification of recovery blocks. Given everything observed while a block
was perturbed (an `EvidenceBundle`) and a definition of what "normal" means
for the application (a `SteadyStateSpec`), decide which of the four
hypotheses the block satisfies:

resilient
    The expected outcome is reached, the process exits normally, every
    interaction is equivalent to the baseline and nothing user-visible
    happened
observable
    The user sees something go wrong
debuggable
    The failure leaves a trace: a log line or abnormal metrics
silent
    The outcome is lost, nothing is visible and nothing is logged

Abnormal metrics alone make a block debuggable but do not lift it out of
silence: a developer would have to already look at the right graph.
"""

from collections import Counter
from collections.abc import Callable, Iterable, Mapping
from typing import Any, Literal

from pydantic import BaseModel, Field, ValidationError, model_validator

from .agent.base import InjectionPoint
from .constants import Category, DiffVerdict, ExitStatus
from .errors import ComparatorError, ConfigError
from .telemetry.base import ExitRecord, InteractionDiff, LogEvidence, MetricsDelta
from .telemetry.digest import get_comparator

UNCOVERED = "uncovered-under-perturbation"


class Counts(BaseModel):
    """Executions of the block, in observation and under perturbation"""

    observation: int = 0
    perturbed: int = 0
    injections_fired: int = 0


class EvidenceBundle(BaseModel):
    """Everything observed about one point during one experiment window"""

    point_id: str
    point: InjectionPoint | None = None
    window_id: str = ""
    counts: Counts = Field(default_factory=Counts)
    log_evidence: LogEvidence
    metrics_delta: MetricsDelta = Field(default_factory=MetricsDelta)
    digest_diff: list[InteractionDiff] = Field(default_factory=list)
    exit: ExitRecord
    outcome_flag: bool | None = None
    disconnected: bool = False

    @property
    def classifiable(self) -> bool:
        """Only bundles where an injection actually happened can be classified"""
        return self.counts.injections_fired >= 1

    @property
    def all_equal(self) -> bool:
        """Every interaction matches the baseline"""
        return all(d.verdict == DiffVerdict.EQUAL for d in self.digest_diff)


class CategorySet(BaseModel):
    """The hypotheses satisfied by one block, with the reasons why"""

    resilient: bool = False
    observable: bool = False
    debuggable: bool = False
    silent: bool = False
    notes: dict[str, list[str]] = Field(default_factory=dict)
    verdict: Literal["classified", "uncovered-under-perturbation"] = "classified"

    @model_validator(mode="after")
    def _exclusions(self) -> "CategorySet":
        if self.resilient and self.observable:
            msg = "A block cannot be both resilient and observable"
            raise ValueError(msg)
        if self.silent and (self.resilient or self.observable):
            msg = "A silent block is neither resilient nor observable"
            raise ValueError(msg)
        return self

    @property
    def categories(self) -> list[Category]:
        """The satisfied categories, in their canonical order"""
        return [c for c in Category if getattr(self, c.value)]

    @property
    def uncovered(self) -> bool:
        """No injection happened, so nothing could be classified"""
        return self.verdict == UNCOVERED


# --- Steady-state predicates ---

Predicate = Callable[[EvidenceBundle], bool]


def outcome_from_flag(bundle: EvidenceBundle) -> bool:
    """The workload reported its task as completed"""
    return bool(bundle.outcome_flag)


def outcome_all_equal(bundle: EvidenceBundle) -> bool:
    """Every interaction is equivalent to the baseline"""
    return bundle.all_equal


def visible_task(bundle: EvidenceBundle) -> bool:
    """
    A batch task is visibly failing when it crashes or writes something new
    to its error output. Hanging is not, nobody is watching.
    """

    if bundle.exit.status == ExitStatus.CRASHED or bundle.disconnected:
        return True

    return any(
        d.verdict == DiffVerdict.DIFFERENT and d.error_content
        for d in bundle.digest_diff
    )


def visible_http(bundle: EvidenceBundle) -> bool:
    """
    A service is visibly failing when it goes down, hangs, answers with a
    different status, serves an error page or doesn't answer at all. A body
    that changes silently is, well, silent.
    """

    if bundle.exit.status != ExitStatus.NORMAL or bundle.disconnected:
        return True

    return any(
        d.verdict == DiffVerdict.MISSING
        or (
            d.verdict == DiffVerdict.DIFFERENT
            and (d.status_changed or d.error_content)
        )
        for d in bundle.digest_diff
    )


OUTCOME_PREDICATES: dict[str, Predicate] = {
    "outcome-flag": outcome_from_flag,
    "all-equal": outcome_all_equal,
}

VISIBILITY_PREDICATES: dict[str, Predicate] = {
    "task": visible_task,
    "http": visible_http,
}


class SteadyStateSpec(BaseModel):
    """
    Domain knowledge about what "working" means for an application.

    Parameters
    ----------
    name
        Name of the spec, presets are ``cli-task`` and ``http``
    outcome_predicate
        Name of the rule deciding whether the expected behavior was achieved
    visibility_predicate
        Name of the rule deciding whether the user can see a deviation
    comparator_id
        Behavior comparator used for the digests
    metrics_break_equivalence
        Whether abnormal metrics prevent a block from being resilient
    """

    name: str
    outcome_predicate: str
    visibility_predicate: str
    comparator_id: str
    metrics_break_equivalence: bool = True

    @model_validator(mode="after")
    def _known_parts(self) -> "SteadyStateSpec":
        if self.outcome_predicate not in OUTCOME_PREDICATES:
            msg = f"Unknown outcome predicate {self.outcome_predicate!r}"
            raise ValueError(msg)
        if self.visibility_predicate not in VISIBILITY_PREDICATES:
            msg = f"Unknown visibility predicate {self.visibility_predicate!r}"
            raise ValueError(msg)
        get_comparator(self.comparator_id)
        return self

    def outcome(self, bundle: EvidenceBundle) -> bool:
        """Was the expected behavior achieved?"""
        return OUTCOME_PREDICATES[self.outcome_predicate](bundle)

    def visible(self, bundle: EvidenceBundle) -> bool:
        """Did the user see something?"""
        return VISIBILITY_PREDICATES[self.visibility_predicate](bundle)


PRESETS: dict[str, SteadyStateSpec] = {
    "cli-task": SteadyStateSpec(
        name="cli-task",
        outcome_predicate="outcome-flag",
        visibility_predicate="task",
        comparator_id="verbatim",
    ),
    "http": SteadyStateSpec(
        name="http",
        outcome_predicate="all-equal",
        visibility_predicate="http",
        comparator_id="structured",
    ),
}


def load_spec(
    preset: str,
    comparator: str | None = None,
    overrides: Mapping[str, Any] | None = None,
) -> SteadyStateSpec:
    """
    Builds a spec from a preset name, optionally swapping the comparator or
    any other field.

    Raises
    ------
    ConfigError
        Unknown preset or invalid override
    """

    try:
        base = PRESETS[preset]
    except KeyError as e:
        msg = f"Unknown steady-state preset {preset!r}, known: {sorted(PRESETS)}"
        raise ConfigError(msg) from e

    changes = dict(overrides or {})
    if comparator:
        changes["comparator_id"] = comparator

    if not changes:
        return base

    try:
        return SteadyStateSpec.model_validate(base.model_dump() | changes)
    except (ValidationError, ValueError, ComparatorError) as e:
        msg = f"Invalid steady-state spec: {e}"
        raise ConfigError(msg) from e


# --- Classification ---


def classify(bundle: EvidenceBundle, spec: SteadyStateSpec) -> CategorySet:
    """Derives the satisfied hypotheses of one block. Pure function."""

    if not bundle.classifiable:
        return CategorySet(
            verdict=UNCOVERED,
            notes={"verdict": ["no injection fired during the window"]},
        )

    outcome = spec.outcome(bundle)
    visible = spec.visible(bundle)
    logged = bundle.log_evidence.matched
    abnormal = bundle.metrics_delta.abnormal
    steady = not (spec.metrics_break_equivalence and abnormal)
    normal_exit = bundle.exit.status == ExitStatus.NORMAL

    resilient = outcome and normal_exit and bundle.all_equal and steady and not visible
    silent = not outcome and not visible and not logged

    notes: dict[str, list[str]] = {}

    if resilient:
        notes["resilient"] = ["outcome reached", "normal exit", "no behavior diff"]
    else:
        notes["resilient"] = [
            reason
            for reason, failed in [
                ("outcome lost", not outcome),
                (f"exit {bundle.exit.status.value}", not normal_exit),
                ("behavior differs", not bundle.all_equal),
                ("metrics not steady", not steady),
                ("user-visible deviation", visible),
            ]
            if failed
        ]

    if visible:
        notes["observable"] = _visibility_reasons(bundle)

    debug_reasons = []
    if logged:
        rule = bundle.log_evidence.match_rule
        debug_reasons.append(f"logged ({rule.value if rule else 'match'})")
    debug_reasons.extend(f"metrics {flag}" for flag in bundle.metrics_delta.flags)
    if debug_reasons:
        notes["debuggable"] = debug_reasons

    if bundle.log_evidence.diagnostic:
        notes["log"] = [bundle.log_evidence.diagnostic]

    if silent:
        notes["silent"] = ["outcome lost", "nothing visible", "nothing logged"]

    return CategorySet(
        resilient=resilient,
        observable=visible,
        debuggable=logged or abnormal,
        silent=silent,
        notes=notes,
    )


def _visibility_reasons(bundle: EvidenceBundle) -> list[str]:
    reasons = []

    if bundle.exit.status != ExitStatus.NORMAL:
        reasons.append(f"exit {bundle.exit.status.value}")
    if bundle.disconnected:
        reasons.append("agent disconnected")

    for d in bundle.digest_diff:
        if d.verdict == DiffVerdict.MISSING:
            reasons.append(f"{d.interaction_id}: missing")
        elif d.verdict == DiffVerdict.DIFFERENT and d.status_changed:
            reasons.append(f"{d.interaction_id}: status changed")
        elif d.verdict == DiffVerdict.DIFFERENT and d.error_content:
            reasons.append(f"{d.interaction_id}: error content")

    return reasons


class CorpusSummary(BaseModel):
    """Counts per category, over the whole corpus and per group"""

    total: int = 0
    classified: int = 0
    uncovered: int = 0
    counts: dict[str, int] = Field(
        default_factory=lambda: {c.value: 0 for c in Category}
    )
    groups: dict[str, dict[str, int]] = Field(default_factory=dict)


def group_key(unit: str, depth: int = 1) -> str:
    """
    Groups units by their first `depth` name components, e.g. with depth 2
    ``org.xwiki.rendering.Macro`` belongs to ``org.xwiki``.
    """

    parts = [p for p in unit.replace("$", ".").replace("/", ".").split(".") if p]
    return ".".join(parts[:depth]) or unit


def classify_corpus(
    bundles: Iterable[EvidenceBundle],
    spec: SteadyStateSpec,
    group_depth: int = 1,
) -> CorpusSummary:
    """Classifies every bundle and sums the categories up"""

    summary = CorpusSummary()
    groups: dict[str, Counter[str]] = {}

    for bundle in bundles:
        result = classify(bundle, spec)
        summary.total += 1

        if result.uncovered:
            summary.uncovered += 1
            continue

        summary.classified += 1
        unit = bundle.point.unit if bundle.point else bundle.point_id
        group = groups.setdefault(group_key(unit, group_depth), Counter())

        for category in result.categories:
            summary.counts[category.value] += 1
            group[category.value] += 1

    summary.groups = {
        key: {c.value: counter[c.value] for c in Category}
        for key, counter in sorted(groups.items())
    }

    return summary
