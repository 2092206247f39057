"""
Data the controller plans with and persists: plans, baselines, hypotheses
and falsification verdicts.
"""

from typing import Literal

from pydantic import BaseModel, Field, model_validator

from ..agent.base import InjectionPoint, InjectorState
from ..classifier import CategorySet, EvidenceBundle
from ..constants import Category, HypothesisStatus, Mode
from ..telemetry.base import BehaviorDigest, ExitRecord, MetricsSnapshot


class ExperimentPlan(BaseModel):
    """
    What to run and within which limits.

    Parameters
    ----------
    mode
        observation, exploration or falsification
    targets
        Points to perturb, in the order to perturb them
    window_seconds
        How long each injector stays active
    stall_timeout_seconds
        After this long, a target that didn't finish is killed
    max_concurrent_active
        How many injectors may be active at the same time
    budget_seconds
        Total activation time allowed within `budget_window_seconds`, None
        for no limit
    cooldown_seconds
        Time left to in-flight effects after a window before collecting
    """

    mode: Mode
    run_id: str
    targets: list[str] = Field(default_factory=list)
    window_seconds: float = Field(default=60.0, gt=0)
    stall_timeout_seconds: float = Field(default=300.0, gt=0)
    max_concurrent_active: int = Field(default=1, ge=1)
    budget_seconds: float | None = Field(default=None, ge=0)
    budget_window_seconds: float = Field(default=3600.0, gt=0)
    cooldown_seconds: float = Field(default=2.0, ge=0)

    @model_validator(mode="after")
    def _observation_has_no_targets(self) -> "ExperimentPlan":
        if self.mode == Mode.OBSERVATION and self.targets:
            msg = "An observation plan cannot have targets"
            raise ValueError(msg)
        return self


class Baseline(BaseModel):
    """What the application looks like when nothing is perturbed"""

    run_id: str
    app_version: str = ""
    points: list[InjectionPoint] = Field(default_factory=list)
    counters: dict[str, InjectorState] = Field(default_factory=dict)
    digests: dict[str, BehaviorDigest] = Field(default_factory=dict)
    metrics: list[MetricsSnapshot] = Field(default_factory=list)
    exit: ExitRecord
    artifact_hash: str | None = None

    @property
    def covered(self) -> list[str]:
        """Points executed at least once, in registration order"""
        return [
            p.point_id
            for p in self.points
            if (c := self.counters.get(p.point_id)) and c.executions_observation > 0
        ]

    def point(self, point_id: str) -> InjectionPoint | None:
        """Looks a point up"""
        return next((p for p in self.points if p.point_id == point_id), None)

    def find(self, key: str) -> InjectionPoint | None:
        """Looks a point up by identity key"""
        return next((p for p in self.points if p.key == key), None)


class Hypothesis(BaseModel):
    """A claim that a block belongs to a category"""

    hypothesis_id: str
    point_id: str
    key: str
    category: Category
    point: InjectionPoint | None = None
    evidence_ref: list[str] = Field(default_factory=list)
    status: HypothesisStatus = HypothesisStatus.PROPOSED
    created_in: str = ""
    last_checked_in: str | None = None


class ExplorationResult(BaseModel):
    """One window of exploration"""

    point_id: str
    bundle: EvidenceBundle
    categories: CategorySet


VerdictResult = Literal["validated", "falsified", "not-applicable", "skipped"]


class Verdict(BaseModel):
    """Result of the falsification of one hypothesis"""

    hypothesis: Hypothesis
    result: VerdictResult
    evidence: EvidenceBundle | None = None
    categories: CategorySet | None = None
    diff: list[str] = Field(default_factory=list)
    app_version: str = ""
