"""
Records produced by the monitoring sidecar. They are all pydantic models since
their main purpose in life is to be written to (and read back from) the
experiment journal and the bundles.
"""

from typing import Any, Literal

from pydantic import BaseModel, Field, model_validator

from ..constants import DiffVerdict, ExitStatus, JournalKind, MatchRule


class MetricsSnapshot(BaseModel):
    """
    One sample of the process health.

    Parameters
    ----------
    cpu_time
        Milliseconds of CPU (user + system) consumed since process start
    memory_bytes
        Resident memory
    peak_threads
        Highest thread count seen so far in this process
    wall_clock
        Epoch timestamp of the sample
    """

    cpu_time: float = Field(ge=0)
    memory_bytes: int = Field(ge=0)
    peak_threads: int = Field(ge=0)
    wall_clock: float = Field(ge=0)


class MetricsDelta(BaseModel):
    """
    Comparison of a perturbed run's metrics against the baseline's.
    `changes` holds the relative change of each field, `flags` only the
    abnormal ones (e.g. ``cpu+``) and `notes` every noticeable change
    including decreases.
    """

    changes: dict[str, float | None] = Field(default_factory=dict)
    flags: list[str] = Field(default_factory=list)
    notes: list[str] = Field(default_factory=list)
    comparable: bool = True

    @property
    def abnormal(self) -> bool:
        """At least one field is abnormal"""
        return bool(self.flags)

    @property
    def label(self) -> str:
        """What the reports print in the metrics column"""
        if not self.comparable:
            return "-"
        return ", ".join(self.flags) or "no diff"


class LogEvidence(BaseModel):
    """Whether the application logs mention a given injection"""

    point_id: str
    matched: bool = False
    sample_lines: list[str] = Field(default_factory=list, max_length=10)
    match_rule: MatchRule | None = None
    diagnostic: Literal["log-unavailable"] | None = None

    @model_validator(mode="after")
    def _matched_iff_lines(self) -> "LogEvidence":
        if self.matched != bool(self.sample_lines):
            msg = "matched must be true exactly when sample lines exist"
            raise ValueError(msg)
        return self


class Interaction(BaseModel):
    """
    Transcript of one step of a workload: a request and what came back, or
    a channel of a CLI task (its stdout, its produced file, ...).
    """

    interaction_id: str
    status_token: str = ""
    body: bytes = b""
    error_content: bool = False
    missing: bool = False


class BehaviorDigest(BaseModel):
    """
    Normalized fingerprint of one interaction. Equivalence is decided on
    `status_token` and `body_hash` only.
    """

    interaction_id: str
    status_token: str
    body_hash: str
    raw_body_ref: str | None = None
    error_content: bool = False
    fallback: bool = False
    missing: bool = False

    def equivalent(self, other: "BehaviorDigest") -> bool:
        """Same outcome code and same normalized content"""
        return (self.status_token, self.body_hash) == (
            other.status_token,
            other.body_hash,
        )


class InteractionDiff(BaseModel):
    """Per-interaction comparison against the baseline"""

    interaction_id: str
    verdict: DiffVerdict
    status_changed: bool = False
    error_content: bool = False


class ExitRecord(BaseModel):
    """How the target process ended its window"""

    status: ExitStatus
    exit_code: int | None = None
    killed_after: float | None = None

    @model_validator(mode="after")
    def _killed_after_iff_stalled(self) -> "ExitRecord":
        stalled = self.status == ExitStatus.STALLED_KILLED
        if stalled != (self.killed_after is not None):
            msg = "killed_after must be set exactly for stalled-killed exits"
            raise ValueError(msg)
        return self


def record_exit(
    status: ExitStatus | str, code_or_timeout: float | None = None
) -> ExitRecord:
    """
    Builds the exit record of a window. The second argument is the exit code
    for normal and crashed exits, and the timeout that triggered the kill for
    stalled ones.
    """

    status = ExitStatus(status)

    if status == ExitStatus.STALLED_KILLED:
        return ExitRecord(status=status, killed_after=float(code_or_timeout or 0))

    return ExitRecord(
        status=status,
        exit_code=int(code_or_timeout) if code_or_timeout is not None else None,
    )


class JournalRecord(BaseModel):
    """One line of the experiment journal"""

    seq: int
    ts: float
    kind: JournalKind
    point_id: str | None = None
    payload: dict[str, Any] = Field(default_factory=dict)
