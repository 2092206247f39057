"""
Blast radius control: how many injectors may be active at once, and for how
long in total over a sliding window.
"""

import asyncio
import logging
import time
from collections.abc import Callable
from dataclasses import dataclass, field
from typing import NamedTuple

from .base import ExperimentPlan

logger = logging.getLogger(__name__)


class Admission(NamedTuple):
    """
    Decision for one activation request. When not admitted, `retry_after`
    says when asking again makes sense, or is None if it never will.
    """

    admitted: bool
    retry_after: float | None = None
    reason: str = ""


@dataclass
class BlastRadius:
    """Live state of the activations and the rules they must follow"""

    max_concurrent: int = 1
    budget_seconds: float | None = None
    budget_window: float = 3600.0
    clock: Callable[[], float] = time.monotonic
    active: dict[str, float] = field(default_factory=dict)
    usage: list[tuple[float, float]] = field(default_factory=list)

    @classmethod
    def from_plan(cls, plan: ExperimentPlan, clock=time.monotonic) -> "BlastRadius":
        """The limits of a plan"""
        return cls(
            max_concurrent=plan.max_concurrent_active,
            budget_seconds=plan.budget_seconds,
            budget_window=plan.budget_window_seconds,
            clock=clock,
        )

    def _now(self) -> float:
        return self.clock()

    def _expire(self, now: float) -> None:
        for point_id, deadline in list(self.active.items()):
            if deadline <= now:
                del self.active[point_id]

    def _used(self, now: float) -> float:
        start = now - self.budget_window
        return sum(
            max(0.0, min(end, now) - max(begin, start))
            for begin, end in self.usage
            if end > start
        )

    def admit(self, point_id: str, duration: float) -> Admission:
        """Decides whether `point_id` may be activated for `duration` now"""

        now = self._now()
        self._expire(now)

        if self.budget_seconds is not None and duration > self.budget_seconds:
            return Admission(False, None, "activation larger than the budget")

        if len(self.active) >= self.max_concurrent:
            soonest = min(self.active.values())
            return Admission(False, max(soonest - now, 0.01), "too many active")

        if self.budget_seconds is not None:
            used = self._used(now)
            if used + duration > self.budget_seconds:
                oldest = min(begin for begin, _ in self.usage)
                wait = max(oldest + self.budget_window - now, 0.01)
                return Admission(False, wait, "budget exhausted")

        self.active[point_id] = now + duration
        self.usage.append((now, now + duration))
        return Admission(True)

    def release(self, point_id: str) -> None:
        """The injector went down before its deadline"""

        now = self._now()

        if (deadline := self.active.pop(point_id, None)) is None:
            return

        for n, (begin, end) in enumerate(self.usage):
            if end == deadline:
                self.usage[n] = (begin, min(end, now))
                break

    async def acquire(
        self, point_id: str, duration: float, max_wait: float | None = None
    ) -> bool:
        """
        Waits until the activation is admitted. Returns False when it never
        will be, or when `max_wait` expired.
        """

        started = self._now()

        while True:
            decision = self.admit(point_id, duration)

            if decision.admitted:
                return True

            if decision.retry_after is None:
                logger.info("Activation of %s refused: %s", point_id, decision.reason)
                return False

            if max_wait is not None and self._now() - started > max_wait:
                return False

            logger.debug("Activation of %s deferred: %s", point_id, decision.reason)
            await asyncio.sleep(decision.retry_after)


def enforce_blast_radius(
    plan: ExperimentPlan, state: BlastRadius, point_id: str
) -> Admission:
    """Admission decision for activating `point_id` under `plan`"""
    return state.admit(point_id, plan.window_seconds)
