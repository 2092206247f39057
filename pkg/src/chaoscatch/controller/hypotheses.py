"""
The hypothesis store: an append-only file of JSON lines. Every change of a
hypothesis appends its new version; reading folds them back, the last
version of each hypothesis wins.
"""

import hashlib
import json
import logging
from pathlib import Path

from ..agent.base import InjectionPoint
from ..constants import Category, HypothesisStatus
from ..errors import HypothesisError
from .base import Hypothesis

logger = logging.getLogger(__name__)

_CHECKED = {HypothesisStatus.VALIDATED, HypothesisStatus.FALSIFIED}

TRANSITIONS: dict[HypothesisStatus, set[HypothesisStatus]] = {
    HypothesisStatus.PROPOSED: {HypothesisStatus.ACCEPTED},
    HypothesisStatus.ACCEPTED: _CHECKED,
    HypothesisStatus.VALIDATED: _CHECKED,
    HypothesisStatus.FALSIFIED: set(),
}


def make_hypothesis_id(key: str, category: Category, created_in: str) -> str:
    """Stable id: the same claim made on the same version is the same hypothesis"""
    raw = f"{key}\x1f{category.value}\x1f{created_in}"
    return "h" + hashlib.sha256(raw.encode()).hexdigest()[:12]


class HypothesisStore:
    """
    Parameters
    ----------
    path
        The ``hypotheses.db`` file
    """

    def __init__(self, path: Path | str):
        self.path = Path(path)

    def _append(self, hypothesis: Hypothesis) -> None:
        self.path.parent.mkdir(parents=True, exist_ok=True)
        with self.path.open("a", encoding="utf-8") as f:
            f.write(hypothesis.model_dump_json() + "\n")

    def all(self) -> list[Hypothesis]:
        """Latest version of every hypothesis, in order of first appearance"""

        if not self.path.exists():
            return []

        latest: dict[str, Hypothesis] = {}

        lines = self.path.read_text(encoding="utf-8").splitlines()

        for n, line in enumerate(lines):
            if not line.strip():
                continue
            try:
                h = Hypothesis.model_validate(json.loads(line))
            except ValueError:
                logger.warning("Skipping invalid line %d of %s", n + 1, self.path)
                continue
            latest[h.hypothesis_id] = h

        return list(latest.values())

    def get(self, hypothesis_id: str) -> Hypothesis:
        """Looks one up by id"""

        for h in self.all():
            if h.hypothesis_id == hypothesis_id:
                return h

        msg = f"No hypothesis {hypothesis_id}"
        raise HypothesisError(msg)

    def with_status(self, *statuses: HypothesisStatus) -> list[Hypothesis]:
        """Every hypothesis currently in one of `statuses`"""
        return [h for h in self.all() if h.status in statuses]

    def propose(
        self,
        point: InjectionPoint,
        category: Category,
        evidence_ref: list[str],
        created_in: str = "",
        status: HypothesisStatus = HypothesisStatus.PROPOSED,
    ) -> Hypothesis:
        """
        Records a new claim. Proposing again a claim that already exists
        for this version only refreshes its evidence, as long as nobody acted
        on it yet.
        """

        hypothesis_id = make_hypothesis_id(point.key, category, created_in)

        existing = next(
            (h for h in self.all() if h.hypothesis_id == hypothesis_id), None
        )
        if existing is not None and existing.status != HypothesisStatus.PROPOSED:
            return existing

        hypothesis = Hypothesis(
            hypothesis_id=hypothesis_id,
            point_id=point.point_id,
            key=point.key,
            category=category,
            point=point,
            evidence_ref=evidence_ref,
            status=status,
            created_in=created_in,
        )
        self._append(hypothesis)
        return hypothesis

    def transition(
        self,
        hypothesis: Hypothesis,
        status: HypothesisStatus,
        checked_in: str | None = None,
        evidence_ref: list[str] | None = None,
    ) -> Hypothesis:
        """
        Moves a hypothesis along its lifecycle.

        Raises
        ------
        HypothesisError
            The transition isn't allowed (e.g. out of ``falsified``)
        """

        current = self.get(hypothesis.hypothesis_id)

        if status not in TRANSITIONS[current.status]:
            msg = (
                f"Hypothesis {current.hypothesis_id} cannot go from "
                f"{current.status.value} to {status.value}"
            )
            raise HypothesisError(msg)

        updated = current.model_copy(
            update={
                "status": status,
                "last_checked_in": checked_in or current.last_checked_in,
                "evidence_ref": current.evidence_ref + (evidence_ref or []),
            }
        )
        self._append(updated)
        return updated

    def accept(
        self,
        key_or_point_id: str,
        category: Category,
        known_points: list[InjectionPoint],
        created_in: str = "",
    ) -> Hypothesis:
        """
        Accepts the proposed hypothesis matching (point, category). When
        none was proposed but the point is known, the developer's claim is
        recorded as an accepted hypothesis straight away.

        Raises
        ------
        HypothesisError
            The point is unknown
        """

        for h in self.with_status(HypothesisStatus.PROPOSED):
            if h.category == category and key_or_point_id in (h.key, h.point_id):
                return self.transition(h, HypothesisStatus.ACCEPTED)

        point = next(
            (p for p in known_points if key_or_point_id in (p.key, p.point_id)),
            None,
        )

        if point is None:
            msg = f"Unknown point {key_or_point_id}"
            raise HypothesisError(msg)

        for h in self.all():
            if h.key == point.key and h.category == category and h.status in (
                HypothesisStatus.ACCEPTED,
                HypothesisStatus.VALIDATED,
            ):
                return h

        return self.propose(
            point,
            category,
            evidence_ref=["manual"],
            created_in=created_in,
            status=HypothesisStatus.ACCEPTED,
        )
