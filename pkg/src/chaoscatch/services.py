"""Storage of an experiment directory: baselines, windows and results."""

import json
import logging
import re
from dataclasses import dataclass
from datetime import UTC, datetime
from pathlib import Path

from .constants import Mode
from .controller.base import Baseline, ExplorationResult, Verdict
from .controller.hypotheses import HypothesisStore
from .errors import ExperimentInvalid

logger = logging.getLogger(__name__)

RUN_ID_RE = re.compile(r"^[A-Za-z0-9][A-Za-z0-9._-]*$")


def new_run_id(mode: Mode, now: datetime | None = None) -> str:
    """Sortable run id, e.g. ``20261017T083000Z-exploration``"""

    now = now or datetime.now(UTC)
    return f"{now.strftime('%Y%m%dT%H%M%S%fZ')}-{mode.value}"


@dataclass
class ExperimentStore:
    """
    Layout of the experiment directory:

    - ``baseline/<run-id>/`` observation windows and ``baseline.json``
    - ``exploration/<run-id>/<point-id>/`` one directory per window, with its
      ``bundle.json``
    - ``falsification/<run-id>/`` windows and ``verdicts.json``
    - ``hypotheses.db`` the hypothesis store
    - ``report.json`` the last report
    """

    root: Path

    def __post_init__(self):
        self.root = Path(self.root)

    @property
    def hypotheses(self) -> HypothesisStore:
        """The hypothesis store of this experiment"""
        return HypothesisStore(self.root / "hypotheses.db")

    @property
    def report_path(self) -> Path:
        """Where the report goes by default"""
        return self.root / "report.json"

    def run_dir(self, mode: Mode, run_id: str) -> Path:
        """Directory of one run"""

        if not RUN_ID_RE.match(run_id):
            msg = f"Invalid run id {run_id!r}"
            raise ExperimentInvalid(msg)

        folder = {
            Mode.OBSERVATION: "baseline",
            Mode.EXPLORATION: "exploration",
            Mode.FALSIFICATION: "falsification",
        }[mode]

        return self.root / folder / run_id

    def save_baseline(self, baseline: Baseline) -> Path:
        """Persists a baseline"""

        path = self.run_dir(Mode.OBSERVATION, baseline.run_id) / "baseline.json"
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(baseline.model_dump_json(indent=2), encoding="utf-8")
        return path

    def load_baseline(self, run_id: str | None = None) -> Baseline:
        """
        A baseline by run id, or the latest one.

        Raises
        ------
        ExperimentInvalid
            There is no such baseline
        """

        if run_id is None:
            candidates = sorted((self.root / "baseline").glob("*/baseline.json"))
            if not candidates:
                msg = f"No baseline in {self.root}, run an observation first"
                raise ExperimentInvalid(msg)
            path = candidates[-1]
        else:
            path = self.run_dir(Mode.OBSERVATION, run_id) / "baseline.json"

        try:
            return Baseline.model_validate_json(path.read_text(encoding="utf-8"))
        except FileNotFoundError as e:
            msg = f"No baseline {run_id}"
            raise ExperimentInvalid(msg) from e

    def save_result(self, run_id: str, result: ExplorationResult) -> Path:
        """Persists the bundle and classification of one exploration window"""

        path = self.run_dir(Mode.EXPLORATION, run_id) / result.point_id / "bundle.json"
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(result.model_dump_json(indent=2), encoding="utf-8")
        return path

    def exploration_runs(self) -> list[str]:
        """Run ids of the explorations, oldest first"""

        folder = self.root / "exploration"
        if not folder.is_dir():
            return []
        return sorted(p.name for p in folder.iterdir() if p.is_dir())

    def latest_exploration(self) -> str:
        """Run id of the last exploration"""

        if not (runs := self.exploration_runs()):
            msg = f"No exploration in {self.root}, run one first"
            raise ExperimentInvalid(msg)

        return runs[-1]

    def load_results(self, run_id: str | None = None) -> list[ExplorationResult]:
        """
        Results of an exploration run, the latest one by default. Windows are
        returned in point id order so that the output doesn't depend on the
        file system.
        """

        folder = self.run_dir(Mode.EXPLORATION, run_id or self.latest_exploration())

        if not folder.is_dir():
            msg = f"No exploration {run_id}"
            raise ExperimentInvalid(msg)

        out = []

        for path in sorted(folder.glob("*/bundle.json")):
            try:
                out.append(
                    ExplorationResult.model_validate_json(
                        path.read_text(encoding="utf-8")
                    )
                )
            except ValueError:
                logger.warning("Ignoring unreadable bundle %s", path)

        return out

    def save_verdicts(self, run_id: str, verdicts: list[Verdict]) -> Path:
        """Persists the outcome of a falsification run"""

        path = self.run_dir(Mode.FALSIFICATION, run_id) / "verdicts.json"
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(
            json.dumps([v.model_dump(mode="json") for v in verdicts], indent=2),
            encoding="utf-8",
        )
        return path
