"""
The developer-facing resilience report. Entries are sorted by criticality,
silent blocks first since nothing else will ever tell you about them, and
rendered either as JSON (stable, for machines and diffs) or as a table.
"""

import io
import json
from collections.abc import Iterable
from typing import Any, Literal

from pydantic import BaseModel
from rich import box
from rich.console import Console
from rich.table import Table

from .classifier import CategorySet, EvidenceBundle
from .constants import REPORT_VERSION, Category

ReportFormat = Literal["json", "text"]

TIER_LABELS = {
    0: "silent",
    1: "observable",
    2: "observable+debuggable",
    3: "debuggable",
    4: "resilient",
    5: "uncovered",
}


class ReportEntry(BaseModel):
    """One row of the report, one covered recovery block"""

    key: str
    point_id: str
    unit: str
    routine: str
    block: int
    error_kind: str
    arm_ordinal: int
    observation: int
    perturbed: int
    injections_fired: int
    logged: bool | None
    outcome: bool | None
    exit_status: str
    metrics: str
    resilient: bool = False
    observable: bool = False
    debuggable: bool = False
    silent: bool = False
    verdict: str = "classified"
    tier: int = 5
    rank: int = 0

    @property
    def flags(self) -> list[str]:
        """Names of the satisfied categories"""
        return [c.value for c in Category if getattr(self, c.value)]


def criticality_tier(categories: CategorySet) -> int:
    """
    0 silent, 1 observable only, 2 observable and debuggable, 3 debuggable
    only (or nothing at all), 4 resilient, 5 not covered under perturbation.
    """

    if categories.uncovered:
        return 5
    if categories.silent:
        return 0
    if categories.observable:
        return 2 if categories.debuggable else 1
    if categories.resilient:
        return 4
    return 3


def make_entry(bundle: EvidenceBundle, categories: CategorySet) -> ReportEntry:
    """Flattens a bundle and its classification into a report row"""

    point = bundle.point
    uncovered = categories.uncovered

    return ReportEntry(
        key=point.key if point else bundle.point_id,
        point_id=bundle.point_id,
        unit=point.unit if point else "",
        routine=point.routine if point else "",
        block=point.block if point else 0,
        error_kind=point.error_kind if point else "",
        arm_ordinal=point.arm_ordinal if point else 0,
        observation=bundle.counts.observation,
        perturbed=bundle.counts.perturbed,
        injections_fired=bundle.counts.injections_fired,
        logged=None if uncovered else bundle.log_evidence.matched,
        outcome=bundle.outcome_flag,
        exit_status=bundle.exit.status.value,
        metrics=bundle.metrics_delta.label,
        resilient=categories.resilient,
        observable=categories.observable,
        debuggable=categories.debuggable,
        silent=categories.silent,
        verdict=categories.verdict,
        tier=criticality_tier(categories),
    )


def sort_entries(entries: Iterable[ReportEntry]) -> list[ReportEntry]:
    """Criticality order, then most perturbed executions first, then key"""

    ordered = sorted(entries, key=lambda e: (e.tier, -e.perturbed, e.key))
    return [e.model_copy(update={"rank": n}) for n, e in enumerate(ordered, 1)]


def totals(entries: Iterable[ReportEntry]) -> dict[str, int]:
    """The bottom row: sums of counts and flags"""

    out = {
        "entries": 0,
        "observation": 0,
        "perturbed": 0,
        "logged": 0,
        "outcome": 0,
        "uncovered": 0,
        **{c.value: 0 for c in Category},
    }

    for e in entries:
        out["entries"] += 1
        out["observation"] += e.observation
        out["perturbed"] += e.perturbed
        out["logged"] += bool(e.logged)
        out["outcome"] += bool(e.outcome)
        out["uncovered"] += e.verdict != "classified"
        for flag in e.flags:
            out[flag] += 1

    return out


def build_document(
    entries: Iterable[ReportEntry], meta: dict[str, Any] | None = None
) -> dict[str, Any]:
    """The JSON report as a plain dict"""

    ordered = sort_entries(entries)

    return {
        "report_version": REPORT_VERSION,
        "meta": meta or {},
        "entries": [e.model_dump(mode="json") for e in ordered],
        "totals": totals(ordered),
    }


def _yes_no(value: bool | None) -> str:
    if value is None:
        return "-"
    return "yes" if value else "no"


def _render_text(document: dict[str, Any]) -> str:
    table = Table(
        title="Resilience report",
        title_justify="left",
        title_style="bold",
        box=box.SIMPLE_HEAD,
    )
    table.add_column("#", justify="right")
    table.add_column("Recovery block", justify="left", style="bold cyan")
    table.add_column("Obs./Expl.", justify="right")
    table.add_column("Log.")
    table.add_column("Outcome")
    table.add_column("Exit status")
    table.add_column("Sys. metrics")
    table.add_column("RH", justify="center")
    table.add_column("OH", justify="center")
    table.add_column("DH", justify="center")
    table.add_column("SH", justify="center")
    table.add_column("Tier")

    for e in document["entries"]:
        uncovered = e["verdict"] != "classified"
        table.add_row(
            str(e["rank"]),
            e["key"],
            f"{e['observation']} / {e['perturbed']}",
            _yes_no(e["logged"]),
            _yes_no(e["outcome"]),
            e["exit_status"],
            e["metrics"],
            *("x" if e[c.value] else "" for c in Category),
            e["verdict"] if uncovered else TIER_LABELS[e["tier"]],
        )

    t = document["totals"]
    table.add_section()
    table.add_row(
        "",
        f"total: {t['entries']}",
        f"{t['observation']} / {t['perturbed']}",
        str(t["logged"]),
        str(t["outcome"]),
        "",
        "",
        *(str(t[c.value]) for c in Category),
        f"{t['uncovered']} uncovered",
    )

    console = Console(file=io.StringIO(), width=200, record=True, color_system=None)
    console.print(table)
    return console.export_text()


def render(
    entries: Iterable[ReportEntry],
    fmt: ReportFormat = "json",
    meta: dict[str, Any] | None = None,
) -> str:
    """
    Renders the report. The output only depends on the set of entries, not
    on their order, so rendering twice gives byte-identical documents.
    """

    document = build_document(entries, meta)

    if fmt == "json":
        return json.dumps(document, sort_keys=True, indent=2) + "\n"

    return _render_text(document)


def load_entries(text: str) -> list[ReportEntry]:
    """Reads the entries back from a JSON report"""
    return [ReportEntry.model_validate(e) for e in json.loads(text)["entries"]]
