"""
Demo targets: small programs whose recovery blocks are built so that the
category of each of them is known in advance. They are the ground truth the
whole pipeline is checked against.
"""

from collections.abc import Mapping
from dataclasses import dataclass, field
from typing import Literal

from ...agent.base import Location, identity_key
from ...constants import Category
from ..base import Workload
from ..trace import Trace, TraceRequest
from ..workloads import CliTaskWorkload, HttpServiceWorkload


def _cats(*names: str) -> frozenset[Category]:
    return frozenset(Category(n) for n in names)


def _key(unit: str, routine: str, kind: str, arm: int = 0) -> str:
    return identity_key(Location(unit, routine), kind, arm)


@dataclass(frozen=True)
class DemoTarget:
    """
    A runnable demo target and what its blocks are expected to be.

    Parameters
    ----------
    expected
        Identity key of each engineered point and its category set, for
        the target's default steady-state preset
    variants
        Alternative expectations, e.g. for a mutated build
    """

    name: str
    kind: Literal["cli-task", "http"]
    module: str
    expected: dict[str, frozenset[Category]]
    artifact: str | None = None
    variants: dict[str, dict[str, frozenset[Category]]] = field(
        default_factory=dict
    )

    @property
    def preset(self) -> str:
        """The steady-state preset that fits the target"""
        return self.kind

    @property
    def command(self) -> list[str]:
        """Command line template of the target"""

        command = ["{python}", "-m", self.module, "--run-dir", "{run_dir}"]
        if self.kind == "http":
            command += ["--port", "{port}"]
        return command

    def requests(self) -> list[TraceRequest]:
        """The scripted session of a service target"""

        if self.kind != "http":
            return []

        from .wiki import demo_trace_requests

        return demo_trace_requests()

    def workload(
        self,
        trace: Trace | None = None,
        variant: str | None = None,
        env: Mapping[str, str] | None = None,
        **kwargs,
    ) -> Workload:
        """A workload running this target"""

        target_env = dict(env or {})
        if variant:
            target_env["CHAOS_DEMO_VARIANT"] = variant

        if self.kind == "http":
            return HttpServiceWorkload(
                self.command, trace=trace or Trace(), env=target_env, **kwargs
            )

        return CliTaskWorkload(
            self.command, artifact=self.artifact, env=target_env, **kwargs
        )

    def expected_for(self, variant: str | None = None) -> dict[str, frozenset]:
        """Expected categories, for `variant` if it changes them"""
        return self.variants.get(variant or "", self.expected)


def _expectations(
    *rows: tuple[str, str, str, int, tuple[str, ...]],
) -> dict[str, frozenset[Category]]:
    return {
        _key(unit, routine, kind, arm): _cats(*cats)
        for unit, routine, kind, arm, cats in rows
    }


DOWNLOAD_EXPECTED = _expectations(
    ("Manifest", "parse", "ValueError", 0, ("observable", "debuggable")),
    ("Manifest", "parse", "KeyError", 1, ("resilient",)),
    ("Tracker", "announce", "TimeoutError", 0, ("silent",)),
    ("PeerLink", "connect", "ConnectionRefusedError", 0, ("debuggable",)),
    ("Mirror", "fetch_chunk", "ConnectionError", 0, ("resilient",)),
    ("Piece", "verify_all", "MemoryError", 0, ("debuggable",)),
)

# Without its log call, the refused connection leaves no trace at all
DOWNLOAD_V2_EXPECTED = DOWNLOAD_EXPECTED | _expectations(
    ("PeerLink", "connect", "ConnectionRefusedError", 0, ("silent",)),
)

WIKI_EXPECTED = _expectations(
    ("PageCache", "lookup", "KeyError", 0, ("resilient",)),
    ("MacroRenderer", "render", "RuntimeError", 0, ("observable", "debuggable")),
    ("SessionAuth", "authenticate", "PermissionError", 0, ("observable",)),
    ("Sidebar", "render", "LookupError", 0, ("silent",)),
    ("IndexWorker", "take", "InterruptedError", 0, ("resilient", "debuggable")),
    ("PriceService", "options", "KeyError", 0, ("resilient",)),
)


def demo_targets() -> dict[str, DemoTarget]:
    """The demo targets, by name"""

    targets = [
        DemoTarget(
            name="download",
            kind="cli-task",
            module="chaoscatch.harness.targets.download",
            artifact="download.bin",
            expected=DOWNLOAD_EXPECTED,
            variants={"v2": DOWNLOAD_V2_EXPECTED},
        ),
        DemoTarget(
            name="wiki",
            kind="http",
            module="chaoscatch.harness.targets.wiki",
            expected=WIKI_EXPECTED,
        ),
    ]

    return {t.name: t for t in targets}
