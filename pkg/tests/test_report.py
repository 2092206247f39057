import json
import random

from chaoscatch.classifier import classify, load_spec
from chaoscatch.report import load_entries, make_entry, render, sort_entries

from .corpus import TORRENT_ROWS, bundle_of

EMPTY_REPORT = """{
  "entries": [],
  "meta": {},
  "report_version": 1,
  "totals": {
    "debuggable": 0,
    "entries": 0,
    "logged": 0,
    "observable": 0,
    "observation": 0,
    "outcome": 0,
    "perturbed": 0,
    "resilient": 0,
    "silent": 0,
    "uncovered": 0
  }
}
"""

ENTRY_FIELDS = {
    "key",
    "point_id",
    "unit",
    "routine",
    "block",
    "error_kind",
    "arm_ordinal",
    "observation",
    "perturbed",
    "injections_fired",
    "logged",
    "outcome",
    "exit_status",
    "metrics",
    "resilient",
    "observable",
    "debuggable",
    "silent",
    "verdict",
    "tier",
    "rank",
}


def torrent_entries():
    spec = load_spec("cli-task")
    return [
        make_entry(bundle, classify(bundle, spec))
        for bundle in map(bundle_of, TORRENT_ROWS)
    ]


def test_empty_report():
    assert render([], "json") == EMPTY_REPORT


def test_silent_entries_come_first():
    ordered = sort_entries(torrent_entries())

    assert [e.key for e in ordered[:3]] == [
        "PeerExchange$OutgoingThread/run,InterruptedException,0",
        "PeerExchange$OutgoingThread/run,InterruptedException,1",
        "PeerExchange/send,InterruptedException,0",
    ]
    assert [e.rank for e in ordered] == list(range(1, 28))


def test_tiers_are_monotonic():
    tiers = [e.tier for e in sort_entries(torrent_entries())]

    assert tiers == sorted(tiers)
    assert tiers[-6:] == [4] * 6


def test_render_is_stable():
    entries = torrent_entries()
    expected = render(entries, "json")
    rng = random.Random(7)  # noqa: S311

    for _ in range(10):
        rng.shuffle(entries)
        assert render(entries, "json") == expected


def test_totals_match_corpus():
    document = json.loads(render(torrent_entries(), "json"))

    assert document["totals"]["entries"] == 27
    assert {k: document["totals"][k] for k in ("resilient", "observable")} == {
        "resilient": 6,
        "observable": 7,
    }
    assert document["totals"]["debuggable"] == 20
    assert document["totals"]["silent"] == 3


def test_entry_fields():
    document = json.loads(render(torrent_entries(), "json", meta={"run_id": "r1"}))

    assert document["meta"] == {"run_id": "r1"}
    assert all(set(e) == ENTRY_FIELDS for e in document["entries"])


def test_json_round_trip():
    text = render(torrent_entries(), "json")

    assert render(load_entries(text), "json") == text


def test_text_and_json_carry_the_same_rows():
    entries = torrent_entries()
    text = render(entries, "text")

    assert "Resilience report" in text
    assert "total: 27" in text
    for entry in entries:
        assert entry.key in text
