import itertools

import pytest

from chaoscatch.classifier import (
    UNCOVERED,
    CategorySet,
    Counts,
    EvidenceBundle,
    classify,
    classify_corpus,
    group_key,
    load_spec,
)
from chaoscatch.constants import DiffVerdict, ExitStatus, MatchRule
from chaoscatch.errors import ConfigError
from chaoscatch.telemetry.base import (
    InteractionDiff,
    LogEvidence,
    MetricsDelta,
    record_exit,
)

from .corpus import TORRENT_ROWS, bundle_of, expected_categories

EXITS = ["normal", "crashed", "stalled"]

SPACE = list(
    itertools.product(
        EXITS,
        [False, True],  # logged
        [False, True],  # abnormal metrics
        ["all-equal", "some-diff"],
        [False, True],  # outcome
    )
)


def make_bundle(exit_, logged, abnormal, digest, outcome) -> EvidenceBundle:
    exits = {
        "normal": record_exit(ExitStatus.NORMAL, 0),
        "crashed": record_exit(ExitStatus.CRASHED, 1),
        "stalled": record_exit(ExitStatus.STALLED_KILLED, 10),
    }

    return EvidenceBundle(
        point_id="p1",
        counts=Counts(observation=3, perturbed=3, injections_fired=3),
        log_evidence=(
            LogEvidence(
                point_id="p1",
                matched=True,
                sample_lines=["ERROR OSError"],
                match_rule=MatchRule.EXCEPTION_NAME,
            )
            if logged
            else LogEvidence(point_id="p1")
        ),
        metrics_delta=MetricsDelta(flags=["cpu+"] if abnormal else []),
        digest_diff=[
            InteractionDiff(
                interaction_id="body",
                verdict=(
                    DiffVerdict.EQUAL
                    if digest == "all-equal"
                    else DiffVerdict.DIFFERENT
                ),
            )
        ],
        exit=exits[exit_],
        outcome_flag=outcome,
    )


def task_truth(exit_, logged, abnormal, digest, outcome) -> set[str]:
    """Written from the category definitions, table style"""

    out = set()

    # A batch task is seen failing only when it crashes
    if exit_ == "crashed":
        out.add("observable")
    elif exit_ == "normal" and outcome and digest == "all-equal" and not abnormal:
        out.add("resilient")

    if logged or abnormal:
        out.add("debuggable")

    if not outcome and exit_ != "crashed" and not logged:
        out.add("silent")

    return out


def http_truth(exit_, logged, abnormal, digest, outcome) -> set[str]:
    """The outcome of a service is its bodies, any exit but normal is seen"""

    out = set()
    equal = digest == "all-equal"

    if exit_ != "normal":
        out.add("observable")
    elif equal and not abnormal:
        out.add("resilient")

    if logged or abnormal:
        out.add("debuggable")

    if not equal and exit_ == "normal" and not logged:
        out.add("silent")

    return out


@pytest.mark.parametrize(
    ("preset", "truth"), [("cli-task", task_truth), ("http", http_truth)]
)
def test_truth_table(preset, truth):
    spec = load_spec(preset)
    disagreements = []

    for case in SPACE:
        result = classify(make_bundle(*case), spec)
        if {c.value for c in result.categories} != truth(*case):
            disagreements.append(case)

    assert len(SPACE) == 48
    assert disagreements == []


@pytest.mark.parametrize("case", SPACE)
def test_exclusions_always_hold(case):
    result = classify(make_bundle(*case), load_spec("cli-task"))

    assert not (result.resilient and result.observable)
    if result.silent:
        assert not result.resilient
        assert not result.observable
        assert not make_bundle(*case).log_evidence.matched


@pytest.mark.parametrize("row", TORRENT_ROWS, ids=lambda r: r.key)
def test_torrent_rows(row):
    result = classify(bundle_of(row), load_spec("cli-task"))

    assert {c.value for c in result.categories} == expected_categories(row)


def test_stalled_run_is_observable_only_through_stderr():
    [row] = [r for r in TORRENT_ROWS if r.stderr_error]
    spec = load_spec("cli-task")

    loud = classify(bundle_of(row), spec)
    quiet = classify(bundle_of(row._replace(stderr_error=False)), spec)

    assert {c.value for c in loud.categories} == {"observable", "debuggable"}
    assert {c.value for c in quiet.categories} == {"debuggable"}


def test_torrent_totals():
    summary = classify_corpus(
        [bundle_of(r) for r in TORRENT_ROWS], load_spec("cli-task")
    )

    assert summary.total == 27
    assert summary.counts == {
        "resilient": 6,
        "observable": 7,
        "debuggable": 20,
        "silent": 3,
    }
    assert summary.groups["PeerExchange"] == {
        "resilient": 1,
        "observable": 0,
        "debuggable": 3,
        "silent": 3,
    }


def test_empty_corpus():
    summary = classify_corpus([], load_spec("http"))

    assert summary.total == 0
    assert set(summary.counts.values()) == {0}


def test_uncovered_bundle():
    bundle = make_bundle("normal", False, False, "all-equal", True)
    bundle = bundle.model_copy(update={"counts": Counts(observation=4)})

    result = classify(bundle, load_spec("cli-task"))

    assert result.verdict == UNCOVERED
    assert result.categories == []


def test_redirect_with_log_is_observable_and_debuggable():
    bundle = EvidenceBundle(
        point_id="p1",
        counts=Counts(perturbed=1, injections_fired=1),
        log_evidence=LogEvidence(
            point_id="p1",
            matched=True,
            sample_lines=["WARN CHAOS_INJECTED:p1"],
            match_rule=MatchRule.MARKER,
        ),
        digest_diff=[
            InteractionDiff(
                interaction_id="GET /bin/view/Main",
                verdict=DiffVerdict.DIFFERENT,
                status_changed=True,
            )
        ],
        exit=record_exit(ExitStatus.NORMAL, 0),
    )

    result = classify(bundle, load_spec("http"))

    assert {c.value for c in result.categories} == {"observable", "debuggable"}
    assert "GET /bin/view/Main: status changed" in result.notes["observable"]


def test_classify_is_pure():
    bundle = bundle_of(TORRENT_ROWS[19])
    spec = load_spec("cli-task")

    assert classify(bundle, spec) == classify(bundle, spec)


def test_invalid_category_set():
    with pytest.raises(ValueError, match="resilient and observable"):
        CategorySet(resilient=True, observable=True)


def test_spec_presets_and_overrides():
    assert load_spec("http").comparator_id == "structured"
    assert load_spec("http", comparator="verbatim").comparator_id == "verbatim"

    with pytest.raises(ConfigError):
        load_spec("desktop")

    with pytest.raises(ConfigError):
        load_spec("http", comparator="fuzzy")

    with pytest.raises(ConfigError):
        load_spec("http", overrides={"visibility_predicate": "psychic"})


@pytest.mark.parametrize(
    ("unit", "depth", "expected"),
    [
        ("PeerExchange$OutgoingThread", 1, "PeerExchange"),
        ("org.xwiki.rendering.Macro", 2, "org.xwiki"),
        ("mirror", 3, "mirror"),
    ],
)
def test_group_key(unit, depth, expected):
    assert group_key(unit, depth) == expected
