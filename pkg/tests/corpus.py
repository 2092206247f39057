"""
Evidence of a BitTorrent client perturbed block by block, one row per
recovery arm, with the categories each row is known to satisfy.
"""

from typing import NamedTuple

from chaoscatch.agent.base import InjectionPoint, Location, make_point_id
from chaoscatch.classifier import Counts, EvidenceBundle
from chaoscatch.constants import DiffVerdict, ExitStatus, MatchRule
from chaoscatch.telemetry.base import (
    InteractionDiff,
    LogEvidence,
    MetricsDelta,
    record_exit,
)


class Row(NamedTuple):
    key: str
    observation: int
    perturbed: int
    logged: bool
    downloaded: bool
    exit: str
    metrics: str
    marks: str
    stderr_error: bool = False


# fmt: off
TORRENT_ROWS = [
    Row("BEValue/getBytes,ClassCastException,0", 41, 1, True, False, "crashed", "-", "OH DH"),  # noqa: E501
    Row("BEValue/getNumber,ClassCastException,0", 15, 1, True, False, "crashed", "-", "OH DH"),  # noqa: E501
    Row("BEValue/getString,ClassCastException,0", 37, 1, True, False, "crashed", "-", "OH DH"),  # noqa: E501
    Row("BEValue/getString,UnsupportedEncodingException,1", 37, 1, True, False, "crashed", "-", "OH DH"),  # noqa: E501
    Row("ClientMain/main,CmdLineParser$OptionException,0", 1, 1, True, False, "crashed", "-", "OH DH"),  # noqa: E501
    Row("ClientMain/main,Exception,1", 1, 1, True, False, "crashed", "-", "OH DH"),
    # The tracker error is printed to the console when the first announce
    # fails. The other stalled rows stop quietly, with only a log line.
    Row("Announce/run,AnnounceException,0", 1, 60, True, False, "stalled", "-", "OH DH", stderr_error=True),  # noqa: E501
    Row("Announce/run,InterruptedException,2", 1, 760, False, True, "normal", "threads+", "DH"),  # noqa: E501
    Row("Announce/run,InterruptedException,3", 1, 1, False, True, "normal", "no diff", "RH"),  # noqa: E501
    Row("Announce/run,AnnounceException,4", 1, 1, True, True, "normal", "no diff", "RH DH"),  # noqa: E501
    Row("Announce/stop,InterruptedException,0", 1, 1, False, True, "normal", "no diff", "RH"),  # noqa: E501
    Row("ConnectionHandler/run,SocketTimeoutException,0", 1290, 1030, False, True, "normal", "no diff", "RH"),  # noqa: E501
    Row("ConnectionHandler/run,IOException,1", 1290, 1, True, True, "stalled", "cpu+", "DH"),  # noqa: E501
    Row("ConnectionHandler/run,InterruptedException,2", 1290, 2, True, False, "stalled", "no diff", "DH"),  # noqa: E501
    Row("ConnectionHandler/stop,InterruptedException,0", 1, 1, False, True, "normal", "no diff", "RH"),  # noqa: E501
    Row("ConnectionHandler$ConnectorTask/run,Exception,0", 50, 50, True, False, "stalled", "no diff", "DH"),  # noqa: E501
    Row("Handshake/craft,UnsupportedEncodingException,0", 50, 48, True, False, "stalled", "no diff", "DH"),  # noqa: E501
    Row("PeerExchange/send,InterruptedException,0", 90763, 210, False, False, "stalled", "no diff", "SH"),  # noqa: E501
    Row("PeerExchange/stop,InterruptedException,0", 46, 44, False, True, "normal", "no diff", "RH"),  # noqa: E501
    Row("PeerExchange$OutgoingThread/run,InterruptedException,0", 90805, 32984841, False, False, "stalled", "cpu+", "DH SH"),  # noqa: E501
    Row("PeerExchange$OutgoingThread/run,InterruptedException,1", 90763, 288, False, False, "stalled", "no diff", "SH"),  # noqa: E501
    Row("PeerExchange$OutgoingThread/run,IOException,2", 90805, 43, True, False, "stalled", "no diff", "DH"),  # noqa: E501
    Row("PeerExchange$OutgoingThread/run,IOException,3", 90763, 46, True, False, "stalled", "no diff", "DH"),  # noqa: E501
    Row("Piece/validate,NoSuchAlgorithmException,0", 2564, 5427, True, False, "stalled", "cpu+", "DH"),  # noqa: E501
    Row("HTTPAnnounceRespMessage/parse,InvalidBEncodingException,0", 3, 30, True, False, "stalled", "no diff", "DH"),  # noqa: E501
    Row("HTTPAnnounceRespMessage/parse,InvalidBEncodingException,1", 3, 30, True, False, "stalled", "no diff", "DH"),  # noqa: E501
    Row("HTTPAnnounceResponseMessage/parse,UnknownHostException,2", 3, 30, True, False, "stalled", "no diff", "DH"),  # noqa: E501
]
# fmt: on

MARKS = {"RH": "resilient", "OH": "observable", "DH": "debuggable", "SH": "silent"}

EXITS = {
    "normal": record_exit(ExitStatus.NORMAL, 0),
    "crashed": record_exit(ExitStatus.CRASHED, 1),
    "stalled": record_exit(ExitStatus.STALLED_KILLED, 300),
}


def point_of(key: str) -> InjectionPoint:
    where, error_kind, arm = key.split(",")
    unit, routine = where.split("/")
    location = Location(unit, routine)

    return InjectionPoint(
        point_id=make_point_id(location, int(arm)),
        unit=unit,
        routine=routine,
        block=0,
        error_kind=error_kind,
        arm_ordinal=int(arm),
    )


def metrics_of(label: str) -> MetricsDelta:
    if label == "-":
        return MetricsDelta(comparable=False)
    if label == "no diff":
        return MetricsDelta()
    return MetricsDelta(flags=[label], notes=[label])


def bundle_of(row: Row) -> EvidenceBundle:
    point = point_of(row.key)
    stdout = InteractionDiff(
        interaction_id="stdout",
        verdict=DiffVerdict.EQUAL if row.downloaded else DiffVerdict.DIFFERENT,
    )
    diffs = [stdout]

    if row.stderr_error:
        diffs.append(
            InteractionDiff(
                interaction_id="stderr",
                verdict=DiffVerdict.DIFFERENT,
                error_content=True,
            )
        )

    return EvidenceBundle(
        point_id=point.point_id,
        point=point,
        counts=Counts(
            observation=row.observation,
            perturbed=row.perturbed,
            injections_fired=row.perturbed,
        ),
        log_evidence=(
            LogEvidence(
                point_id=point.point_id,
                matched=True,
                sample_lines=[f"WARN {point.error_kind}"],
                match_rule=MatchRule.EXCEPTION_NAME,
            )
            if row.logged
            else LogEvidence(point_id=point.point_id)
        ),
        metrics_delta=metrics_of(row.metrics),
        digest_diff=diffs,
        exit=EXITS[row.exit],
        outcome_flag=row.downloaded,
    )


def expected_categories(row: Row) -> set[str]:
    return {MARKS[m] for m in row.marks.split()}
