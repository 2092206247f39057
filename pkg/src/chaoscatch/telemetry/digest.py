"""
Behavior digests: fingerprints of what a user sees, normalized by a
comparator so that two outputs with the same meaning get the same digest.
"""

import abc
import hashlib
import json
from collections.abc import Mapping
from pathlib import Path
from typing import Any

from ..constants import MAX_RAW_BODY_BYTES, DiffVerdict
from ..errors import ComparatorError
from .base import BehaviorDigest, Interaction, InteractionDiff


class Comparator(abc.ABC):
    """Decides what "same content" means"""

    comparator_id: str

    @abc.abstractmethod
    def normalize(self, body: bytes) -> tuple[bytes, bool]:
        """
        Returns the normalized body and whether the comparator had to fall
        back to comparing bytes verbatim.
        """

        raise NotImplementedError


class VerbatimComparator(Comparator):
    """Byte for byte"""

    comparator_id = "verbatim"

    def normalize(self, body: bytes) -> tuple[bytes, bool]:
        """Nothing to do"""
        return body, False


def _canonical(value: Any) -> Any:
    """
    Order-insensitive form of a JSON document: keys are sorted on output and
    lists are sorted by the canonical encoding of their items.
    """

    if isinstance(value, dict):
        return {k: _canonical(v) for k, v in value.items()}

    if isinstance(value, list):
        items = [_canonical(v) for v in value]
        return sorted(items, key=lambda v: json.dumps(v, sort_keys=True))

    return value


class StructuredComparator(Comparator):
    """
    Compares JSON documents regardless of key order and array order, so that
    ``{"options": [1, 14]}`` and ``{"options": [14, 1]}`` are the same thing.
    Bodies that are not JSON are compared verbatim.
    """

    comparator_id = "structured"

    def normalize(self, body: bytes) -> tuple[bytes, bool]:
        """Canonical JSON, or the bytes themselves with the fallback flag"""

        try:
            doc = json.loads(body)
        except (UnicodeDecodeError, json.JSONDecodeError):
            return body, True

        canonical = json.dumps(
            _canonical(doc),
            sort_keys=True,
            separators=(",", ":"),
            ensure_ascii=False,
        )
        return canonical.encode("utf-8"), False


COMPARATORS: dict[str, Comparator] = {
    c.comparator_id: c for c in [VerbatimComparator(), StructuredComparator()]
}


def register_comparator(comparator: Comparator) -> None:
    """Makes a custom comparator available by its id"""
    COMPARATORS[comparator.comparator_id] = comparator


def get_comparator(comparator_id: str) -> Comparator:
    """Looks a comparator up by id"""

    try:
        return COMPARATORS[comparator_id]
    except KeyError as e:
        msg = f"Unknown comparator {comparator_id!r}, known: {sorted(COMPARATORS)}"
        raise ComparatorError(msg) from e


def digest_behavior(
    interaction: Interaction,
    comparator_id: str,
    raw_dir: Path | None = None,
) -> BehaviorDigest:
    """
    Computes the digest of one interaction. When `raw_dir` is given, the raw
    body (capped in size) is stored there, named after its digest, and
    referenced from the result.
    """

    comparator = get_comparator(comparator_id)

    if interaction.missing:
        return BehaviorDigest(
            interaction_id=interaction.interaction_id,
            status_token="",
            body_hash="",
            missing=True,
        )

    normalized, fallback = comparator.normalize(interaction.body)
    body_hash = hashlib.sha256(normalized).hexdigest()
    raw_ref = None

    if raw_dir is not None and interaction.body:
        raw_dir.mkdir(parents=True, exist_ok=True)
        raw_ref = f"{hashlib.sha256(interaction.body).hexdigest()[:24]}.bin"
        target = raw_dir / raw_ref
        if not target.exists():
            target.write_bytes(interaction.body[:MAX_RAW_BODY_BYTES])

    return BehaviorDigest(
        interaction_id=interaction.interaction_id,
        status_token=interaction.status_token,
        body_hash=body_hash,
        raw_body_ref=raw_ref,
        error_content=interaction.error_content,
        fallback=fallback,
    )


def compare_digests(
    baseline: Mapping[str, BehaviorDigest],
    perturbed: Mapping[str, BehaviorDigest],
) -> list[InteractionDiff]:
    """
    Compares every baseline interaction with its perturbed counterpart. An
    interaction absent from the perturbed side, or marked missing, is
    ``missing``.
    """

    out = []

    for interaction_id in sorted(baseline):
        before = baseline[interaction_id]
        after = perturbed.get(interaction_id)

        if after is None or after.missing:
            out.append(
                InteractionDiff(
                    interaction_id=interaction_id,
                    verdict=DiffVerdict.MISSING,
                )
            )
        elif before.equivalent(after):
            out.append(
                InteractionDiff(
                    interaction_id=interaction_id,
                    verdict=DiffVerdict.EQUAL,
                )
            )
        else:
            out.append(
                InteractionDiff(
                    interaction_id=interaction_id,
                    verdict=DiffVerdict.DIFFERENT,
                    status_changed=before.status_token != after.status_token,
                    error_content=after.error_content,
                )
            )

    return out
