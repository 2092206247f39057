"""
Recorded traffic. A trace file is newline-delimited JSON: a versioned header
line, then one line per step with the request and the response the
application gave when the trace was recorded. Replaying the trace drives the
application again and produces one transcript per step.
"""

import base64
import binascii
import json
import logging
from collections.abc import Iterable, Sequence
from pathlib import Path
from typing import Any, Literal

import httpx
from pydantic import BaseModel, Field, ValidationError, model_validator

from ..constants import INJECTION_MARKER, TRACE_VERSION
from ..errors import ConfigError
from ..telemetry.base import Interaction

logger = logging.getLogger(__name__)

TRACE_FORMAT = "chaoscatch-trace"
FIRST_ERROR_STATUS = 400
ERROR_MARKERS = (INJECTION_MARKER, "Traceback (most recent call last)")


class TraceRequest(BaseModel):
    """What to send"""

    method: str = "GET"
    path: str
    body: str | None = None
    headers: dict[str, str] = Field(default_factory=dict)


class TraceResponse(BaseModel):
    """What came back, the body either as text or base64"""

    status_token: str
    body: str = ""
    encoding: Literal["utf-8", "base64"] = "utf-8"

    @classmethod
    def from_bytes(cls, status_token: str, body: bytes) -> "TraceResponse":
        """Packs a raw body"""

        try:
            return cls(status_token=status_token, body=body.decode())
        except UnicodeDecodeError:
            return cls(
                status_token=status_token,
                body=base64.b64encode(body).decode(),
                encoding="base64",
            )

    @property
    def raw(self) -> bytes:
        """The body as it came on the wire"""

        if self.encoding == "base64":
            try:
                return base64.b64decode(self.body, validate=True)
            except binascii.Error as e:
                msg = "Invalid base64 body in trace"
                raise ValueError(msg) from e

        return self.body.encode()


class TraceStep(BaseModel):
    """One step of a trace"""

    ordinal: int = Field(ge=0)
    request: TraceRequest
    expected: TraceResponse | None = None

    @property
    def interaction_id(self) -> str:
        """Name of the interaction this step produces"""
        return f"step-{self.ordinal:04d}"


class TraceHeader(BaseModel):
    """First line of a trace file"""

    format: Literal["chaoscatch-trace"] = TRACE_FORMAT
    version: int = TRACE_VERSION
    base_url: str = ""

    @model_validator(mode="after")
    def _known_version(self) -> "TraceHeader":
        if self.version != TRACE_VERSION:
            msg = f"Unsupported trace version {self.version}"
            raise ValueError(msg)
        return self


class Trace(BaseModel):
    """A whole trace, steps in replay order"""

    header: TraceHeader = Field(default_factory=TraceHeader)
    steps: list[TraceStep] = Field(default_factory=list)

    @model_validator(mode="after")
    def _dense_ordinals(self) -> "Trace":
        for n, step in enumerate(self.steps):
            if step.ordinal != n:
                msg = f"Trace step {n} has ordinal {step.ordinal}"
                raise ValueError(msg)
        return self

    @classmethod
    def from_requests(cls, requests: Iterable[TraceRequest]) -> "Trace":
        """A trace with no expectations yet, to be recorded"""
        return cls(
            steps=[TraceStep(ordinal=n, request=r) for n, r in enumerate(requests)]
        )

    def expected_interactions(self) -> list[Interaction]:
        """The recorded responses, as transcripts"""

        return [
            Interaction(
                interaction_id=step.interaction_id,
                status_token=step.expected.status_token,
                body=step.expected.raw,
                error_content=is_error_response(
                    step.expected.status_token, step.expected.raw
                ),
            )
            for step in self.steps
            if step.expected is not None
        ]


def dump_trace(trace: Trace) -> str:
    """Serializes a trace"""

    lines = [trace.header.model_dump_json()]
    lines.extend(step.model_dump_json(exclude_none=True) for step in trace.steps)
    return "\n".join(lines) + "\n"


def load_trace(path: Path | str) -> Trace:
    """
    Reads a trace file.

    Raises
    ------
    ConfigError
        The file is missing, of another format or version, or malformed
    """

    path = Path(path)

    try:
        lines = [
            json.loads(line)
            for line in path.read_text(encoding="utf-8").splitlines()
            if line.strip()
        ]
    except (OSError, ValueError) as e:
        msg = f"Cannot read trace {path}: {e}"
        raise ConfigError(msg) from e

    if not lines:
        msg = f"Trace {path} is empty, it should at least have a header"
        raise ConfigError(msg)

    try:
        header = TraceHeader.model_validate(lines[0])
    except ValidationError as e:
        msg = f"{path} is not a trace: {e}"
        raise ConfigError(msg) from e

    try:
        return Trace(
            header=header,
            steps=[TraceStep.model_validate(line) for line in lines[1:]],
        )
    except ValidationError as e:
        msg = f"Invalid trace {path}: {e}"
        raise ConfigError(msg) from e


def save_trace(trace: Trace, path: Path | str) -> None:
    """Writes a trace file"""

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dump_trace(trace), encoding="utf-8")


def is_error_response(status_token: str, body: bytes) -> bool:
    """A status of 400 and above, or an error page"""

    if status_token.isdigit() and int(status_token) >= FIRST_ERROR_STATUS:
        return True

    return any(marker.encode() in body for marker in ERROR_MARKERS)


def _request_kwargs(request: TraceRequest) -> dict[str, Any]:
    kwargs: dict[str, Any] = {"headers": request.headers}
    if request.body is not None:
        kwargs["content"] = request.body.encode()
    return kwargs


async def record(
    client: httpx.AsyncClient,
    requests: Sequence[TraceRequest],
    base_url: str = "",
) -> Trace:
    """
    Sends a scripted session to a live target and keeps its responses as the
    expected ones.
    """

    steps = []

    for n, request in enumerate(requests):
        response = await client.request(
            request.method, request.path, **_request_kwargs(request)
        )
        steps.append(
            TraceStep(
                ordinal=n,
                request=request,
                expected=TraceResponse.from_bytes(
                    str(response.status_code), response.content
                ),
            )
        )
        logger.debug("Recorded %s %s", request.method, request.path)

    return Trace(header=TraceHeader(base_url=base_url), steps=steps)


async def replay_step(client: httpx.AsyncClient, step: TraceStep) -> Interaction:
    """Replays one step. A step that times out or fails is missing."""

    try:
        response = await client.request(
            step.request.method, step.request.path, **_request_kwargs(step.request)
        )
    except httpx.HTTPError as e:
        logger.debug("Step %s got no response: %s", step.ordinal, e)
        return Interaction(interaction_id=step.interaction_id, missing=True)

    status = str(response.status_code)

    return Interaction(
        interaction_id=step.interaction_id,
        status_token=status,
        body=response.content,
        error_content=is_error_response(status, response.content),
    )


async def replay(client: httpx.AsyncClient, trace: Trace) -> list[Interaction]:
    """Replays the whole trace once, in order"""
    return [await replay_step(client, step) for step in trace.steps]
