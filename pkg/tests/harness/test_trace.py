import httpx
import pytest
import pytest_asyncio

from chaoscatch.errors import ConfigError
from chaoscatch.harness.trace import (
    Trace,
    TraceRequest,
    TraceResponse,
    TraceStep,
    is_error_response,
    load_trace,
    record,
    replay,
    save_trace,
)

BASE_URL = "http://wiki.test"

REQUESTS = [
    TraceRequest(path="/wiki/Chaos"),
    TraceRequest(method="POST", path="/wiki/Chaos/comments", body='{"text": "hi"}'),
]


@pytest_asyncio.fixture
async def client():
    async with httpx.AsyncClient(base_url=BASE_URL) as client:
        yield client


@pytest.mark.asyncio
async def test_record_then_replay(httpx_mock, client):
    for _ in range(2):
        httpx_mock.add_response(
            url=f"{BASE_URL}/wiki/Chaos", json={"title": "Chaos", "links": [1, 2]}
        )
        httpx_mock.add_response(
            method="POST", url=f"{BASE_URL}/wiki/Chaos/comments", status_code=201
        )

    trace = await record(client, REQUESTS, base_url=BASE_URL)
    interactions = await replay(client, trace)

    assert [s.expected.status_token for s in trace.steps if s.expected] == [
        "200",
        "201",
    ]
    assert [(i.status_token, i.body) for i in interactions] == [
        (i.status_token, i.body) for i in trace.expected_interactions()
    ]

    post = httpx_mock.get_requests()[1]
    assert post.content == b'{"text": "hi"}'


@pytest.mark.asyncio
async def test_failed_request_is_missing(httpx_mock, client):
    httpx_mock.add_exception(httpx.ReadTimeout("slow"))

    [interaction] = await replay(client, Trace.from_requests(REQUESTS[:1]))

    assert interaction.missing
    assert interaction.interaction_id == "step-0000"


@pytest.mark.asyncio
async def test_error_page_is_flagged(httpx_mock, client):
    httpx_mock.add_response(
        status_code=200, text="Traceback (most recent call last):\n  boom"
    )

    [interaction] = await replay(client, Trace.from_requests(REQUESTS[:1]))

    assert interaction.error_content


@pytest.mark.parametrize(
    ("status", "body", "expected"),
    [
        ("200", b"fine", False),
        ("302", b"", False),
        ("404", b"", True),
        ("200", b"CHAOS_INJECTED:p1", True),
    ],
)
def test_is_error_response(status, body, expected):
    assert is_error_response(status, body) == expected


def test_file_round_trip(tmp_path):
    trace = Trace(
        steps=[
            TraceStep(
                ordinal=0,
                request=REQUESTS[0],
                expected=TraceResponse.from_bytes("200", b"\xff\x00binary"),
            )
        ]
    )
    path = tmp_path / "trace.ndjson"

    save_trace(trace, path)
    loaded = load_trace(path)

    assert loaded == trace
    assert loaded.steps[0].expected.encoding == "base64"
    assert loaded.expected_interactions()[0].body == b"\xff\x00binary"


@pytest.mark.parametrize(
    "content",
    [
        "",
        '{"format": "har"}\n',
        '{"format": "chaoscatch-trace", "version": 99}\n',
        '{"format": "chaoscatch-trace", "version": 1}\n'
        '{"ordinal": 3, "request": {"path": "/"}}\n',
        "not json\n",
    ],
)
def test_invalid_trace_files(tmp_path, content):
    path = tmp_path / "trace.ndjson"
    path.write_text(content)

    with pytest.raises(ConfigError):
        load_trace(path)


def test_missing_trace_file(tmp_path):
    with pytest.raises(ConfigError):
        load_trace(tmp_path / "nope.ndjson")
