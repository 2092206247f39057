import os

import pytest

from chaoscatch.harness.overhead import CONDITIONS, measure_overhead


@pytest.mark.slow
@pytest.mark.skipif(
    os.environ.get("CHAOS_SLOW_TESTS") != "1",
    reason="repeated runs, set CHAOS_SLOW_TESTS=1",
)
@pytest.mark.asyncio
async def test_agent_overhead(tmp_path):
    report = await measure_overhead(tmp_path, runs=5)

    assert set(report.wall) == set(CONDITIONS)
    assert all(len(report.samples[c]) == 5 for c in CONDITIONS)
    assert report.idle_wall_overhead < 0.10
    assert report.focused_is_cheaper
