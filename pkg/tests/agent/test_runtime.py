from pathlib import Path

import pytest

from chaoscatch.agent.runtime import AgentSettings, attach_from_env
from chaoscatch.constants import Verbosity
from chaoscatch.errors import ConfigError


def test_no_port_means_no_agent():
    assert AgentSettings.from_env({"CHAOS_JOURNAL": "/run/j"}) is None
    assert attach_from_env({}) is None


def test_settings_from_env():
    settings = AgentSettings.from_env(
        {
            "CHAOS_AGENT_PORT": "7000",
            "CHAOS_AGENT_HOLD": "1",
            "CHAOS_JOURNAL": "/run/w/journal.ndjson",
            "CHAOS_APP_LOG": "",
            "CHAOS_TELEMETRY_VERBOSITY": "focused",
            "PATH": "/usr/bin",
        }
    )

    assert settings.agent_port == 7000
    assert settings.agent_hold
    assert settings.journal == Path("/run/w/journal.ndjson")
    assert settings.app_log is None
    assert settings.telemetry_verbosity == Verbosity.FOCUSED


@pytest.mark.parametrize(
    "environ",
    [
        {"CHAOS_AGENT_PORT": "http"},
        {"CHAOS_AGENT_PORT": "7000", "CHAOS_TELEMETRY_VERBOSITY": "loud"},
    ],
)
def test_invalid_environment(environ):
    with pytest.raises(ConfigError):
        AgentSettings.from_env(environ)
