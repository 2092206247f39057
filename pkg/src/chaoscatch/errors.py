"""
This module defines the exception hierarchy for the application
"""


class ChaosError(Exception):
    """Base exception for all application-specific errors."""

    pass


class ConfigError(ChaosError):
    """The experiment configuration is missing or invalid."""

    pass


class AgentUnreachable(ChaosError):
    """No agent answered at the configured endpoint."""

    pass


class ExperimentInvalid(ChaosError):
    """
    The experiment cannot produce trustworthy results (e.g. an injector was
    found active during observation).
    """

    pass


class RegistrationError(ChaosError):
    """
    An injection point could not be registered. When the registration is a
    duplicate, `point_id` carries the id of the point registered first.
    """

    def __init__(self, message: str, point_id: str | None = None):
        super().__init__(message)
        self.point_id = point_id


class UnknownPoint(ChaosError):
    """The point id is not in the registry."""

    pass


class ProtocolError(ChaosError):
    """Something is wrong on the wire."""

    pass


class FrameError(ProtocolError):
    """A frame is truncated, oversized or not decodable."""

    pass


class UnknownMessageType(ProtocolError):
    """
    The frame is well-formed but names a message type we don't speak. The
    correlation ID is kept so that an ERROR reply can be sent.
    """

    def __init__(self, message: str, correlation_id: int = 0):
        super().__init__(message)
        self.correlation_id = correlation_id


class AgentCommandError(ProtocolError):
    """The agent replied ERROR to a command."""

    def __init__(self, code: str, message: str):
        super().__init__(f"{code}: {message}")
        self.code = code


class HypothesisError(ChaosError):
    """Invalid hypothesis lookup or lifecycle transition."""

    pass


class ComparatorError(ChaosError):
    """The requested behavior comparator is not registered."""

    pass


class SamplingError(ChaosError):
    """Metrics could not be sampled because the process is gone."""

    pass
