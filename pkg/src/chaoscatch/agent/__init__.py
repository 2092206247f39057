"""
In-process injection agent. The protocol server and the environment bootstrap
live in `chaoscatch.agent.server` and `chaoscatch.agent.runtime`.
"""

from .base import InjectionDecision, InjectionPoint, InjectorState, Location
from .core import Agent, AgentObserver

__all__ = [
    "Agent",
    "AgentObserver",
    "InjectionDecision",
    "InjectionPoint",
    "InjectorState",
    "Location",
]
