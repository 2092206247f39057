"""
Here we define the data the injection agent deals with: where a recovery block
lives, how its injector is doing, and what the agent decided when the block
was entered.
"""

import hashlib
from collections.abc import Callable
from dataclasses import dataclass, field
from typing import Literal, NamedTuple

from pydantic import BaseModel


class Location(NamedTuple):
    """
    Code position of a protected block.

    Parameters
    ----------
    unit
        The enclosing unit (class, module, ...), e.g. ``PeerExchange$OutgoingThread``
    routine
        The routine the block belongs to
    block
        Ordinal of the protected block within the routine
    """

    unit: str
    routine: str
    block: int = 0

    def __str__(self) -> str:
        return f"{self.unit}/{self.routine}#{self.block}"


def make_point_id(location: Location, arm_ordinal: int) -> str:
    """
    Point ids are opaque to everyone but stable for a given build, which lets
    the controller target the same block in a freshly restarted process.
    """

    key = f"{location.unit}\x1f{location.routine}\x1f{location.block}\x1f{arm_ordinal}"
    return "p" + hashlib.sha256(key.encode()).hexdigest()[:12]


def identity_key(location: Location, error_kind: str, arm_ordinal: int) -> str:
    """
    The identity of a recovery arm across versions, in the format of the
    reports: ``Unit/routine,ErrorKind,arm``. The block ordinal is appended
    only when it is not the first block of the routine.
    """

    routine = location.routine
    if location.block:
        routine = f"{routine}#{location.block}"
    return f"{location.unit}/{routine},{error_kind},{arm_ordinal}"


class InjectionPoint(BaseModel, frozen=True):
    """
    One interceptable recovery arm: a protected block paired with one of the
    error kinds it handles.
    """

    point_id: str
    unit: str
    routine: str
    block: int
    error_kind: str
    arm_ordinal: int

    @property
    def location(self) -> Location:
        """The code position of the protected block"""
        return Location(self.unit, self.routine, self.block)

    @property
    def key(self) -> str:
        """Identity across versions (and regenerated ids)"""
        return identity_key(self.location, self.error_kind, self.arm_ordinal)


class InjectorState(BaseModel):
    """
    Live state of one injector. Copies of this are handed out by snapshots,
    the agent keeps its own mutable instance behind a lock.
    """

    active: bool = False
    activation_deadline: float | None = None
    executions_observation: int = 0
    executions_perturbed: int = 0
    injections_fired: int = 0


class InjectionDecision(NamedTuple):
    """
    What the front end must do when entering a block: proceed with the
    protected body, or raise `error` without running a single statement of it.
    """

    action: Literal["proceed", "raise"]
    error_kind: str | None = None
    error: BaseException | None = None

    @property
    def should_raise(self) -> bool:
        """Shortcut for front ends"""
        return self.action == "raise"


PROCEED = InjectionDecision("proceed")

OverridePredicate = Callable[[InjectionPoint], bool]


@dataclass
class PointSlot:
    """Internal bookkeeping of the agent for one registered point"""

    point: InjectionPoint
    state: InjectorState = field(default_factory=InjectorState)
    error_type: type[BaseException] = Exception
    override: OverridePredicate | None = None
