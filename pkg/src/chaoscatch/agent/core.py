"""
The in-process side of the chaos experiments: a registry of injection points
and the interception hook that front ends call at the very beginning of every
protected block.

A front end (instrumentation, decorator, or plain hand-written calls) does
this::

    try:
        agent.check(point_id)
        ...  # protected body
    except SomeError:
        ...  # recovery arm

When the injector of `point_id` is active, `check()` raises a synthesized
`SomeError` whose message carries the injection marker, so that none of the
protected body runs.
"""

import abc
import builtins
import importlib
import logging
import threading
import time
from collections import defaultdict
from collections.abc import Iterable

from ..constants import INJECTION_MARKER
from ..errors import RegistrationError, UnknownPoint
from .base import (
    PROCEED,
    InjectionDecision,
    InjectionPoint,
    InjectorState,
    Location,
    OverridePredicate,
    PointSlot,
    make_point_id,
)

logger = logging.getLogger(__name__)


def injection_message(point_id: str) -> str:
    """The message carried by every synthesized error"""
    return f"{INJECTION_MARKER}:{point_id}"


def build_error(error_type: type[BaseException], point_id: str) -> BaseException:
    """
    Instantiates the error with the marker message. Some built-in errors have
    picky constructors (`UnicodeDecodeError` and friends), in which case we
    bypass them and initialize the base exception directly.
    """

    message = injection_message(point_id)

    try:
        return error_type(message)
    except TypeError:
        error = error_type.__new__(error_type)
        BaseException.__init__(error, message)
        return error


class AgentObserver(abc.ABC):  # noqa: B024
    """
    Implement this to be told about what happens inside the agent. All methods
    are called from the thread that triggered them (usually an application
    thread), so keep them short and never raise.
    """

    def on_register(self, point: InjectionPoint) -> None:  # noqa: B027
        """A new point has been registered"""

    def on_injection(  # noqa: B027
        self, point: InjectionPoint, timestamp: float
    ) -> None:
        """An error is about to be raised at the entry of `point`"""

    def on_unknown_point(self, point_id: str) -> None:  # noqa: B027
        """A block was entered with an id nobody registered"""

    def on_activation(self, point_id: str, state: InjectorState) -> None:  # noqa: B027
        """The activation of an injector changed"""


class Agent:
    """
    Registry of injection points and their injectors. Everything here is safe
    to call from any thread: the host application enters blocks from its own
    threads while the protocol thread flips injectors on and off.
    """

    def __init__(self, clock=time.monotonic, wall_clock=time.time):
        self._clock = clock
        self._wall_clock = wall_clock
        self._lock = threading.Lock()
        self._slots: dict[str, PointSlot] = {}
        self._by_arm: dict[tuple[Location, int], str] = {}
        self._arms: dict[Location, int] = defaultdict(int)
        self._error_kinds: dict[str, type[BaseException]] = {}
        self._observers: list[AgentObserver] = []
        self._warned: set[str] = set()

    def add_observer(self, observer: AgentObserver) -> None:
        """Subscribes an observer to the agent's events"""
        self._observers.append(observer)

    def remove_observer(self, observer: AgentObserver) -> None:
        """Unsubscribes an observer, no-op if it wasn't there"""
        if observer in self._observers:
            self._observers.remove(observer)

    def register_error_kind(self, error_type: type[BaseException]) -> None:
        """
        Teaches the agent how to build an error kind it couldn't find by
        itself (typically an exception class defined by the application).
        """

        with self._lock:
            self._error_kinds[error_type.__name__] = error_type
            self._error_kinds[
                f"{error_type.__module__}.{error_type.__qualname__}"
            ] = error_type

    def _resolve_error_kind(self, error_kind: str) -> type[BaseException]:
        """
        Finds the exception class for a symbolic name. Built-ins and
        registered kinds come first, then dotted import paths. Anything else
        is synthesized so that names coming from other runtimes stay usable.
        """

        if found := self._error_kinds.get(error_kind):
            return found

        candidate = getattr(builtins, error_kind, None)
        if isinstance(candidate, type) and issubclass(candidate, BaseException):
            return candidate

        module_name, sep, attr = error_kind.replace(":", ".").rpartition(".")
        if sep and module_name:
            try:
                module = importlib.import_module(module_name)
            except ImportError:
                pass
            else:
                candidate = getattr(module, attr, None)
                if isinstance(candidate, type) and issubclass(
                    candidate, BaseException
                ):
                    return candidate

        synthesized = type(attr or error_kind, (Exception,), {})
        return self._error_kinds.setdefault(error_kind, synthesized)

    def register_point(
        self,
        location: Location | tuple[str, str, int],
        error_kind: str,
        arm_ordinal: int = 0,
        override: OverridePredicate | None = None,
    ) -> str:
        """
        Registers one recovery arm of a protected block.

        Parameters
        ----------
        location
            (unit, routine, block ordinal)
        error_kind
            Name of the error the arm handles
        arm_ordinal
            Index of the arm within the protected block. Arms of a block must
            be registered densely, starting at 0.
        override
            Optional predicate deciding, at each entry of an active point,
            whether the error is really raised

        Returns
        -------
        str
            The id of the new point
        """

        location = Location(*location)

        if not error_kind or not error_kind.strip():
            msg = f"Empty error kind for {location} arm {arm_ordinal}"
            raise RegistrationError(msg)

        if arm_ordinal < 0:
            msg = f"Negative arm ordinal for {location}"
            raise RegistrationError(msg)

        error_type = self._resolve_error_kind(error_kind)

        with self._lock:
            if existing := self._by_arm.get((location, arm_ordinal)):
                msg = f"{location} arm {arm_ordinal} is already registered"
                raise RegistrationError(msg, point_id=existing)

            if arm_ordinal > self._arms[location]:
                msg = (
                    f"{location} arm {arm_ordinal} registered before arm "
                    f"{self._arms[location]}"
                )
                raise RegistrationError(msg)

            point_id = make_point_id(location, arm_ordinal)
            point = InjectionPoint(
                point_id=point_id,
                unit=location.unit,
                routine=location.routine,
                block=location.block,
                error_kind=error_kind,
                arm_ordinal=arm_ordinal,
            )
            self._slots[point_id] = PointSlot(
                point=point,
                error_type=error_type,
                override=override,
            )
            self._by_arm[(location, arm_ordinal)] = point_id
            self._arms[location] += 1

        for observer in self._observers:
            observer.on_register(point)

        return point_id

    def _expire(self, slot: PointSlot, now: float) -> None:
        """Auto-expiry, to be called with the lock held"""
        deadline = slot.state.activation_deadline
        if slot.state.active and deadline is not None and now > deadline:
            slot.state.active = False
            slot.state.activation_deadline = None

    def enter_block(self, point_id: str) -> InjectionDecision:
        """
        The interception hook. Counts the entry in the mode of the point
        itself and decides whether to short-circuit the block. Unknown ids
        fail open: we never want to be the reason the host crashed.
        """

        with self._lock:
            slot = self._slots.get(point_id)

            if slot is None:
                unknown = True
            else:
                unknown = False
                self._expire(slot, self._clock())
                state = slot.state

                if not state.active:
                    state.executions_observation += 1
                    return PROCEED

                state.executions_perturbed += 1

                if slot.override is not None and not slot.override(slot.point):
                    return PROCEED

                state.injections_fired += 1

        if unknown:
            if point_id not in self._warned:
                self._warned.add(point_id)
                logger.warning("Block entered with unknown point id %s", point_id)
            for observer in self._observers:
                observer.on_unknown_point(point_id)
            return PROCEED

        timestamp = self._wall_clock()
        for observer in self._observers:
            observer.on_injection(slot.point, timestamp)

        return InjectionDecision(
            action="raise",
            error_kind=slot.point.error_kind,
            error=build_error(slot.error_type, point_id),
        )

    def check(self, point_id: str) -> None:
        """
        Front-end helper: enters the block and raises the synthesized error if
        the injector decided so.
        """

        decision = self.enter_block(point_id)
        if decision.error is not None:
            raise decision.error

    def set_active(
        self,
        point_id: str,
        active: bool,
        duration: float | None = None,
    ) -> InjectorState:
        """
        Activates (for `duration` seconds) or deactivates an injector.
        Deactivating twice is fine.

        Returns
        -------
        InjectorState
            A copy of the state right after the change
        """

        if active and (duration is None or duration <= 0):
            msg = f"Activation duration must be > 0, got {duration}"
            raise ValueError(msg)

        with self._lock:
            slot = self._slots.get(point_id)
            if slot is None:
                msg = f"Unknown point {point_id}"
                raise UnknownPoint(msg)

            if active:
                assert duration is not None  # noqa: S101
                slot.state.active = True
                slot.state.activation_deadline = self._clock() + duration
            else:
                slot.state.active = False
                slot.state.activation_deadline = None

            state = slot.state.model_copy()

        for observer in self._observers:
            observer.on_activation(point_id, state)

        return state

    def deactivate_all(self) -> None:
        """Emergency brake"""
        with self._lock:
            for slot in self._slots.values():
                slot.state.active = False
                slot.state.activation_deadline = None

    def snapshot_counters(
        self, point_id: str | None = None
    ) -> list[tuple[str, InjectorState]]:
        """
        Point-in-time copy of the injector states, for one point or all of
        them (in registration order).
        """

        now = self._clock()

        with self._lock:
            if point_id is not None:
                if point_id not in self._slots:
                    msg = f"Unknown point {point_id}"
                    raise UnknownPoint(msg)
                ids: Iterable[str] = [point_id]
            else:
                ids = list(self._slots)

            out = []
            for pid in ids:
                slot = self._slots[pid]
                self._expire(slot, now)
                out.append((pid, slot.state.model_copy()))

            return out

    def active_points(self) -> list[str]:
        """Ids of the injectors currently active"""
        return [pid for pid, s in self.snapshot_counters() if s.active]

    def points(self) -> list[InjectionPoint]:
        """All registered points, in registration order"""
        with self._lock:
            return [slot.point for slot in self._slots.values()]

    def get_point(self, point_id: str) -> InjectionPoint | None:
        """Looks a point up by id"""
        with self._lock:
            slot = self._slots.get(point_id)
            return slot.point if slot else None
