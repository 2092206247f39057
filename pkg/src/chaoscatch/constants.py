"""Constants used throughout chaoscatch."""

from enum import Enum

PROTOCOL_VERSION = 1
MAX_FRAME_BYTES = 16 * 1024 * 1024
INJECTION_MARKER = "CHAOS_INJECTED"
DEFAULT_METRICS_THRESHOLD = 0.25
MAX_RAW_BODY_BYTES = 1024 * 1024
REPORT_VERSION = 1
TRACE_VERSION = 1


class Mode(str, Enum):
    """The three modes a controller can run in."""

    OBSERVATION = "observation"
    EXPLORATION = "exploration"
    FALSIFICATION = "falsification"


class Category(str, Enum):
    """Hypothesis categories, from the most beneficial to the most problematic."""

    RESILIENT = "resilient"
    OBSERVABLE = "observable"
    DEBUGGABLE = "debuggable"
    SILENT = "silent"


class HypothesisStatus(str, Enum):
    """Lifecycle of a stored hypothesis."""

    PROPOSED = "proposed"
    ACCEPTED = "accepted"
    VALIDATED = "validated"
    FALSIFIED = "falsified"


class ExitStatus(str, Enum):
    """How a target ended its experiment window."""

    NORMAL = "normal"
    CRASHED = "crashed"
    STALLED_KILLED = "stalled-killed"


class MatchRule(str, Enum):
    """Which rule attributed a log line to an injection point."""

    MARKER = "marker"
    EXCEPTION_NAME = "exception-name"
    STACK_FRAME = "stack-frame"


class JournalKind(str, Enum):
    """Kinds of records in the experiment journal."""

    INJECTION = "injection"
    LOG = "log"
    METRICS = "metrics"
    EXIT = "exit"
    DIGEST = "digest"


class DiffVerdict(str, Enum):
    """Per-interaction comparison against the baseline."""

    EQUAL = "equal"
    DIFFERENT = "different"
    MISSING = "missing"


class Verbosity(str, Enum):
    """How much the sidecar records."""

    FULL = "full"
    FOCUSED = "focused"
