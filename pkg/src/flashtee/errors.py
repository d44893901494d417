"""Exception hierarchy for the simulator.

Every error raised by the library derives from SimError so callers can
distinguish simulation failures from programming mistakes.
"""


class SimError(Exception):
    """Base class for all simulator errors."""


class ConfigError(SimError):
    """Bad or inconsistent run configuration."""


# --- event kernel ---

class SchedulingInPast(SimError):
    """An event was scheduled before the current virtual clock."""


class EventLimitExceeded(SimError):
    """The dispatched-event safety cap was hit (likely livelock)."""


# --- flash array ---

class ReadOfFreePage(SimError):
    pass


class ReadOfInvalidPage(SimError):
    pass


class ProgramToNonFreePage(SimError):
    pass


class ProgramOutOfOrder(SimError):
    """Pages within a block must be programmed at increasing offsets."""


# --- FTL ---

class PermissionDenied(SimError):
    """Mapping entry owner does not match the requesting task."""


class UnmappedLpa(SimError):
    pass


class OwnershipConflict(SimError):
    """An LPA is already owned by a different task."""


class DeviceFull(SimError):
    """No free page available and garbage collection made no progress."""


# --- secure memory ---

class WriteToReadOnly(SimError):
    pass


class ReclassificationForbidden(SimError):
    pass


class IntegrityViolation(SimError):
    """A MAC or Merkle-tree check failed; the message names the location."""


class PayloadModeRequired(SimError):
    """Operation needs real page payloads (run with faithful=True)."""


# --- cipher ---

class IvSpaceExhausted(SimError):
    """An initialization vector would be issued twice."""


# --- TEE runtime ---

class TidInUse(SimError):
    pass


class CreateFailed(SimError):
    """Not enough normal-region memory for the requested task."""


class InvalidState(SimError):
    """Lifecycle operation applied in a disallowed state."""


class AbortedByRuntime(SimError):
    """The task was thrown out; .cause carries the abort reason."""

    def __init__(self, tid: int, cause: str):
        super().__init__(f"task {tid} aborted: {cause}")
        self.tid = tid
        self.cause = cause


class NotReady(SimError):
    pass


class AlreadyRetrieved(SimError):
    pass


# --- workloads / bench ---

class UnknownWorkload(SimError):
    pass


class UnknownAxis(SimError):
    pass
