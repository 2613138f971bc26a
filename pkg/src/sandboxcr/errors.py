"""Exception types shared across the runtime."""


class SandboxCrError(Exception):
    """Base class for all runtime errors."""


# --- inspector ---

class UnknownSandbox(SandboxCrError):
    pass


class OutOfOrderSeq(SandboxCrError):
    """Event sequence number is stale or duplicated for its sandbox."""


class SeqBeyondIngested(SandboxCrError):
    """Net-change requested past the last ingested sequence number."""


class BaselineRegression(SandboxCrError):
    """Baseline reset attempted to move backwards."""


# --- coordinator ---

class PreviousGateUnresolved(SandboxCrError):
    """A new turn started while the previous turn's gate is still open."""


class NoMatchingTurn(SandboxCrError):
    pass


class DigestMismatchDuringReplay(SandboxCrError):
    """Agent diverged from the cached history during fast-forward."""


class IndexBeyondLog(SandboxCrError):
    pass


class UnknownCommand(SandboxCrError):
    pass


class ModeMismatch(SandboxCrError):
    """Operation requires a different agent deployment mode."""


# --- engine ---

class DuplicateTurnJob(SandboxCrError):
    pass


class UnknownJob(SandboxCrError):
    pass


class UnknownVersion(SandboxCrError):
    pass


class MissingCounterpart(SandboxCrError):
    """Partial checkpoint has no counterpart artifact and no initial capture."""


class BackendFailure(SandboxCrError):
    pass


# --- backends ---

class IoFailure(SandboxCrError):
    pass


class CorruptArtifact(SandboxCrError):
    """Stored artifact bytes do not match their recorded content hash."""


# --- sandbox / harness ---

class SandboxCrashed(SandboxCrError):
    pass


class PathConflict(SandboxCrError):
    """Tool action conflicts with current workspace or registry state."""


class TraceParse(SandboxCrError):
    pass


class SpecInvalid(SandboxCrError):
    pass


class ConfigInvalid(SandboxCrError):
    pass
