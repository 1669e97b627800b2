"""Exception hierarchy for the runtime."""


class DSPError(Exception):
    """Base class for every error raised by the runtime."""


class UnknownArchetype(DSPError, LookupError):
    pass


class NoSuchNode(DSPError, LookupError):
    pass


class NoSuchEdge(DSPError, LookupError):
    pass


class NoSuchWalker(DSPError, LookupError):
    pass


class WalkerStateError(DSPError):
    """Operation not allowed in the walker's current status."""


class IsolationViolation(DSPError):
    """An edge would join two users' persistent subgraphs."""

    def __init__(self, source, destination, conflicts=(), owners=None):
        self.source = source
        self.destination = destination
        self.conflicts = tuple(conflicts)
        self.owners = owners or {}
        super().__init__(
            f"edge {source} -> {destination} would join subgraphs of users "
            f"{sorted(set(self.owners.values()))} (shared: {list(self.conflicts)})"
        )


class WalkerFault(DSPError):
    """An ability raised while a walker was executing."""

    def __init__(self, walker, node, ability, cause):
        self.walker = walker
        self.node = node
        self.ability = ability
        self.cause = cause
        super().__init__(f"walker {walker} failed in ability {ability!r} at node {node}: {cause!r}")


class QuiescenceError(DSPError):
    """Operation requires that no walker is active."""


class CorruptImage(DSPError):
    pass


class VersionMismatch(DSPError):
    pass


class DuplicateEntryPoint(DSPError):
    pass


class UnknownEntryPoint(DSPError, LookupError):
    pass


class ValidationError(DSPError, ValueError):
    """Invocation parameters failed validation; ``errors`` maps parameter -> reason."""

    def __init__(self, errors):
        self.errors = dict(errors)
        detail = "; ".join(f"{k}: {v}" for k, v in sorted(self.errors.items()))
        super().__init__(f"invalid parameters: {detail}")


class CapacityExceeded(DSPError):
    pass


class MachineDead(DSPError):
    pass


class UnavailableNode(DSPError):
    """Node's primary machine is dead and no replica survives."""


class InsufficientMachines(DSPError):
    pass


class NoCheckpoint(DSPError):
    pass


class NotLost(DSPError):
    pass


class WalkerLost(BaseException):
    # BaseException so that ability code catching Exception cannot swallow it.
    def __init__(self, walker, machine):
        self.walker = walker
        self.machine = machine
        super().__init__(f"walker {walker} lost with machine {machine}")
