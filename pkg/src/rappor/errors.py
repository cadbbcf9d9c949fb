"""Exception hierarchy shared by all pipeline stages."""


class RapporError(Exception):
    """Base class for every error raised by this package."""


class InvalidParams(RapporError):
    def __init__(self, field: str, reason: str):
        self.field = field
        self.reason = reason
        super().__init__(f"invalid parameter {field!r}: {reason}")


class DegenerateNoise(RapporError):
    """Noise settings leave nothing to invert (q* == p*, or zero lie rate)."""


class NoMatch(RapporError):
    """Parameter search found no grid point within tolerance."""


class EmptyValue(RapporError):
    """The empty string cannot be encoded."""


class DuplicateCandidate(RapporError):
    def __init__(self, candidate: str):
        self.candidate = candidate
        super().__init__(f"duplicate candidate: {candidate!r}")


class EmptyCandidateList(RapporError):
    """A candidate list must contain at least one string."""


class MalformedRow(RapporError):
    def __init__(self, line: int, reason: str):
        self.line = line
        self.reason = reason
        super().__init__(f"line {line}: {reason}")


class InvariantViolation(RapporError):
    """Persisted data contradicts a structural invariant."""


class CohortOutOfRange(RapporError):
    pass


class BitLengthMismatch(RapporError):
    pass


class ShapeMismatch(RapporError):
    pass


class MaxIterations(RapporError):
    def __init__(self, limit: int):
        self.limit = limit
        super().__init__(f"solver did not converge within {limit} iterations")


class InsufficientUsers(RapporError):
    pass


class InsufficientReports(RapporError):
    def __init__(self, client: str, available: int, wanted: int):
        self.client = client
        super().__init__(
            f"client {client!r} has {available} reports, {wanted} requested"
        )


class EmptyDataset(RapporError):
    pass
