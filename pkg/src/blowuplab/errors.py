"""Exception hierarchy shared by every engine."""


class BlowupError(Exception):
    """Base class for all library errors."""


class ParseError(BlowupError):
    def __init__(self, message, offset):
        super().__init__(f"{message} (at offset {offset})")
        self.offset = offset


class EvalDomainError(BlowupError):
    def __init__(self, message, subexpr=None):
        super().__init__(message if subexpr is None else f"{message}: {subexpr}")
        self.subexpr = subexpr


class NonDifferentiable(BlowupError):
    pass


class ConfigError(BlowupError):
    def __init__(self, message, key=None):
        super().__init__(message if key is None else f"{key}: {message}")
        self.key = key


class QuadFailure(BlowupError):
    pass


class GridTooCoarse(BlowupError):
    pass


class DimensionError(BlowupError):
    pass


class JumpsUnsupported(BlowupError):
    pass


class DriftNotPositive(BlowupError):
    pass


class DriftNotMonotone(BlowupError):
    pass


class CandidateNotPositive(BlowupError):
    def __init__(self, message, witness=None):
        super().__init__(message)
        self.witness = witness


class UnboundedCandidate(BlowupError):
    pass


class MomentDiverges(BlowupError):
    pass


class NotSymmetric(BlowupError):
    pass


class PreconditionError(BlowupError):
    pass


class SupremumDiverges(PreconditionError):
    """The supremum needed for a bound is infinite, so the hypothesis fails."""
