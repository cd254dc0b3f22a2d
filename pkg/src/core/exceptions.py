"""Exception hierarchy. Each family maps to a CLI exit code."""


class PackingLabError(Exception):
    """Base class for all packing-lab errors."""

    exit_code = 1


class ValidationFailure(PackingLabError):
    """Input or precondition violated."""

    exit_code = 2


class DimensionMismatchError(ValidationFailure):
    """Points, boundaries or configurations of different dimension were mixed."""


class PackingFormatError(ValidationFailure):
    """A packing, curve or ensemble file could not be parsed."""


class TriangulationError(ValidationFailure):
    """Degenerate input or a triangulation that does not match its configuration."""


class ContactRuleError(ValidationFailure):
    """Contact rule parameters are not usable."""


class GeneratorFailure(PackingLabError):
    """A packing generator could not produce a valid configuration."""

    exit_code = 3

    def __init__(self, message: str, seed: int | None = None, diagnostics: dict | None = None):
        super().__init__(message)
        self.seed = seed
        self.diagnostics = diagnostics or {}


class SaturationError(GeneratorFailure):
    """Sequential inhibition ran out of attempts."""


class ConvergenceError(GeneratorFailure):
    """An iterative generator did not converge within its budget."""


class EventQueueOverflow(GeneratorFailure):
    """The event-driven simulation exceeded its queue capacity."""


class InferenceRefusal(PackingLabError):
    """An inference procedure refuses to produce a result."""

    exit_code = 4


class EnsembleAbortedError(InferenceRefusal):
    """Too many realizations of an ensemble failed."""
