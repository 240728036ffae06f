class OverlayPhaseError(Exception):
    """Base class for all package errors."""


class InvariantViolation(OverlayPhaseError, ValueError):
    """A value was constructed with violated invariants."""


class IngestError(OverlayPhaseError):
    """Input could not be read at all (per-line problems are diagnostics)."""


class ModelError(OverlayPhaseError, ValueError):
    """A model or estimator received parameters it cannot work with."""


class ReducibleChainError(ModelError):
    """The chain has more than one closed communicating class.

    ``classes`` lists the closed classes as tuples of state indices.
    """

    def __init__(self, classes, message=None):
        self.classes = [tuple(int(i) for i in c) for c in classes]
        if message is None:
            message = f"stationary vector is not unique; closed classes: {self.classes}"
        super().__init__(message)
