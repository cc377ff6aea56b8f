"""Exception types shared across the package."""


class CapacityError(ValueError):
    """An input exceeds a hard enumeration or size limit."""


class StructuralError(ValueError):
    """A coalition structure, tree, or mask violates a structural contract."""


class EvaluationError(RuntimeError):
    """A worth-function evaluator failed.

    ``index`` is the position of the failing coalition within the batch
    that triggered the failure, when it could be determined.
    """

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class PartialResultError(RuntimeError):
    """The explainer failed mid-run.

    Carries the saliency accumulated so far (``partial``) and the coalition
    whose evaluation failed (``coalition``).
    """

    def __init__(self, message, partial, coalition):
        super().__init__(message)
        self.partial = partial
        self.coalition = coalition


class ProtocolError(RuntimeError):
    """A remote-evaluator frame was malformed or violated the session state."""
