"""Exception hierarchy shared by all modules."""


class SpherelabError(Exception):
    """Base class for library errors."""

    kind = "error"


class InvalidArgumentError(SpherelabError, ValueError):
    kind = "invalid-argument"


class DegenerateInputError(SpherelabError, ValueError):
    """Input for which the requested quantity is undefined (e.g. a zero row)."""

    kind = "degenerate-input"


class DomainError(SpherelabError, ValueError):
    kind = "domain-error"


class NumericalError(SpherelabError, ArithmeticError):
    kind = "numerical-error"


class TrainingError(SpherelabError, RuntimeError):
    """Raised when the toy optimizer diverges."""

    kind = "training-failure"

    def __init__(self, step: int, message: str = "loss became non-finite"):
        super().__init__(f"{message} at step {step}")
        self.step = step
