"""Hyperspherical uniformity regularization and design-optimality experiments."""

from spherelab.errors import (
    DegenerateInputError,
    DomainError,
    InvalidArgumentError,
    NumericalError,
    SpherelabError,
    TrainingError,
)

__version__ = "0.1.0"

__all__ = [
    "DegenerateInputError",
    "DomainError",
    "InvalidArgumentError",
    "NumericalError",
    "SpherelabError",
    "TrainingError",
    "__version__",
]
