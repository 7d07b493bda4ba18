"""Exception types shared across the package."""


class ContractError(ValueError):
    """Operands violate a precondition (shape, arity, algebra mismatch)."""


class DomainError(ValueError):
    """Argument outside the mathematical domain of an operation."""


class NonInvertibleMapError(ArithmeticError):
    """Linear part of a polynomial map is singular.

    In the event-map construction this signals a transversality failure
    (grazing or degenerate encounter).
    """


class NoEventError(RuntimeError):
    """No closest approach was found inside the search window."""


class ResourceLimitError(RuntimeError):
    """A configurable work budget (terms, nodes, steps) was exceeded."""


class DegenerateDistributionError(ValueError):
    """Moments describe a (near) deterministic variable: m2 <= m1**2."""


class StageError(RuntimeError):
    """Failure inside one stage of the collision-probability pipeline."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"[{stage}] {type(cause).__name__}: {cause}")
        self.stage = stage
        self.cause = cause
