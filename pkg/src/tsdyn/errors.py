"""Exception types shared across the toolkit."""


class DomainError(ValueError):
    """A query point is not on the scale / outside the mapped window."""


class SpecInputError(ValueError):
    """A JSON spec (window, system, forcing) is malformed."""


class RegressivityError(ArithmeticError):
    """E + mu(t) A(t) is singular (or 1 + mu*p = 0) at some scale point."""


class BranchError(ArithmeticError):
    """Real matrix logarithm undefined: an eigenvalue of E + mu*A lies on
    (-inf, 0].  Re-run with mode="complex" to take the principal branch
    (negative reals get imaginary part +pi)."""


class NotHyperbolicError(RuntimeError):
    """No exponential dichotomy could be certified on the segment."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class ConditionError(RuntimeError):
    """A required structural condition (segment hyperbolicity, dimension
    growth, transversality) does not hold for the requested operation."""


class CertificationError(RuntimeError):
    """A numeric certificate (residual, bound, identity check) failed."""
