"""Exception types raised across the package.

Every error carries enough context to name the offending coordinate or
input; the CLI maps the two families below to distinct exit codes.
"""


class PomdpError(Exception):
    """Base class for all package errors."""


class ValidationError(PomdpError, ValueError):
    """Input violates a structural invariant (exit code 1 in the CLI)."""


class NumericalError(PomdpError, ArithmeticError):
    """A numerical procedure failed to reach its target (exit code 2)."""


class RowNotStochastic(ValidationError):
    def __init__(self, where, index, total):
        self.where = where
        self.index = index
        self.total = total
        super().__init__(f"{where} row {index} sums to {total!r}, expected 1")


class NegativeEntry(ValidationError):
    def __init__(self, where, index, value):
        self.where = where
        self.index = index
        self.value = value
        super().__init__(f"{where} entry {index} is negative ({value!r})")


class MetricViolation(ValidationError):
    def __init__(self, triple, detail):
        self.triple = triple
        super().__init__(f"metric violation at {triple}: {detail}")


class ShapeMismatch(ValidationError):
    pass


class LengthMismatch(ValidationError):
    pass


class ParamOutOfRange(ValidationError):
    pass


class ZeroDistance(ValidationError):
    def __init__(self, pair):
        self.pair = pair
        super().__init__(f"metric has a zero off-diagonal entry at {pair}")


class SupportViolation(ValidationError):
    pass


class Infeasible(ValidationError):
    pass


class DegeneratePair(ValidationError):
    pass


class TooLarge(ValidationError):
    pass


class InvalidRegime(ValidationError):
    pass


class ZeroLikelihood(NumericalError):
    def __init__(self, observation, likelihood):
        self.observation = observation
        self.likelihood = likelihood
        super().__init__(
            f"observation {observation} has likelihood {likelihood!r} under the prior"
        )


class NumericalUnderflow(NumericalError):
    pass


class NotConverged(NumericalError):
    def __init__(self, max_iter, residual):
        self.max_iter = max_iter
        self.residual = residual
        super().__init__(f"not converged after {max_iter} iterations (residual {residual!r})")
