"""Exception hierarchy shared by every module.

Errors fall in two families: ``InputError`` for malformed or inconsistent
user input, and ``NumericFailure`` for problems detected while computing
(singular solves, drift, overflow).  The command line maps them to distinct
exit codes.
"""


class AlgebroidError(Exception):
    """Base class for all package errors."""


class InputError(AlgebroidError, ValueError):
    """Malformed or inconsistent input."""


class NumericFailure(AlgebroidError, ArithmeticError):
    """A computation could not be completed reliably."""


# expression language

class ExprSyntaxError(InputError):
    def __init__(self, message, offset):
        super().__init__(f"{message} at byte offset {offset}")
        self.offset = offset


class EmptyExpressionError(ExprSyntaxError):
    def __init__(self):
        super().__init__("empty expression", 0)


class UnknownFunctionError(ExprSyntaxError):
    def __init__(self, name, offset):
        super().__init__(f"unknown function {name!r}", offset)
        self.name = name


class UnboundVariableError(InputError, KeyError):
    def __init__(self, name):
        super().__init__(f"unbound variable {name!r}")
        self.name = name

    def __str__(self):
        return self.args[0]


class DomainError(NumericFailure):
    def __init__(self, message, subexpression):
        subexpression = str(subexpression)
        super().__init__(f"{message} in subexpression {subexpression!r}")
        self.subexpression = subexpression


# geometry and dynamics

class DimensionError(InputError):
    pass


class CompatibilityError(InputError):
    """A point violates a fibre compatibility condition such as xdot = rho(x) y."""


class NotAdmissible(InputError):
    pass


class GridMismatch(InputError):
    pass


class SingularLagrangian(NumericFailure):
    pass


class SingularSaddle(NumericFailure):
    pass


class SingularReducedHessian(NumericFailure):
    pass


class ConstraintDrift(NumericFailure):
    pass


class NonFiniteState(NumericFailure):
    pass


class NoConvergence(NumericFailure):
    pass


class RankDeficientConstraint(NumericFailure):
    pass


class NotQuasiLie(InputError):
    pass
