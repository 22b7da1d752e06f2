"""Exception hierarchy.

Validation problems (bad inputs, broken assumptions) and numerical problems
(solver trouble) are kept apart so the command line can map them to
different exit codes.
"""


class RFRRError(Exception):
    pass


class ValidationError(RFRRError, ValueError):
    pass


class DegreeOutOfRange(ValidationError):
    pass


class AssumptionViolation(ValidationError):
    pass


class MemoryBudgetExceeded(ValidationError):
    pass


class NumericalError(RFRRError, ArithmeticError):
    pass


class AccuracyFailure(NumericalError):
    pass


class SolverFailure(NumericalError):
    def __init__(self, msg, residual=None):
        super().__init__(msg)
        self.residual = residual


class BranchFailure(SolverFailure):
    pass


class ConsistencyFailure(NumericalError):
    pass


class DerivativeFailure(NumericalError):
    pass


class FactorizationFailure(NumericalError):
    def __init__(self, msg, condition=None):
        super().__init__(msg)
        self.condition = condition
