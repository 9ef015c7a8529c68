"""Exception hierarchy.

Every error raised by the library derives from :class:`TruncCoxError`. The
two intermediate classes split failures the way the command line reports
them: :class:`ValidationError` (bad input, exit code 2) and
:class:`NumericalError` (a fit or iteration that broke down, exit code 3).
"""

from __future__ import annotations


class TruncCoxError(Exception):
    """Base class for all library errors."""

    code = "error"

    def to_dict(self) -> dict:
        out = {"error": self.code, "message": str(self)}
        out.update({k: v for k, v in self.details().items() if v is not None})
        return out

    def details(self) -> dict:
        return {}


class ValidationError(TruncCoxError):
    code = "validation_error"


class NumericalError(TruncCoxError):
    code = "numerical_error"


# -- input validation ---------------------------------------------------------


class MissingColumn(ValidationError):
    code = "missing_column"

    def __init__(self, column: str):
        self.column = column
        super().__init__(f"required column {column!r} not found in header")

    def details(self):
        return {"column": self.column}


class NonNumericCell(ValidationError):
    code = "non_numeric_cell"

    def __init__(self, row: int, column: str, value: str):
        self.row, self.column, self.value = row, column, value
        super().__init__(f"row {row}, column {column!r}: cannot parse {value!r} as a number")

    def details(self):
        return {"row": self.row, "column": self.column}


class TruncationViolation(ValidationError):
    code = "truncation_violation"

    def __init__(self, row: int, reason: str = "left <= time <= right does not hold"):
        self.row = row
        super().__init__(f"row {row}: {reason}")

    def details(self):
        return {"row": self.row}


class EmptyDataset(ValidationError):
    code = "empty_dataset"

    def __init__(self, msg: str = "dataset has no records"):
        super().__init__(msg)


class NonIdentifiable(ValidationError):
    code = "non_identifiable"


class NoComparablePairs(ValidationError):
    code = "no_comparable_pairs"


class ScenarioError(ValidationError):
    code = "scenario_error"


# -- numerical failures -------------------------------------------------------


class SingularHessian(NumericalError):
    code = "singular_hessian"


class NoConvergence(NumericalError):
    code = "no_convergence"

    def __init__(self, iterations: int, msg: str = "", trace=None):
        self.iterations = iterations
        self.trace = trace
        super().__init__(msg or f"did not converge within {iterations} iterations")

    def details(self):
        return {"iterations": self.iterations}


class EmptyRiskSet(NumericalError):
    code = "empty_risk_set"

    def __init__(self, time: float):
        self.time = time
        super().__init__(f"no subject at risk at event time {time!r}")

    def details(self):
        return {"time": self.time}


class AlphaUnderflow(NumericalError):
    code = "alpha_underflow"

    def __init__(self, subject: int, value: float, iteration: int | None = None):
        self.subject, self.value, self.iteration = subject, value, iteration
        where = f" at EM iteration {iteration}" if iteration is not None else ""
        super().__init__(
            f"observation probability of subject {subject} is {value:.3e}{where}, below the floor"
        )

    def details(self):
        return {"subject": self.subject, "iteration": self.iteration}


class TooManyFailures(NumericalError):
    code = "too_many_failures"


class TruncationTooSevere(NumericalError):
    code = "truncation_too_severe"


class CalibrationFailed(NumericalError):
    code = "calibration_failed"
