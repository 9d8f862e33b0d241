"""Exception hierarchy.

``ValidationError`` covers bad user input (rule text, data files, model
files, configuration); the CLI maps it to exit code 1.
"""


class ValidationError(ValueError):
    pass


class RuleSyntaxError(ValidationError):
    def __init__(self, message: str, position: int):
        super().__init__(f"{message} (at position {position})")
        self.message = message
        self.position = position


class RuleSafetyError(ValidationError):
    pass


class ArityError(ValidationError):
    pass


class SignatureError(ValidationError):
    pass


class ModelFormatError(ValidationError):
    pass


class StaleReportError(ValidationError):
    """A channel report was computed for a different model."""


class BudgetExceededError(ValidationError):
    """Exact enumeration would exceed the configured budget; use sampling."""


class SearchFailure(RuntimeError):
    """Counterexample search hit its cap without finding a violation.

    This is never evidence of soundness.
    """


class TrainingDiverged(RuntimeError):
    pass
