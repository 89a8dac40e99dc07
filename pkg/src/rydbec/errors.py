"""Exception types shared by all modules.

``DomainError`` marks invalid input (CLI exit code 2); ``NumericalError``
marks a computation that did not converge (CLI exit code 1).
"""


class DomainError(ValueError):
    pass


class NumericalError(RuntimeError):
    def __init__(self, message: str, **diagnostics):
        super().__init__(message)
        self.diagnostics = diagnostics
