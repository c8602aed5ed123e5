"""Exception types raised on contract violations."""


class ContractError(ValueError):
    """An operation was called with inputs violating its preconditions."""


class ParameterDomainError(ContractError):
    """A schedule or regularizer parameter lies outside its valid domain."""


class DegenerateObjectError(ContractError):
    """An object covers no anchor center, so it has no anchor samples."""

    def __init__(self, message, object_index=None):
        super().__init__(message)
        self.object_index = object_index


class TrainingDivergenceError(RuntimeError):
    """A non-finite loss or gradient was produced during training."""

    def __init__(self, message, record=None):
        super().__init__(message)
        self.record = record
