"""Exception hierarchy shared by all modules.

The CLI maps these onto exit codes: ``ParameterError`` and ``DomainError``
are invalid input (2), ``ResourceLimitError`` is a resource limit (3), and
``ModelConsistencyError`` is a failed internal check (1).
"""


class ModelError(Exception):
    """Base class for every error raised by this package."""


class ParameterError(ModelError, ValueError):
    """A parameter set violates its documented invariants."""

    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field


class DomainError(ModelError, ValueError):
    """An argument lies outside the domain of an operation."""


class TopologyError(ModelError):
    """Topology construction could not satisfy its invariants."""

    def __init__(self, message, cycle=None):
        super().__init__(message)
        self.cycle = cycle


class ModelConsistencyError(ModelError, RuntimeError):
    """A state reached a configuration the constructed operator does not cover.

    This signals a construction bug rather than bad user input.
    """

    def __init__(self, message, k=None, record=None):
        super().__init__(message)
        self.k = k
        self.record = record


class ResourceLimitError(ModelError, RuntimeError):
    """A computation would exceed a configured size limit."""

    def __init__(self, message, required=None, limit=None):
        super().__init__(message)
        self.required = required
        self.limit = limit
