"""Exception types raised across the package."""


class ThinChannelError(Exception):
    """Base class for all package errors."""


class ParameterError(ThinChannelError, ValueError):
    """An argument is outside the admissible range."""


class EvaluationError(ThinChannelError, ArithmeticError):
    """A profile or coefficient evaluated to a non-finite number."""


class HypothesisError(ThinChannelError):
    """A profile violates a structural hypothesis an operation relies on."""


class ConditioningError(ThinChannelError):
    """The channel is too thin to assemble in double precision."""


class AssemblyError(ThinChannelError):
    """Forms could not be assembled (bad constraints, bad mesh)."""


class FactorizationError(ThinChannelError):
    """A matrix that must be positive definite failed to factorize."""


class EigenSolverError(ThinChannelError):
    """The iterative eigensolver broke down."""


class DegeneracyError(ThinChannelError):
    """A target eigenvalue sits in a cluster; eigenfunctions are not comparable."""


class ConfigError(ThinChannelError):
    """Malformed experiment configuration.

    Parameters
    ----------
    field : str
        Dotted path of the offending field, e.g. ``sweep.epsilon_grid[2]``.
    message : str
        What is wrong with it.
    line : int, optional
        1-based line number in the config text, when known.
    """

    def __init__(self, field, message, line=None):
        self.field = field
        self.line = line
        where = f"line {line}: " if line is not None else ""
        super().__init__(f"{where}{field}: {message}")
