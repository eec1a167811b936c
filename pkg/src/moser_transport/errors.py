"""Exception types shared across the package."""


class MoserTransportError(Exception):
    """Base class for all errors raised by this package."""


class ConfigurationError(MoserTransportError):
    """Invalid configuration: unknown kind, bad parameter, malformed config text."""

    def __init__(self, message, line=None, column=None):
        self.line = line
        self.column = column
        if line is not None:
            message = f"line {line}, column {column}: {message}"
        super().__init__(message)


class ExpressionSyntaxError(MoserTransportError):
    """Syntax error in an arithmetic expression, with byte offset into the source."""

    def __init__(self, message, offset):
        self.offset = offset
        super().__init__(f"at offset {offset}: {message}")


class EvaluationDomainError(MoserTransportError):
    """Expression evaluated outside its mathematical domain (log of <= 0, x/0, ...)."""


class NoCollarError(MoserTransportError):
    """Collar operation requested on a domain without boundary."""


class MassMismatchError(MoserTransportError):
    """Two densities that should carry equal mass do not, beyond tolerance."""


class SolverError(MoserTransportError):
    """Iterative solver stagnated or failed to reach the requested residual."""

    def __init__(self, message, residual_history=None):
        self.residual_history = list(residual_history or [])
        super().__init__(message)


class DegeneracyError(MoserTransportError):
    """A density dropped below the floor required by the current operation."""


class InfeasibilityError(MoserTransportError):
    """Root bracketing failed: the requested mass cannot be matched (mass deficiency)."""


class ResolutionError(MoserTransportError):
    """Tabulated data is too coarse for the requested operation (refine the grid)."""


class IntegrationError(MoserTransportError):
    """Flow trajectory left the domain by more than one grid cell."""
