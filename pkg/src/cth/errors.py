"""Exception hierarchy shared across the package."""


class CthError(Exception):
    """Base class for every error raised by this package."""


class DomainError(CthError, ValueError):
    """An argument is outside the domain of the operation (unknown agent, illegal action...)."""


class ArityError(DomainError):
    """A game has the wrong number of agents for the requested operation."""


class TerminalStateError(DomainError):
    """A transition was requested from a terminal state."""


class ConfigError(CthError, ValueError):
    """Invalid planner or experiment configuration."""


class CapacityError(CthError, RuntimeError):
    """State enumeration exceeded the configured cap."""


class DegeneracyError(CthError, ArithmeticError):
    """Every hypothesis assigned zero likelihood to an observation."""


class ValidationError(CthError, ValueError):
    """A scenario file or observation trace failed validation."""
