"""Exception hierarchy shared by every module of the package."""


class RegMdpError(Exception):
    """Base class for all package errors."""


class ShapeError(RegMdpError, ValueError):
    """Tensor dimensions are inconsistent."""


class StochasticityError(RegMdpError, ValueError):
    """A probability row is negative or does not sum to one."""


class RangeError(RegMdpError, ValueError):
    """A scalar parameter lies outside its admissible range."""


class ParseError(RegMdpError, ValueError):
    """Malformed serialized input."""


class DomainError(RegMdpError, ValueError):
    """Input outside the domain of a regularizer operation."""


class SupportError(RegMdpError, ValueError):
    """A divergence anchor is zero where positivity is required."""


class SolveError(RegMdpError, ArithmeticError):
    """A linear system could not be solved."""


class NonConvergence(RegMdpError, RuntimeError):
    """An iterative solver hit its iteration cap."""


class ConfigError(RegMdpError, ValueError):
    """Invalid scheme or experiment configuration."""


class UnsupportedRegularizer(RegMdpError, ValueError):
    """The requested operation has no closed form for this regularizer."""
