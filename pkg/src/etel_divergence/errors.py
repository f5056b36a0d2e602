"""Exception hierarchy shared by the library and the CLI.

Every error derives from :class:`EtelError`. Input problems also derive from
``ValueError`` and numerical breakdowns from ``ArithmeticError`` so callers can
catch them with the builtin they already expect.
"""

from __future__ import annotations


class EtelError(Exception):
    """Root of all package errors."""


# ── Input / model errors ─────────────────────────────────────────


class ModelError(EtelError, ValueError):
    """A moment model or sample is malformed."""


class DimensionMismatch(ModelError):
    pass


class NonFiniteModelOutput(ModelError):
    pass


class InvalidDelta(ModelError):
    pass


class ConfigError(EtelError, ValueError):
    """An experiment config or CLI option is invalid."""


class EmptyValues(EtelError, ValueError):
    pass


# ── Divergence errors ────────────────────────────────────────────


class DivergenceError(EtelError, ValueError):
    """A divergence was requested outside its domain."""


class LengthMismatch(DivergenceError):
    pass


class NonpositiveWeight(DivergenceError):
    pass


class DomainError(DivergenceError):
    pass


class InvalidOrder(DivergenceError):
    pass


# ── Numerical failures ───────────────────────────────────────────


class NumericalError(EtelError, ArithmeticError):
    """An inner or outer solver could not produce a usable answer."""


class HullFailure(NumericalError):
    """Zero is outside (or on the boundary of) the convex hull of the moment rows."""


class SingularMoments(NumericalError):
    pass


class RankDeficient(NumericalError):
    pass


class SingularV(NumericalError):
    pass


class SingularGamma(NumericalError):
    pass


class OuterNoConvergence(NumericalError):
    pass


class AllStartsFailed(NumericalError):
    pass


class PoleEncountered(NumericalError):
    pass


class NullInfeasible(NumericalError):
    """The implied-probability tilt cannot be computed at the null value."""
