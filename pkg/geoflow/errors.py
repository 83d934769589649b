"""Exception types raised by geoflow.

Every error derives from :class:`GeoflowError` and from the closest builtin, so
callers can catch either the package-specific type or plain ``ValueError`` /
``RuntimeError``.
"""
from __future__ import annotations


class GeoflowError(Exception):
    pass


class DegenerateGradient(GeoflowError, ValueError):
    """|∇φ| fell below the degeneracy floor inside the trusted band."""


class InterfaceTooCloseToBoundary(GeoflowError, ValueError):
    """The smeared-delta support reaches the outer layers of the box."""


class NotDistanceFunction(GeoflowError, ValueError):
    """An operation that needs a signed distance function got something else."""


class CflViolation(GeoflowError, ValueError):
    pass


class NoInterface(GeoflowError, ValueError):
    """φ has a uniform sign, so there is no zero level set to work with."""


class ShapeTouchesBoundary(GeoflowError, ValueError):
    pass


class NonMonotoneEnergy(GeoflowError, RuntimeError):
    def __init__(self, message: str, trajectory: object | None = None) -> None:
        super().__init__(message)
        self.trajectory = trajectory


class ConfigError(GeoflowError, ValueError):
    pass
