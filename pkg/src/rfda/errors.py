"""Exception hierarchy shared by the geometry, estimation and I/O layers."""


class RfdaError(Exception):
    """Base class for every error raised by this package."""


class GeometryError(RfdaError, ValueError):
    """Invalid point, tangent vector, or failed matrix function."""


class AntipodalPointError(GeometryError):
    """Logarithm requested at (or numerically at) the cut locus."""

    def __init__(self, message, t=None, index=None):
        super().__init__(message)
        self.t = t
        self.index = index


class BaseMismatchError(GeometryError):
    """Tangent vectors or fields attached to different base points/curves."""


class FrameError(GeometryError):
    """Gram-Schmidt breakdown while building an orthonormal frame."""


class NonConvergenceError(RfdaError, RuntimeError):
    """Iterative solver exhausted its budget."""

    def __init__(self, message, t=None, grad_norm=None):
        super().__init__(message)
        self.t = t
        self.grad_norm = grad_norm


class DispersedDataError(RfdaError, ValueError):
    """Sphere data too spread out for a unique Frechet mean."""


class DegenerateEigenvalueError(RfdaError, ValueError):
    """Retained eigenvalue too small to invert."""


class SchemaError(RfdaError, ValueError):
    """Input file does not match the documented schema."""
