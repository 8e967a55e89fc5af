"""Square-integrable vector fields along sampled curves.

A :class:`ManifoldCurve` stores its points stacked as one array of shape
``(M,) + point_shape`` and a :class:`VectorField` stores tangent vectors the
same way.  Integrals over the time domain use the composite trapezoid rule
carried by :class:`TimeGrid`.

Transport between the tensor Hilbert spaces of two curves is done pointwise
along minimizing geodesics.  Covariance-type operators are only ever handled
in factored form (an :class:`~rfda.rfpca.EigenSystem`), which makes their
transport exact: transport the eigenfields, keep the eigenvalues.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import AntipodalPointError, BaseMismatchError, GeometryError
from .manifold import Manifold, ManifoldPoint, TangentVector

__all__ = [
    "TimeGrid",
    "ManifoldCurve",
    "VectorField",
    "vf_inner",
    "vf_norm",
    "transport_field",
    "diff_gamma",
    "transport_eigensystem",
    "hs_distance",
    "apply_operator",
]


def trapezoid_weights(times):
    times = np.asarray(times, dtype=float)
    dt = np.diff(times)
    w = np.zeros_like(times)
    w[:-1] += dt / 2
    w[1:] += dt / 2
    return w


@dataclass(frozen=True, eq=False)
class TimeGrid:
    times: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        t = np.array(self.times, dtype=float)
        w = np.array(self.weights, dtype=float)
        if t.ndim != 1 or t.size < 2 or t.shape != w.shape:
            raise ValueError("time grid needs at least two times and matching weights")
        if np.any(np.diff(t) <= 0):
            raise ValueError("grid times must be strictly increasing")
        if np.any(w <= 0):
            raise ValueError("quadrature weights must be positive")
        if abs(w.sum() - (t[-1] - t[0])) > 1e-12 * max(1.0, t[-1] - t[0]):
            raise ValueError("quadrature weights must sum to the domain length")
        t.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "weights", w)

    @classmethod
    def from_times(cls, times):
        return cls(times, trapezoid_weights(times))

    @classmethod
    def uniform(cls, m=101, start=0.0, stop=1.0):
        return cls.from_times(np.linspace(start, stop, m))

    def __len__(self):
        return self.times.size

    def __eq__(self, other):
        if not isinstance(other, TimeGrid):
            return NotImplemented
        return np.array_equal(self.times, other.times) and np.array_equal(self.weights, other.weights)

    __hash__ = None

    def integrate(self, values, axis=-1):
        """Quadrature integral of ``values`` sampled on this grid along ``axis``."""
        values = np.moveaxis(np.asarray(values, dtype=float), axis, -1)
        return values @ self.weights


@dataclass(frozen=True, eq=False)
class ManifoldCurve:
    """Curve on ``manifold`` sampled at ``grid.times``; ``values[i]`` is the i-th point."""

    manifold: Manifold
    grid: TimeGrid
    values: np.ndarray

    def __post_init__(self):
        v = self.manifold.validate_point(np.array(self.values, dtype=float))
        if v.shape != (len(self.grid),) + self.manifold.point_shape:
            raise GeometryError(
                f"curve values have shape {v.shape}, expected {(len(self.grid),) + self.manifold.point_shape}"
            )
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def points(self):
        return [ManifoldPoint(self.manifold, x) for x in self.values]

    def __len__(self):
        return len(self.grid)

    def same_as(self, other):
        return (
            self is other
            or (self.manifold == other.manifold and self.grid == other.grid and np.array_equal(self.values, other.values))
        )

    def distance_to(self, other) -> np.ndarray:
        """Pointwise geodesic distances to another curve on the same grid."""
        _check_compatible(self, other)
        return self.manifold.dist(self.values, other.values)

    def ise(self, other) -> float:
        """Integrated squared geodesic distance to ``other``."""
        return float(self.grid.integrate(self.distance_to(other) ** 2))


@dataclass(frozen=True, eq=False)
class VectorField:
    """Tangent field along ``curve``; ``values[i]`` lies in the tangent space at ``curve.values[i]``."""

    curve: ManifoldCurve
    values: np.ndarray

    def __post_init__(self):
        m = self.curve.manifold
        v = np.array(self.values, dtype=float)
        if v.shape != self.curve.values.shape:
            raise GeometryError(f"field values have shape {v.shape}, expected {self.curve.values.shape}")
        v = np.array(m.validate_tangent(self.curve.values, v), dtype=float)
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @classmethod
    def zeros(cls, curve):
        return cls(curve, np.zeros_like(curve.values))

    @property
    def manifold(self):
        return self.curve.manifold

    @property
    def grid(self):
        return self.curve.grid

    @property
    def vectors(self):
        return [TangentVector(p, v) for p, v in zip(self.curve.points, self.values)]

    def _like(self, values):
        return VectorField(self.curve, values)

    def _check(self, other):
        if not self.curve.same_as(other.curve):
            raise BaseMismatchError("vector fields live along different curves")

    def __add__(self, other):
        self._check(other)
        return self._like(self.values + other.values)

    def __sub__(self, other):
        self._check(other)
        return self._like(self.values - other.values)

    def __mul__(self, c):
        return self._like(float(c) * self.values)

    __rmul__ = __mul__

    def __neg__(self):
        return self._like(-self.values)

    def pointwise_norm(self):
        return self.manifold.norm(self.curve.values, self.values)


def _check_compatible(a: ManifoldCurve, b: ManifoldCurve):
    if a.manifold != b.manifold:
        raise GeometryError("curves live on different manifolds")
    if a.grid != b.grid:
        raise GeometryError("curves are sampled on different grids")


def vf_inner(u: VectorField, v: VectorField) -> float:
    u._check(v)
    m = u.manifold
    pointwise = m.inner(u.curve.values, u.values, v.values)
    return float(u.grid.integrate(pointwise))


def vf_norm(u: VectorField) -> float:
    return float(np.sqrt(max(vf_inner(u, u), 0.0)))


def transport_values(manifold, src, dst, values):
    """Pointwise transport of stacked tangent vectors ``values`` (``(..., M) + shape``)."""
    try:
        out = manifold.transport(src, dst, values)
    except AntipodalPointError as exc:
        raise AntipodalPointError("transport path hits the cut locus", index=exc.index) from exc
    return manifold.to_tangent(dst, out)


def transport_field(u: VectorField, target: ManifoldCurve) -> VectorField:
    """Parallel transport of ``u`` onto the tensor Hilbert space along ``target``."""
    _check_compatible(u.curve, target)
    if u.curve.same_as(target):
        return VectorField(target, u.values)
    try:
        vals = transport_values(u.manifold, u.curve.values, target.values, u.values)
    except AntipodalPointError as exc:
        i = exc.index[0] if exc.index else None
        t = None if i is None else float(target.grid.times[i])
        raise AntipodalPointError(f"transport fails at t={t}", t=t, index=exc.index) from exc
    return VectorField(target, vals)


def diff_gamma(u: VectorField, v: VectorField):
    """``u`` transported onto ``v``'s curve minus ``v``; returns ``(field, norm)``."""
    moved = transport_field(u, v.curve)
    out = moved - v
    return out, vf_norm(out)


# --------------------------------------------------------------------------
# factored operators


def apply_operator(sys, u: VectorField) -> VectorField:
    """Apply ``sum_k lambda_k phi_k (x) phi_k`` (the operator of ``sys``) to ``u``."""
    from .frame import from_coordinates_array, to_coordinates_array

    if not sys.mean.same_as(u.curve):
        raise BaseMismatchError("operator and field live along different curves")
    z = to_coordinates_array(sys.frame, u.values)
    w = sys.mean.grid.weights
    proj = np.einsum("kij,ij,i->k", sys.eigenfuncs, z, w)
    coeff = sys.eigenvalues * proj
    out = np.einsum("k,kij->ij", coeff, sys.eigenfuncs)
    return VectorField(u.curve, from_coordinates_array(sys.frame, out))


def transport_eigensystem(sys, target: ManifoldCurve, frame=None):
    """Move an eigensystem to the curve ``target``.

    Eigenvalues are kept and every eigenfield is transported pointwise.  The
    result is expressed in ``frame`` (default: the canonical frame along
    ``target``).
    """
    from .frame import frame_along_curve, from_coordinates_array, to_coordinates_array
    from .rfpca import EigenSystem

    _check_compatible(sys.mean, target)
    if frame is None:
        frame = sys.frame if sys.mean.same_as(target) else frame_along_curve(target)
    elif not frame.curve.same_as(target):
        raise BaseMismatchError("frame does not live along the target curve")
    if frame is sys.frame:
        return EigenSystem(target, frame, sys.eigenvalues.copy(), sys.eigenfuncs.copy(), sys.n_used)
    fields = from_coordinates_array(sys.frame, sys.eigenfuncs)
    if sys.mean.same_as(target):
        moved = fields
    else:
        try:
            moved = transport_values(target.manifold, sys.mean.values, target.values, fields)
        except AntipodalPointError as exc:
            i = exc.index[-1] if exc.index else None
            t = None if i is None else float(target.grid.times[i])
            raise AntipodalPointError(f"transport fails at t={t}", t=t) from exc
    coords = to_coordinates_array(frame, moved)
    return EigenSystem(
        mean=target,
        frame=frame,
        eigenvalues=sys.eigenvalues.copy(),
        eigenfuncs=coords,
        n_used=sys.n_used,
    )


def hs_distance(a, b) -> float:
    """Hilbert-Schmidt norm of (A transported onto B's curve) minus B."""
    moved = transport_eigensystem(a, b.mean, frame=b.frame)
    w = b.mean.grid.weights

    def gram(x, y):
        return np.einsum("kij,lij,i->kl", x, y, w)

    la, lb = moved.eigenvalues, b.eigenvalues
    fa, fb = moved.eigenfuncs, b.eigenfuncs
    sq = (
        la @ (gram(fa, fa) ** 2) @ la
        + lb @ (gram(fb, fb) ** 2) @ lb
        - 2.0 * la @ (gram(fa, fb) ** 2) @ lb
    )
    return float(np.sqrt(max(sq, 0.0)))
