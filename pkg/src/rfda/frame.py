"""Orthonormal frames along curves and frame coordinates of vector fields."""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import BaseMismatchError, FrameError
from .manifold import ManifoldPoint, TangentVector
from .tensor_hilbert import ManifoldCurve, TimeGrid, VectorField

__all__ = [
    "Frame",
    "CoordField",
    "canonical_tangent_basis",
    "frame_along_curve",
    "gram_schmidt",
    "to_coordinates",
    "from_coordinates",
    "to_coordinates_array",
    "from_coordinates_array",
]

ORTHO_TOL = 1e-9
BREAKDOWN_TOL = 1e-8


def _letters(n):
    return "xyz"[:n]


@dataclass(frozen=True, eq=False)
class Frame:
    """``basis[i, j]`` is the j-th orthonormal tangent vector at ``curve.values[i]``."""

    curve: ManifoldCurve
    basis: np.ndarray
    check: bool = True

    def __post_init__(self):
        m = self.curve.manifold
        b = np.array(self.basis, dtype=float)
        expected = (len(self.curve), m.intrinsic_dim) + m.point_shape
        if b.shape != expected:
            raise FrameError(f"frame basis has shape {b.shape}, expected {expected}")
        b.setflags(write=False)
        object.__setattr__(self, "basis", b)
        if self.check:
            err = np.abs(self.gram() - np.eye(m.intrinsic_dim)).max()
            if err > ORTHO_TOL:
                raise FrameError(f"frame is not orthonormal (max Gram deviation {err:.3g})")

    @property
    def manifold(self):
        return self.curve.manifold

    @property
    def dim(self):
        return self.manifold.intrinsic_dim

    @cached_property
    def lowered(self):
        """Metric-lowered basis: coordinates are plain dot products against it."""
        m = self.manifold
        p = self.curve.values[:, None]
        return np.asarray(m.lower(p, self.basis))

    def gram(self):
        """Pointwise Gram matrices, shape ``(M, d, d)``."""
        s = _letters(self.manifold.point_ndim)
        return np.einsum(f"ij{s},ik{s}->ijk", self.basis, self.lowered)

    def field(self, j) -> VectorField:
        return VectorField(self.curve, self.basis[:, j])

    def rotated(self, rotations) -> "Frame":
        """Frame ``A(t) = O_t E(t)`` for pointwise orthogonal ``rotations`` ``(M, d, d)``."""
        s = _letters(self.manifold.point_ndim)
        new = np.einsum(f"ijl,il{s}->ij{s}", rotations, self.basis)
        return Frame(self.curve, new)


@dataclass(frozen=True, eq=False)
class CoordField:
    """Frame coordinates of a vector field: ``values[i, j]`` at ``grid.times[i]``."""

    grid: TimeGrid
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.ndim != 2 or v.shape[0] != len(self.grid):
            raise ValueError(f"coordinate field must have shape (M, d), got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("coordinate field has non-finite entries")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def dim(self):
        return self.values.shape[1]

    def norm(self):
        return float(np.sqrt(self.grid.integrate(np.sum(self.values**2, axis=1))))


def gram_schmidt(manifold, p, vectors):
    """Modified Gram-Schmidt of ``vectors`` (``batch + (d,) + shape``) under the metric at ``p``.

    Each projection is repeated once ("twice is enough"); a residual norm
    below ``BREAKDOWN_TOL`` relative to the input norm raises :class:`FrameError`.
    """
    nd = manifold.point_ndim
    vecs = np.array(vectors, dtype=float)
    d = vecs.shape[-nd - 1]
    p = np.asarray(p, float)
    out = np.empty_like(vecs)
    for j in range(d):
        v = np.take(vecs, j, axis=-nd - 1)
        v0 = np.sqrt(np.maximum(manifold.inner(p, v, v), 0.0))
        for _ in range(2):
            for i in range(j):
                e = np.take(out, i, axis=-nd - 1)
                c = manifold.inner(p, v, e)
                v = v - c.reshape(c.shape + (1,) * nd) * e
        nv = np.sqrt(np.maximum(manifold.inner(p, v, v), 0.0))
        if np.any(nv <= BREAKDOWN_TOL * np.maximum(v0, 1e-300)):
            raise FrameError("Gram-Schmidt breakdown: basis is numerically dependent")
        idx = [slice(None)] * out.ndim
        idx[out.ndim - nd - 1] = j
        out[tuple(idx)] = v / nv.reshape(nv.shape + (1,) * nd)
    return out


def canonical_tangent_basis(p: ManifoldPoint):
    """Fixed, linearly independent tangent basis at ``p`` (not orthonormal for SPD)."""
    b = p.manifold.basis(p.repr)
    return [TangentVector(p, v) for v in b]


def frame_along_curve(curve: ManifoldCurve) -> Frame:
    """Orthonormal frame along ``curve``.

    Sphere: an initial Householder basis transported step by step along the
    curve, then re-orthonormalised, so neighbouring frames never flip.
    SPD: pointwise Gram-Schmidt of the canonical symmetric basis under the
    affine-invariant metric.  Euclidean: the standard basis.
    """
    m = curve.manifold
    pts = curve.values
    if m.kind == "sphere":
        basis = np.empty((len(curve), m.intrinsic_dim) + m.point_shape)
        basis[0] = gram_schmidt(m, pts[0], m.basis(pts[0]))
        for i in range(1, len(curve)):
            moved = m.transport(pts[i - 1], pts[i], basis[i - 1])
            basis[i] = gram_schmidt(m, pts[i], m.to_tangent(pts[i], moved))
    else:
        basis = gram_schmidt(m, pts, m.basis(pts))
    return Frame(curve, basis)


def to_coordinates_array(frame: Frame, values):
    """Coordinates of stacked tangent arrays ``(..., M) + shape`` -> ``(..., M, d)``."""
    s = _letters(frame.manifold.point_ndim)
    return np.einsum(f"...i{s},ij{s}->...ij", np.asarray(values, float), frame.lowered)


def from_coordinates_array(frame: Frame, coords):
    """Inverse of :func:`to_coordinates_array`."""
    s = _letters(frame.manifold.point_ndim)
    return np.einsum(f"...ij,ij{s}->...i{s}", np.asarray(coords, float), frame.basis)


def to_coordinates(frame: Frame, u: VectorField) -> CoordField:
    if not frame.curve.same_as(u.curve):
        raise BaseMismatchError("frame and field live along different curves")
    return CoordField(frame.curve.grid, to_coordinates_array(frame, u.values))


def from_coordinates(frame: Frame, z: CoordField) -> VectorField:
    if z.values.shape != (len(frame.curve), frame.dim):
        raise ValueError(f"coordinates have shape {z.values.shape}, expected {(len(frame.curve), frame.dim)}")
    return VectorField(frame.curve, from_coordinates_array(frame, z.values))
