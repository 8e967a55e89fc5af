r"""Geometry kernels for the unit sphere, SPD matrices and Euclidean space.

Every manifold class works on plain numpy arrays with arbitrary leading
batch dimensions, so a whole curve (or a whole sample of curves) can be
mapped in one call.  The thin :class:`ManifoldPoint` / :class:`TangentVector`
wrappers and the free functions (:func:`exp_map`, :func:`log_map`, ...) give
the checked single-point API.

SPD matrices carry the affine-invariant metric

.. math::

    \langle U, V \rangle_S = \mathrm{tr}(S^{-1} U S^{-1} V),

and all matrix functions are evaluated through a symmetric eigendecomposition.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import AntipodalPointError, BaseMismatchError, GeometryError

__all__ = [
    "Manifold",
    "Sphere",
    "SPD",
    "Euclidean",
    "ManifoldSpec",
    "ManifoldPoint",
    "TangentVector",
    "manifold_from_dict",
    "exp_map",
    "log_map",
    "metric_inner",
    "dist",
    "geodesic_point",
    "transport_point",
    "project_point",
    "sym_exp",
    "sym_log",
    "sym_sqrt",
    "sym_invsqrt",
    "sym_pow",
]

SPHERE_NORM_TOL = 1e-10
TANGENT_TOL = 1e-10
SPD_SYM_TOL = 1e-12
SPD_MIN_EIG = 1e-12
SPD_FLOOR = 1e-10
ANTIPODAL_COS = -1.0 + 1e-12


# --------------------------------------------------------------------------
# symmetric matrix functions


def _sym(a):
    return 0.5 * (a + np.swapaxes(a, -1, -2))


def _spectral(s, fn):
    w, q = np.linalg.eigh(_sym(s))
    return _sym((q * fn(w)[..., None, :]) @ np.swapaxes(q, -1, -2))


def sym_exp(s):
    """Matrix exponential of a (batch of) symmetric matrices."""
    return _spectral(s, np.exp)


def sym_log(s):
    """Matrix logarithm of a (batch of) SPD matrices."""
    w, q = np.linalg.eigh(_sym(s))
    if np.any(w <= 0):
        raise GeometryError("matrix logarithm of a non positive-definite matrix")
    return _sym((q * np.log(w)[..., None, :]) @ np.swapaxes(q, -1, -2))


def sym_sqrt(s):
    return _spectral(s, np.sqrt)


def sym_invsqrt(s):
    return _spectral(s, lambda w: 1.0 / np.sqrt(w))


def sym_pow(s, power):
    return _spectral(s, lambda w: w**power)


def _sqrt_and_invsqrt(s):
    w, q = np.linalg.eigh(_sym(s))
    if np.any(w <= 0):
        raise GeometryError("base point is not positive definite")
    qt = np.swapaxes(q, -1, -2)
    rw = np.sqrt(w)
    return _sym((q * rw[..., None, :]) @ qt), _sym((q / rw[..., None, :]) @ qt)


def _vdot(a, b, ndim):
    """Inner product over the trailing ``ndim`` axes."""
    axes = tuple(range(-ndim, 0))
    return np.sum(a * b, axis=axes)


# --------------------------------------------------------------------------
# manifolds


@dataclass(frozen=True)
class Manifold:
    """Base class; concrete geometries override the array kernels."""

    kind: str = field(init=False, default="", repr=False)
    point_shape: tuple = field(init=False, default=(), repr=False)
    intrinsic_dim: int = field(init=False, default=0, repr=False)
    curvature_lower_bound: float = field(init=False, default=0.0, repr=False)

    @property
    def point_ndim(self) -> int:
        return len(self.point_shape)

    @property
    def ambient_dim(self) -> int:
        return int(np.prod(self.point_shape))

    def to_dict(self) -> dict:
        raise NotImplementedError

    # kernels -------------------------------------------------------------
    def exp(self, p, v):
        raise NotImplementedError

    def log(self, p, q):
        raise NotImplementedError

    def lower(self, p, v):
        """Metric-lowered tangent vector, so that ``inner = sum(u * lower(v))``."""
        raise NotImplementedError

    def inner(self, p, u, v):
        return _vdot(u, self.lower(p, v), self.point_ndim)

    def norm(self, p, v):
        return np.sqrt(np.maximum(self.inner(p, v, v), 0.0))

    def dist(self, p, q):
        return self.norm(p, self.log(p, q))

    def geodesic(self, p, q, s):
        return self.exp(p, s * self.log(p, q))

    def transport(self, p, q, v):
        raise NotImplementedError

    def project(self, raw):
        raise NotImplementedError

    def to_tangent(self, p, v):
        """Nearest tangent vector at ``p`` (removes representation drift)."""
        return v

    def basis(self, p):
        """Canonical tangent basis at ``p``; shape ``batch + (d,) + point_shape``."""
        raise NotImplementedError

    def chordal_mean(self, x, weights, axis=0):
        return self.project(np.tensordot(weights, np.moveaxis(x, axis, 0), axes=1))

    # validation ----------------------------------------------------------
    def check_shape(self, a, what="array"):
        a = np.asarray(a, dtype=float)
        if a.shape[a.ndim - self.point_ndim :] != self.point_shape or a.ndim < self.point_ndim:
            raise GeometryError(
                f"{what} has shape {a.shape}, expected trailing shape {self.point_shape}"
            )
        return a

    def validate_point(self, x):
        return self.check_shape(x, "point")

    def validate_tangent(self, p, v):
        return self.check_shape(v, "tangent vector")

    # random generation for tests and demos --------------------------------
    def random_point(self, rng, size=(), scale=1.0):
        raise NotImplementedError

    def random_tangent(self, rng, p, scale=1.0):
        b = self.basis(p)
        c = rng.standard_normal(b.shape[: b.ndim - self.point_ndim])
        v = np.einsum("...k,...k" + "xyz"[: self.point_ndim] + "->..." + "xyz"[: self.point_ndim], c, b)
        return scale * v


@dataclass(frozen=True)
class Sphere(Manifold):
    """Unit sphere S^d embedded in R^(d+1); positive curvature bound 1."""

    d: int = 2

    def __post_init__(self):
        if self.d < 1:
            raise ValueError("sphere dimension must be positive")
        object.__setattr__(self, "kind", "sphere")
        object.__setattr__(self, "point_shape", (self.d + 1,))
        object.__setattr__(self, "intrinsic_dim", self.d)
        object.__setattr__(self, "curvature_lower_bound", 1.0)

    def to_dict(self):
        return {"kind": "sphere", "d": self.d}

    def exp(self, p, v):
        p = np.asarray(p, float)
        v = np.asarray(v, float)
        theta = np.linalg.norm(v, axis=-1, keepdims=True)
        out = np.cos(theta) * p + np.sinc(theta / np.pi) * v
        return out / np.linalg.norm(out, axis=-1, keepdims=True)

    def log(self, p, q):
        p = np.asarray(p, float)
        q = np.asarray(q, float)
        c = np.clip(np.sum(p * q, axis=-1, keepdims=True), -1.0, 1.0)
        if np.any(c < ANTIPODAL_COS):
            bad = np.argwhere(c[..., 0] < ANTIPODAL_COS)
            raise AntipodalPointError(
                "sphere logarithm undefined at antipodal point",
                index=tuple(bad[0]) if bad.size else None,
            )
        u = q - c * p
        s = np.linalg.norm(u, axis=-1, keepdims=True)
        theta = np.arctan2(s, c)
        return u / np.sinc(theta / np.pi)

    def lower(self, p, v):
        return np.asarray(v, float)

    def dist(self, p, q):
        p = np.asarray(p, float)
        q = np.asarray(q, float)
        c = np.sum(p * q, axis=-1)
        s = np.linalg.norm(q - c[..., None] * p, axis=-1)
        return np.arctan2(s, c)

    def transport(self, p, q, v):
        p = np.asarray(p, float)
        v = np.asarray(v, float)
        w = self.log(p, q)
        theta = np.linalg.norm(w, axis=-1, keepdims=True)
        wv = np.sum(w * v, axis=-1, keepdims=True)
        half = np.sinc(theta / (2.0 * np.pi))
        # (cos t - 1) / t^2 written without cancellation
        return v + wv * (-0.5 * half**2 * w - np.sinc(theta / np.pi) * p)

    def project(self, raw):
        raw = self.check_shape(raw)
        nrm = np.linalg.norm(raw, axis=-1, keepdims=True)
        if np.any(nrm == 0) or not np.all(np.isfinite(nrm)):
            raise GeometryError("cannot project a zero or non-finite vector onto the sphere")
        return raw / nrm

    def to_tangent(self, p, v):
        return v - np.sum(p * v, axis=-1, keepdims=True) * p

    def basis(self, p):
        p = np.asarray(p, float)
        n = self.d + 1
        sign = np.where(p[..., :1] >= 0, 1.0, -1.0)
        e1 = np.zeros_like(p)
        e1[..., 0] = 1.0
        u = p + sign * e1
        u = u / np.linalg.norm(u, axis=-1, keepdims=True)
        h = np.eye(n) - 2.0 * u[..., :, None] * u[..., None, :]
        # columns 2.. of the Householder reflector span the tangent space
        return np.swapaxes(h, -1, -2)[..., 1:, :]

    def validate_point(self, x):
        x = self.check_shape(x, "point")
        dev = np.abs(np.linalg.norm(x, axis=-1) - 1.0)
        if not np.all(dev <= SPHERE_NORM_TOL):
            raise GeometryError(f"point is off the unit sphere (|norm-1| = {dev.max():.3g})")
        return x

    def validate_tangent(self, p, v):
        v = self.check_shape(v, "tangent vector")
        ip = np.abs(np.sum(p * v, axis=-1))
        scale = np.maximum(1.0, np.linalg.norm(v, axis=-1))
        if not np.all(ip <= TANGENT_TOL * scale):
            raise GeometryError(f"vector is not tangent (|<p,v>| = {ip.max():.3g})")
        return v

    def random_point(self, rng, size=(), scale=1.0):
        size = (size,) if np.isscalar(size) else tuple(size)
        return self.project(rng.standard_normal(size + self.point_shape))


@dataclass(frozen=True)
class SPD(Manifold):
    """Symmetric positive-definite m x m matrices, affine-invariant metric."""

    m: int = 3
    floor: float = SPD_FLOOR

    def __post_init__(self):
        if self.m < 1:
            raise ValueError("matrix size must be positive")
        object.__setattr__(self, "kind", "spd")
        object.__setattr__(self, "point_shape", (self.m, self.m))
        object.__setattr__(self, "intrinsic_dim", self.m * (self.m + 1) // 2)
        object.__setattr__(self, "curvature_lower_bound", -0.5)

    def to_dict(self):
        return {"kind": "spd", "m": self.m}

    def exp(self, p, v):
        r, ri = _sqrt_and_invsqrt(p)
        return _sym(r @ sym_exp(ri @ _sym(v) @ ri) @ r)

    def log(self, p, q):
        r, ri = _sqrt_and_invsqrt(p)
        return _sym(r @ sym_log(ri @ _sym(q) @ ri) @ r)

    def whitened_log(self, p, q):
        """``log(p^-1/2 q p^-1/2)``: the logarithm in congruence-normalised form."""
        _, ri = _sqrt_and_invsqrt(p)
        return sym_log(ri @ _sym(q) @ ri)

    def lower(self, p, v):
        pinv = np.linalg.inv(_sym(p))
        return pinv @ np.asarray(v, float) @ pinv

    def inner(self, p, u, v):
        _, ri = _sqrt_and_invsqrt(p)
        return _vdot(ri @ u @ ri, ri @ v @ ri, 2)

    def dist(self, p, q):
        _, ri = _sqrt_and_invsqrt(p)
        w = np.linalg.eigvalsh(_sym(ri @ q @ ri))
        if np.any(w <= 0):
            raise GeometryError("distance to a non positive-definite matrix")
        return np.sqrt(np.sum(np.log(w) ** 2, axis=-1))

    def geodesic(self, p, q, s):
        r, ri = _sqrt_and_invsqrt(p)
        return _sym(r @ sym_pow(ri @ q @ ri, s) @ r)

    def transport(self, p, q, v):
        r, ri = _sqrt_and_invsqrt(p)
        e = r @ sym_sqrt(ri @ q @ ri) @ ri
        return _sym(e @ np.asarray(v, float) @ np.swapaxes(e, -1, -2))

    def project(self, raw, floor=None):
        raw = self.check_shape(raw)
        if not np.all(np.isfinite(raw)):
            raise GeometryError("non-finite SPD input")
        floor = self.floor if floor is None else floor
        w, q = np.linalg.eigh(_sym(raw))
        w = np.maximum(w, floor)
        return _sym((q * w[..., None, :]) @ np.swapaxes(q, -1, -2))

    def to_tangent(self, p, v):
        return _sym(v)

    def basis(self, p):
        p = np.asarray(p, float)
        eks = np.zeros((self.intrinsic_dim, self.m, self.m))
        for k in range(self.intrinsic_dim):
            i, j = spd_basis_index(k + 1)
            eks[k, i - 1, j - 1] = 1.0
            eks[k, j - 1, i - 1] = 1.0
        return np.broadcast_to(eks, p.shape[:-2] + eks.shape).copy()

    def chordal_mean(self, x, weights, axis=0):
        return self.project(np.tensordot(weights, np.moveaxis(x, axis, 0), axes=1))

    def validate_point(self, x):
        x = self.check_shape(x, "point")
        asym = np.abs(x - np.swapaxes(x, -1, -2))
        if asym.size and asym.max() > SPD_SYM_TOL * max(1.0, np.abs(x).max()):
            raise GeometryError("SPD point is not symmetric")
        x = _sym(x)
        w = np.linalg.eigvalsh(x)
        if not np.all(w > SPD_MIN_EIG):
            raise GeometryError(f"SPD point not positive definite (min eigenvalue {w.min():.3g})")
        return x

    def validate_tangent(self, p, v):
        v = self.check_shape(v, "tangent vector")
        asym = np.abs(v - np.swapaxes(v, -1, -2))
        if asym.size and asym.max() > SPD_SYM_TOL * max(1.0, np.abs(v).max()):
            raise GeometryError("SPD tangent vector is not symmetric")
        return _sym(v)

    def random_point(self, rng, size=(), scale=1.0):
        size = (size,) if np.isscalar(size) else tuple(size)
        a = rng.standard_normal(size + self.point_shape)
        return sym_exp(scale * _sym(a))

    def random_tangent(self, rng, p, scale=1.0):
        # whitened draw p^1/2 A p^1/2 so the spread is intrinsic, not ambient
        p = np.asarray(p, float)
        r = sym_sqrt(p)
        a = _sym(rng.standard_normal(p.shape))
        return scale * _sym(r @ a @ r)


@dataclass(frozen=True)
class Euclidean(Manifold):
    """Flat R^d; the reference geometry in which every operation is linear."""

    d: int = 1

    def __post_init__(self):
        if self.d < 1:
            raise ValueError("dimension must be positive")
        object.__setattr__(self, "kind", "euclidean")
        object.__setattr__(self, "point_shape", (self.d,))
        object.__setattr__(self, "intrinsic_dim", self.d)
        object.__setattr__(self, "curvature_lower_bound", 0.0)

    def to_dict(self):
        return {"kind": "euclidean", "d": self.d}

    def exp(self, p, v):
        return np.asarray(p, float) + np.asarray(v, float)

    def log(self, p, q):
        return np.asarray(q, float) - np.asarray(p, float)

    def lower(self, p, v):
        return np.asarray(v, float)

    def dist(self, p, q):
        return np.linalg.norm(np.asarray(q, float) - np.asarray(p, float), axis=-1)

    def transport(self, p, q, v):
        return np.array(v, dtype=float)

    def project(self, raw):
        raw = self.check_shape(raw)
        if not np.all(np.isfinite(raw)):
            raise GeometryError("non-finite Euclidean input")
        return raw.copy()

    def basis(self, p):
        p = np.asarray(p, float)
        return np.broadcast_to(np.eye(self.d), p.shape[:-1] + (self.d, self.d)).copy()

    def random_point(self, rng, size=(), scale=1.0):
        size = (size,) if np.isscalar(size) else tuple(size)
        return scale * rng.standard_normal(size + self.point_shape)


ManifoldSpec = Manifold


def spd_basis_index(k):
    """1-based (row, col) of the k-th canonical symmetric basis matrix.

    Entries are enumerated row by row through the lower triangle:
    (1,1), (2,1), (2,2), (3,1), ...
    """
    n1 = 1
    while n1 * (n1 + 1) // 2 < k:
        n1 += 1
    return n1, k - n1 * (n1 - 1) // 2


def manifold_from_dict(doc) -> Manifold:
    kind = str(doc["kind"]).lower()
    if kind == "sphere":
        return Sphere(int(doc.get("d", 2)))
    if kind == "spd":
        return SPD(int(doc.get("m", 3)))
    if kind == "euclidean":
        return Euclidean(int(doc.get("d", 1)))
    raise ValueError(f"unknown manifold kind {doc['kind']!r}")
    raise ValueError(f"unknown manifold kind {kind!r}")


# --------------------------------------------------------------------------
# checked single-point API


@dataclass(frozen=True, eq=False)
class ManifoldPoint:
    manifold: Manifold
    repr: np.ndarray

    def __post_init__(self):
        arr = self.manifold.validate_point(np.array(self.repr, dtype=float))
        if arr.shape != self.manifold.point_shape:
            raise GeometryError(f"expected a single point of shape {self.manifold.point_shape}")
        arr.setflags(write=False)
        object.__setattr__(self, "repr", arr)

    @property
    def spec(self):
        return self.manifold

    def same_as(self, other, atol=0.0):
        return self.manifold == other.manifold and np.allclose(self.repr, other.repr, rtol=0, atol=atol)


@dataclass(frozen=True, eq=False)
class TangentVector:
    base: ManifoldPoint
    repr: np.ndarray

    def __post_init__(self):
        arr = self.base.manifold.validate_tangent(self.base.repr, np.array(self.repr, dtype=float))
        arr = np.array(arr, dtype=float)
        arr.setflags(write=False)
        object.__setattr__(self, "repr", arr)

    @property
    def manifold(self):
        return self.base.manifold


def _require_base(p: ManifoldPoint, v: TangentVector):
    if v.base is not p and not v.base.same_as(p):
        raise BaseMismatchError("tangent vector is attached to a different base point")


def _require_same_manifold(p: ManifoldPoint, q: ManifoldPoint):
    if p.manifold != q.manifold:
        raise GeometryError(f"points live on different manifolds: {p.manifold} vs {q.manifold}")


def exp_map(p: ManifoldPoint, v: TangentVector) -> ManifoldPoint:
    _require_base(p, v)
    return ManifoldPoint(p.manifold, p.manifold.exp(p.repr, v.repr))


def log_map(p: ManifoldPoint, q: ManifoldPoint) -> TangentVector:
    _require_same_manifold(p, q)
    m = p.manifold
    return TangentVector(p, m.to_tangent(p.repr, m.log(p.repr, q.repr)))


def metric_inner(p: ManifoldPoint, u: TangentVector, v: TangentVector) -> float:
    _require_base(p, u)
    _require_base(p, v)
    return float(p.manifold.inner(p.repr, u.repr, v.repr))


def dist(p: ManifoldPoint, q: ManifoldPoint) -> float:
    _require_same_manifold(p, q)
    return float(p.manifold.dist(p.repr, q.repr))


def geodesic_point(p: ManifoldPoint, q: ManifoldPoint, s: float) -> ManifoldPoint:
    _require_same_manifold(p, q)
    if not 0 <= s <= 1:
        raise ValueError("geodesic parameter s must lie in [0, 1]")
    if s == 0:
        return p
    if s == 1:
        return q
    return ManifoldPoint(p.manifold, p.manifold.geodesic(p.repr, q.repr, s))


def transport_point(p: ManifoldPoint, q: ManifoldPoint, v: TangentVector) -> TangentVector:
    _require_base(p, v)
    _require_same_manifold(p, q)
    m = p.manifold
    return TangentVector(q, m.to_tangent(q.repr, m.transport(p.repr, q.repr, v.repr)))


def project_point(spec: Manifold, raw) -> ManifoldPoint:
    raw = np.asarray(raw, dtype=float)
    if raw.shape != spec.point_shape:
        raise GeometryError(f"raw input has shape {raw.shape}, expected {spec.point_shape}")
    return ManifoldPoint(spec, spec.project(raw))
