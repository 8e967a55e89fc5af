"""Intrinsic Riemannian functional principal component analysis.

Pipeline: Frechet mean curve -> orthonormal frame along it -> frame
coordinates of the log-process -> pooled covariance of the coordinates ->
weighted symmetric eigenproblem -> scores and truncated reconstructions.
All eigenfunctions are stored as frame coordinates of shape ``(K, M, d)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import AntipodalPointError, GeometryError
from .frame import CoordField, Frame, frame_along_curve, from_coordinates_array, to_coordinates_array
from .manifold import manifold_from_dict
from .mean import FrechetOptions, Sample, frechet_mean_curve
from .tensor_hilbert import ManifoldCurve, TimeGrid, VectorField, transport_values

__all__ = [
    "CovField",
    "EigenSystem",
    "RfpcaFit",
    "log_process",
    "log_coordinates",
    "sample_covariance",
    "eigensystem",
    "eigensystem_from_coords",
    "scores",
    "reconstruct",
    "fit_rfpca",
    "irmise",
    "armise",
    "fraction_of_variance",
    "select_k_fve",
]


@dataclass(frozen=True, eq=False)
class CovField:
    """Matrix-valued covariance ``blocks[s, t] = C(s, t)`` of shape ``(M, M, d, d)``."""

    grid: TimeGrid
    blocks: np.ndarray

    def __post_init__(self):
        b = np.array(self.blocks, dtype=float)
        m = len(self.grid)
        if b.ndim != 4 or b.shape[:2] != (m, m) or b.shape[2] != b.shape[3]:
            raise ValueError(f"covariance blocks must have shape (M, M, d, d), got {b.shape}")
        b.setflags(write=False)
        object.__setattr__(self, "blocks", b)

    @property
    def dim(self):
        return self.blocks.shape[2]

    def flat(self):
        """The ``(M d) x (M d)`` matrix indexed by ``time * d + coordinate``."""
        m, d = len(self.grid), self.dim
        return self.blocks.transpose(0, 2, 1, 3).reshape(m * d, m * d)


@dataclass(frozen=True, eq=False)
class EigenSystem:
    """Fitted eigenstructure along ``mean``; ``eigenfuncs[k]`` are frame coordinates ``(M, d)``."""

    mean: ManifoldCurve
    frame: Frame
    eigenvalues: np.ndarray
    eigenfuncs: np.ndarray
    n_used: int = 0

    def __post_init__(self):
        lam = np.array(self.eigenvalues, dtype=float).reshape(-1)
        phi = np.array(self.eigenfuncs, dtype=float)
        if phi.shape != (lam.size, len(self.mean), self.frame.dim):
            raise ValueError(f"eigenfunctions have shape {phi.shape}, expected {(lam.size, len(self.mean), self.frame.dim)}")
        if not self.frame.curve.same_as(self.mean):
            raise GeometryError("frame does not live along the mean curve")
        lam.setflags(write=False)
        phi.setflags(write=False)
        object.__setattr__(self, "eigenvalues", lam)
        object.__setattr__(self, "eigenfuncs", phi)

    @property
    def K(self):
        return self.eigenvalues.size

    @property
    def manifold(self):
        return self.mean.manifold

    @property
    def grid(self):
        return self.mean.grid

    def coord_field(self, k) -> CoordField:
        return CoordField(self.grid, self.eigenfuncs[k])

    def field(self, k) -> VectorField:
        return VectorField(self.mean, from_coordinates_array(self.frame, self.eigenfuncs[k]))

    def ambient_fields(self):
        """Eigenfields in the manifold's array representation, ``(K, M) + point_shape``."""
        return from_coordinates_array(self.frame, self.eigenfuncs)

    def gram(self):
        return np.einsum("kij,lij,i->kl", self.eigenfuncs, self.eigenfuncs, self.grid.weights)

    def truncate(self, k) -> "EigenSystem":
        return EigenSystem(self.mean, self.frame, self.eigenvalues[:k], self.eigenfuncs[:k], self.n_used)

    def with_frame(self, frame: Frame) -> "EigenSystem":
        """Same operator expressed in another frame along the same mean."""
        coords = to_coordinates_array(frame, self.ambient_fields())
        return EigenSystem(self.mean, frame, self.eigenvalues, coords, self.n_used)

    def to_dict(self):
        return {
            "manifold": self.manifold.to_dict(),
            "times": self.grid.times.tolist(),
            "weights": self.grid.weights.tolist(),
            "mean": self.mean.values.tolist(),
            "frame": self.frame.basis.tolist(),
            "eigenvalues": self.eigenvalues.tolist(),
            "eigenfunctions": self.eigenfuncs.tolist(),
            "n_used": int(self.n_used),
        }

    @classmethod
    def from_dict(cls, doc) -> "EigenSystem":
        m = manifold_from_dict(doc["manifold"])
        grid = TimeGrid(doc["times"], doc["weights"])
        mean = ManifoldCurve(m, grid, np.asarray(doc["mean"], dtype=float))
        frame = Frame(mean, np.asarray(doc["frame"], dtype=float))
        phi = np.asarray(doc["eigenfunctions"], dtype=float).reshape(-1, len(grid), m.intrinsic_dim)
        return cls(mean, frame, np.asarray(doc["eigenvalues"], dtype=float), phi, int(doc.get("n_used", 0)))


@dataclass(frozen=True, eq=False)
class RfpcaFit:
    """Everything produced by :func:`fit_rfpca`."""

    sample: Sample
    mean: ManifoldCurve
    frame: Frame
    coords: np.ndarray
    eigen: EigenSystem
    scores: np.ndarray


# --------------------------------------------------------------------------


def log_values(sample: Sample, mean: ManifoldCurve):
    """Stacked ``Log_{mean(t)} X_i(t)``, shape ``(n, M) + point_shape``."""
    if sample.manifold != mean.manifold or sample.grid != mean.grid:
        raise GeometryError("sample and mean curve do not share manifold and grid")
    m = sample.manifold
    try:
        out = m.log(mean.values[None], sample.values)
    except AntipodalPointError:
        for i in range(sample.n):
            try:
                m.log(mean.values, sample.values[i])
            except AntipodalPointError as exc:
                j = exc.index[0] if exc.index else 0
                t = float(sample.grid.times[j])
                raise AntipodalPointError(
                    f"log-process undefined for subject {sample.subjects[i]} at t={t:g}", t=t, index=(i, j)
                ) from exc
        raise
    return m.to_tangent(mean.values[None], out)


def log_process(sample: Sample, mean: ManifoldCurve):
    """The log-process as a list of :class:`VectorField` along ``mean``."""
    return [VectorField(mean, v) for v in log_values(sample, mean)]


def log_coordinates(sample: Sample, mean: ManifoldCurve, frame: Frame):
    """Frame coordinates of the log-process, shape ``(n, M, d)``."""
    return to_coordinates_array(frame, log_values(sample, mean))


def _coords_array(coords):
    if isinstance(coords, np.ndarray):
        z = np.asarray(coords, dtype=float)
        grid = None
    else:
        coords = list(coords)
        if not coords:
            raise ValueError("no coordinate fields given")
        grid = coords[0].grid
        for c in coords[1:]:
            if c.grid != grid or c.values.shape != coords[0].values.shape:
                raise ValueError("coordinate fields must share grid and dimension")
        z = np.stack([c.values for c in coords])
    if z.ndim != 3:
        raise ValueError(f"coordinates must have shape (n, M, d), got {z.shape}")
    return z, grid


def sample_covariance(coords, grid: TimeGrid = None) -> CovField:
    """``C(s, t) = n^-1 sum_i Z_i(s) Z_i(t)^T`` (no centring: the log-process has mean zero)."""
    z, g = _coords_array(coords)
    grid = grid or g
    if grid is None:
        raise ValueError("a time grid is required for array input")
    n = z.shape[0]
    if n < 2:
        raise ValueError("covariance estimation needs at least two curves")
    blocks = np.einsum("isa,itb->stab", z, z) / n
    return CovField(grid, blocks)


def _sign_and_order(vals, vecs):
    """Sign-fix each eigenvector (largest-magnitude entry positive) and sort descending."""
    idx = np.argmax(np.abs(vecs), axis=0)
    signs = np.sign(vecs[idx, np.arange(vecs.shape[1])])
    signs[signs == 0] = 1.0
    vecs = vecs * signs
    order = np.lexsort((-vecs[0], -vals))
    return vals[order], vecs[:, order]


def _solve_flat(flat, grid, d, k):
    m = len(grid)
    if not 1 <= k <= m * d:
        raise ValueError(f"number of components must lie in [1, {m * d}]")
    sw = np.sqrt(np.repeat(grid.weights, d))
    a = sw[:, None] * flat * sw[None, :]
    a = 0.5 * (a + a.T)
    vals, vecs = np.linalg.eigh(a)
    vals = np.maximum(vals, 0.0)
    vecs = vecs / sw[:, None]
    vals, vecs = _sign_and_order(vals[::-1], vecs[:, ::-1])
    vals, vecs = vals[:k], vecs[:, :k]
    return vals, vecs.T.reshape(k, m, d)


def eigensystem(c: CovField, mean: ManifoldCurve, frame: Frame, k: int, n_used: int = 0) -> EigenSystem:
    """Top-``k`` eigenpairs of the discretised covariance operator.

    Solves the symmetric problem for ``W^1/2 C W^1/2`` (``W`` the quadrature
    weights repeated over coordinates) and maps eigenvectors back by
    ``W^-1/2``, so eigenfunctions are orthonormal under the grid quadrature.
    """
    if c.grid != mean.grid:
        raise ValueError("covariance and mean curve are on different grids")
    vals, phi = _solve_flat(c.flat(), c.grid, c.dim, k)
    return EigenSystem(mean, frame, vals, phi, n_used)


def eigensystem_from_coords(z, mean: ManifoldCurve, frame: Frame, k=None) -> EigenSystem:
    """Same as ``eigensystem(sample_covariance(z), ...)`` without materialising the blocks."""
    z = np.asarray(z, dtype=float)
    n, m, d = z.shape
    if n < 2:
        raise ValueError("covariance estimation needs at least two curves")
    k = m * d if k is None else k
    flat = z.reshape(n, m * d)
    vals, phi = _solve_flat(flat.T @ flat / n, mean.grid, d, k)
    return EigenSystem(mean, frame, vals, phi, n)


def scores(coords, sys: EigenSystem):
    """Score matrix ``xi[i, k] = int Z_i(t)^T phi_k(t) dt``, shape ``(n, K)``."""
    z, _ = _coords_array(coords)
    if z.shape[1:] != sys.eigenfuncs.shape[1:]:
        raise ValueError("coordinates and eigenfunctions have different shapes")
    return np.einsum("imd,kmd,m->ik", z, sys.eigenfuncs, sys.grid.weights)


def reconstruct(sys: EigenSystem, score_row) -> ManifoldCurve:
    """``Exp_mean( sum_k xi_k phi_k )`` using the first ``len(score_row)`` components."""
    xi = np.asarray(score_row, dtype=float).reshape(-1)
    if not np.all(np.isfinite(xi)):
        raise ValueError("scores must be finite")
    k = xi.size
    if k > sys.K:
        raise ValueError(f"{k} scores given but the system has {sys.K} components")
    coords = np.einsum("k,kmd->md", xi, sys.eigenfuncs[:k])
    tangent = from_coordinates_array(sys.frame, coords)
    m = sys.manifold
    return ManifoldCurve(m, sys.grid, m.exp(sys.mean.values, tangent))


def fraction_of_variance(eigenvalues):
    lam = np.asarray(eigenvalues, dtype=float)
    total = lam.sum()
    if total <= 0:
        return np.zeros_like(lam)
    return np.cumsum(lam) / total


def select_k_fve(eigenvalues, threshold=0.95):
    """Smallest K whose cumulative fraction of variance reaches ``threshold``."""
    fve = fraction_of_variance(eigenvalues)
    hit = np.flatnonzero(fve >= threshold - 1e-12)
    return int(hit[0]) + 1 if hit.size else len(fve)


def fit_rfpca(sample: Sample, k=None, opts=FrechetOptions(), frame=None, mean=None) -> RfpcaFit:
    """Fit iRFPCA to a sample; ``k=None`` keeps every component."""
    mean = frechet_mean_curve(sample, opts) if mean is None else mean
    frame = frame_along_curve(mean) if frame is None else frame
    z = log_coordinates(sample, mean, frame)
    eig = eigensystem_from_coords(z, mean, frame, k)
    return RfpcaFit(sample, mean, frame, z, eig, scores(z, eig))


# --------------------------------------------------------------------------
# error metrics against a known truth


def _aligned_transport(est: EigenSystem, truth: EigenSystem, k: int):
    if est.manifold != truth.manifold or est.grid != truth.grid:
        raise GeometryError("estimate and truth do not share manifold and grid")
    if not (1 <= k <= est.K and k <= truth.K):
        raise ValueError("component index out of range")
    m = truth.manifold
    field_est = from_coordinates_array(est.frame, est.eigenfuncs[k - 1])
    moved = transport_values(m, est.mean.values, truth.mean.values, field_est)
    field_true = from_coordinates_array(truth.frame, truth.eigenfuncs[k - 1])
    w = truth.grid.weights
    ip = float(w @ m.inner(truth.mean.values, moved, field_true))
    sign = -1.0 if ip < 0 else 1.0
    return sign, moved, field_est, field_true


def irmise(est: EigenSystem, truth: EigenSystem, k: int) -> float:
    """Squared intrinsic error of the k-th eigenfield (1-based), after sign alignment.

    Returns ``|| Gamma phi_hat_k - phi_k ||^2`` along the true mean; the root
    of its replicate average is the iRMISE.
    """
    sign, moved, _, field_true = _aligned_transport(est, truth, k)
    m = truth.manifold
    diff = sign * moved - field_true
    return float(truth.grid.weights @ m.inner(truth.mean.values, diff, diff))


def armise(est: EigenSystem, truth: EigenSystem, k: int) -> float:
    """Squared ambient error ``int |phi_hat_k(t) - phi_k(t)|^2`` in the embedding space.

    The sign of ``phi_hat_k`` is the one chosen by :func:`irmise`.
    """
    if truth.manifold.kind not in ("sphere", "euclidean"):
        raise GeometryError("ambient error needs an isometric embedding (sphere or Euclidean)")
    sign, _, field_est, field_true = _aligned_transport(est, truth, k)
    diff = sign * field_est - field_true
    return float(truth.grid.weights @ np.sum(diff**2, axis=-1))
