"""Randomised property checks shared by the property tests and the acceptance runner.

Each ``check_*`` takes a manifold kind and a seeded generator, builds a random
instance and returns the worst violation found; callers compare it with the
tolerance.
"""

import numpy as np

from rfda.frame import frame_along_curve, gram_schmidt, from_coordinates_array, to_coordinates_array
from rfda.manifold import SPD, Euclidean, Sphere
from rfda.mean import FrechetOptions, Sample, frechet_mean_curve, frechet_mean_point, _gradient
from rfda.manifold import ManifoldPoint
from rfda.rflr import RegressionDataset, fit_pcr, fit_tikhonov, predict_sample
from rfda.rfpca import EigenSystem, fit_rfpca, log_coordinates, reconstruct
from rfda.tensor_hilbert import (
    ManifoldCurve,
    TimeGrid,
    VectorField,
    apply_operator,
    diff_gamma,
    transport_eigensystem,
    transport_field,
    vf_inner,
)

KINDS = ("sphere", "spd")


def make_manifold(kind):
    return {"sphere": Sphere(2), "spd": SPD(3), "euclidean": Euclidean(2)}[kind]


def random_curve(m, grid, rng, spread=0.4, base=None):
    """Smooth random curve: ``Exp_base`` of a low-frequency tangent field."""
    p = m.random_point(rng, scale=0.5) if base is None else base
    b = gram_schmidt(m, p, m.basis(p))
    t = grid.times
    c = rng.standard_normal((3, b.shape[0]))
    coef = c[0] + np.outer(np.sin(np.pi * t), c[1]) + np.outer(np.cos(2 * np.pi * t), c[2]) * 0.5
    v = spread * np.tensordot(coef, b, axes=1)
    return ManifoldCurve(m, grid, m.exp(np.broadcast_to(p, v.shape), v))


def random_field(curve, rng, scale=1.0):
    m = curve.manifold
    return VectorField(curve, m.random_tangent(rng, curve.values, scale))


def nearby_curve(curve, rng, spread=0.3):
    m = curve.manifold
    v = random_field(curve, rng, spread).values
    return ManifoldCurve(m, curve.grid, m.exp(curve.values, v))


def random_sample(m, grid, rng, n=8, spread=0.3, mean=None):
    mean = random_curve(m, grid, rng) if mean is None else mean
    frame = frame_along_curve(mean)
    k = 4
    t = grid.times
    funcs = np.stack([np.ones_like(t), np.sin(np.pi * t), np.cos(np.pi * t), np.sin(2 * np.pi * t)])
    dirs = rng.standard_normal((k, m.intrinsic_dim))
    xi = rng.standard_normal((n, k)) * spread * np.array([1.0, 0.7, 0.5, 0.3])
    coords = np.einsum("ik,km,kd->imd", xi, funcs, dirs)
    tangent = from_coordinates_array(frame, coords)
    return Sample(m, grid, m.exp(mean.values[None], tangent)), mean


def random_rotations(rng, size, d):
    q, r = np.linalg.qr(rng.standard_normal((size, d, d)))
    return q * np.sign(np.einsum("...ii->...i", r))[..., None, :]


def random_eigensystem(curve, rng, k=3):
    """Rank-``k`` system with random quadrature-orthonormal eigenfields."""
    frame = frame_along_curve(curve)
    m_, d = len(curve.grid), curve.manifold.intrinsic_dim
    sw = np.sqrt(np.repeat(curve.grid.weights, d))
    q, _ = np.linalg.qr(rng.standard_normal((m_ * d, k)))
    phi = (q / sw[:, None]).T.reshape(k, m_, d)
    lam = np.sort(rng.uniform(0.1, 2.0, k))[::-1]
    return EigenSystem(curve, frame, lam, phi, 0)


# --------------------------------------------------------------------------
# geometry


def check_exp_log(kind, rng):
    m = make_manifold(kind)
    p = m.random_point(rng, scale=0.5)
    v = m.random_tangent(rng, p, scale=rng.uniform(0.05, 1.0))
    if kind == "sphere":
        nrm = m.norm(p, v)
        if nrm > 3.0:
            v = v * 3.0 / nrm
    q = m.exp(p, v)
    err1 = m.dist(m.exp(p, m.log(p, q)), q)
    err2 = m.norm(p, m.log(p, q) - v)
    return float(max(err1, err2))


# --------------------------------------------------------------------------
# transport identities


GRID = TimeGrid.uniform(11)


def _curves(kind, rng):
    m = make_manifold(kind)
    f = random_curve(m, GRID, rng)
    h = nearby_curve(f, rng)
    return m, f, h


def check_unitarity(kind, rng):
    _, f, h = _curves(kind, rng)
    u, v = random_field(f, rng), random_field(f, rng)
    gu, gv = transport_field(u, h), transport_field(v, h)
    return abs(vf_inner(gu, gv) - vf_inner(u, v))


def check_adjoint(kind, rng):
    """Gamma_{h,f} Gamma_{f,h} U = U and <<Gamma U, V>> = <<U, Gamma* V>>."""
    _, f, h = _curves(kind, rng)
    u = random_field(f, rng)
    v = random_field(h, rng)
    back = transport_field(transport_field(u, h), f)
    rt = float(np.sqrt(vf_inner(back - u, back - u)))
    adj = abs(vf_inner(transport_field(u, h), v) - vf_inner(u, transport_field(v, f)))
    return max(rt, adj)


def check_operator_compat(kind, rng):
    """Gamma(A U) = (Phi A)(Gamma U)."""
    _, f, h = _curves(kind, rng)
    sys = random_eigensystem(f, rng)
    u = random_field(f, rng)
    lhs = transport_field(apply_operator(sys, u), h)
    rhs = apply_operator(transport_eigensystem(sys, h), transport_field(u, h))
    d = lhs - rhs
    return float(np.sqrt(max(vf_inner(d, d), 0.0)))


def check_diff_symmetry(kind, rng):
    _, f, h = _curves(kind, rng)
    u, v = random_field(f, rng), random_field(h, rng)
    return abs(diff_gamma(u, v)[1] - diff_gamma(v, u)[1])


def check_inverse_transport(kind, rng):
    """Transport of the (rank-restricted) inverse equals the inverse of the transport."""
    _, f, h = _curves(kind, rng)
    sys = random_eigensystem(f, rng)
    inv = EigenSystem(sys.mean, sys.frame, 1.0 / sys.eigenvalues, sys.eigenfuncs, 0)
    u = random_field(h, rng)
    moved = transport_eigensystem(sys, h)
    inv_moved = EigenSystem(moved.mean, moved.frame, 1.0 / moved.eigenvalues, moved.eigenfuncs, 0)
    a = apply_operator(transport_eigensystem(inv, h), u)
    b = apply_operator(inv_moved, u)
    d = a - b
    return float(np.sqrt(max(vf_inner(d, d), 0.0)))


PROP2 = {
    "unitarity": (check_unitarity, 1e-9),
    "adjoint": (check_adjoint, 1e-9),
    "operator compatibility": (check_operator_compat, 1e-8),
    "diff symmetry": (check_diff_symmetry, 1e-9),
    "inverse transport": (check_inverse_transport, 1e-7),
}


# --------------------------------------------------------------------------
# truncation bound (sphere, curvature bounded below by 0)


def check_truncation_bound(rng):
    """Returns ``ise - residual^2`` (must be <= 0 up to rounding)."""
    m = Sphere(2)
    grid = TimeGrid.uniform(15)
    sample, _ = random_sample(m, grid, rng, n=10, spread=rng.uniform(0.1, 0.4))
    fit = fit_rfpca(sample)
    k = int(rng.integers(1, 5))
    i = int(rng.integers(sample.n))
    xhat = reconstruct(fit.eigen, fit.scores[i, :k])
    ise = float(grid.integrate(m.dist(sample.values[i], xhat.values) ** 2))
    z = fit.coords[i] - np.einsum("k,kmd->md", fit.scores[i, :k], fit.eigen.eigenfuncs[:k])
    resid = float(grid.integrate(np.sum(z**2, axis=-1)))
    return ise - resid


# --------------------------------------------------------------------------
# frame invariance


def _align(a, b, w):
    """Signs making the eigenfields of ``a`` agree with those of ``b`` (same frame)."""
    ip = np.einsum("kmd,kmd,m->k", a, b, w)
    return np.where(ip < 0, -1.0, 1.0)


def check_frame_invariance(kind, rng):
    """Worst (eigenvalue rel., score, prediction) discrepancy between two frames."""
    m = make_manifold(kind)
    grid = TimeGrid.uniform(13)
    sample, _ = random_sample(m, grid, rng, n=9)
    opts = FrechetOptions()
    mean = frechet_mean_curve(sample, opts)
    e = frame_along_curve(mean)
    a = e.rotated(random_rotations(rng, len(grid), m.intrinsic_dim))
    fe = fit_rfpca(sample, frame=e, mean=mean)
    fa = fit_rfpca(sample, frame=a, mean=mean)
    k = sample.n - 1
    lam_e, lam_a = fe.eigen.eigenvalues[:k], fa.eigen.eigenvalues[:k]
    ev = float(np.max(np.abs(lam_e - lam_a)) / lam_e[0])
    # compare eigenfields in the E frame and fix the sign ambiguity
    phi_a_in_e = to_coordinates_array(e, fa.eigen.ambient_fields()[:k])
    s = _align(phi_a_in_e, fe.eigen.eigenfuncs[:k], grid.weights)
    sc = float(np.max(np.abs(fe.scores[:, :k] - fa.scores[:, :k] * s)))
    test, _ = random_sample(m, grid, rng, n=4, mean=mean)
    y = rng.standard_normal(sample.n)
    worst = 0.0
    for fit_e, fit_a in ((fe, fa),):
        de, da = RegressionDataset(fit_e.sample, y), RegressionDataset(fit_a.sample, y)
        for mk in (lambda d, f: fit_pcr(d, 3, fit=f), lambda d, f: fit_tikhonov(d, 0.05, fit=f)):
            pe = predict_sample(mk(de, fit_e), test)
            pa = predict_sample(mk(da, fit_a), test)
            worst = max(worst, float(np.max(np.abs(pe - pa))))
    return ev, sc, worst


# --------------------------------------------------------------------------
# Frechet stationarity


def check_stationarity(kind, rng):
    m = make_manifold(kind)
    n = int(rng.integers(2, 15))
    center = m.random_point(rng)
    spread = 0.6 if kind == "sphere" else 1.0
    logs = np.stack([m.random_tangent(rng, center, spread) for _ in range(n)])
    pts = m.exp(np.broadcast_to(center, logs.shape), logs)
    w = rng.dirichlet(np.ones(n))
    mean = frechet_mean_point([ManifoldPoint(m, x) for x in pts], w)
    g = _gradient(m, mean.repr[None], pts[None], w)
    return float(m.norm(mean.repr, g[0]))
