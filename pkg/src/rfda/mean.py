"""Pointwise Frechet (Karcher) means of manifold-valued samples."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import DispersedDataError, GeometryError, NonConvergenceError
from .manifold import Manifold, ManifoldPoint
from .tensor_hilbert import ManifoldCurve, TimeGrid

__all__ = ["FrechetOptions", "Sample", "frechet_mean_point", "frechet_mean_curve", "frechet_objective"]

MAX_HALVINGS = 30
# trial steps are capped at this multiple of ``step_size``; positive curvature
# flattens the objective so the best step on wide spreads exceeds one
MAX_GROWTH = 8.0
# relative rounding level of the objective (a few ulps of a weighted sum)
F_ROUNDING = 16 * np.finfo(float).eps
# rounding level of the objective on ill-conditioned data
F_SLACK = 1e-12


@dataclass(frozen=True)
class FrechetOptions:
    step_size: float = 1.0
    grad_tol: float = 1e-10
    max_iters: int = 200
    warm_start: bool = True
    check_dispersion: bool = False
    threads: int = 1

    def __post_init__(self):
        if not 0 < self.step_size < 2:
            raise ValueError("step_size must lie in (0, 2)")
        if self.grad_tol <= 0:
            raise ValueError("grad_tol must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")


@dataclass(frozen=True, eq=False)
class Sample:
    """``n`` curves sharing one manifold and grid; ``values`` has shape ``(n, M) + point_shape``."""

    manifold: Manifold
    grid: TimeGrid
    values: np.ndarray
    subjects: tuple = ()

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        shape = (len(self.grid),) + self.manifold.point_shape
        if v.ndim != 1 + len(shape) or v.shape[1:] != shape or v.shape[0] < 1:
            raise GeometryError(f"sample values have shape {v.shape}, expected (n,) + {shape}")
        v = self.manifold.validate_point(v)
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        subjects = tuple(str(s) for s in self.subjects) or tuple(str(i) for i in range(v.shape[0]))
        if len(subjects) != v.shape[0]:
            raise ValueError("one subject id per curve is required")
        object.__setattr__(self, "subjects", subjects)

    @classmethod
    def from_curves(cls, curves, subjects=()):
        curves = list(curves)
        if not curves:
            raise ValueError("a sample needs at least one curve")
        m, g = curves[0].manifold, curves[0].grid
        for c in curves[1:]:
            if c.manifold != m or c.grid != g:
                raise GeometryError("sample curves must share manifold and grid")
        return cls(m, g, np.stack([c.values for c in curves]), subjects)

    @property
    def n(self):
        return self.values.shape[0]

    @property
    def curves(self):
        return [ManifoldCurve(self.manifold, self.grid, v) for v in self.values]

    def subset(self, idx):
        idx = np.atleast_1d(idx)
        return Sample(self.manifold, self.grid, self.values[idx], tuple(self.subjects[i] for i in idx))


def frechet_objective(manifold, p, x, weights):
    """``sum_i w_i d^2(p, x_i)`` for points ``x`` of shape ``batch + (n,) + shape``."""
    nd = manifold.point_ndim
    pb = np.expand_dims(p, axis=-nd - 1)
    return np.sum(weights * manifold.dist(pb, x) ** 2, axis=-1)


def _gradient(manifold, p, x, weights):
    nd = manifold.point_ndim
    pb = np.expand_dims(p, axis=-nd - 1)
    logs = manifold.log(pb, x)
    w = weights.reshape(weights.shape + (1,) * nd)
    return manifold.to_tangent(p, np.sum(w * logs, axis=-nd - 1))


def _karcher(manifold, x, weights, init, opts):
    """Batched Riemannian gradient descent ``p <- Exp_p(s * sum_i w_i Log_p x_i)``.

    ``x`` has shape ``(B, n) + shape`` and ``init`` ``(B,) + shape``.  The first
    step is ``opts.step_size``; later trial steps are ``1 / h`` for the
    curvature ``h`` of the objective along the previous step, measured from the
    change of the transported gradient (exactly one on flat data).  A trial is
    halved until the objective drops by ``s |g|^2 / 2``.  Once that decrease
    is below the rounding level of the objective, which grows with the
    conditioning of SPD data, a step is accepted when it shrinks the gradient
    norm instead.  Returns the means and the final gradient norms; raises on
    non-convergence.
    """
    p = np.array(init, dtype=float)
    step = np.full(p.shape[0], float(opts.step_size))
    f = frechet_objective(manifold, p, x, weights)
    g = _gradient(manifold, p, x, weights)
    gnorm = manifold.norm(p, g)
    active = gnorm > opts.grad_tol
    stalled = np.zeros(p.shape[0], dtype=bool)
    vshape = (-1,) + (1,) * manifold.point_ndim
    for _ in range(opts.max_iters):
        if not active.any():
            break
        idx = np.flatnonzero(active)
        pa, ga, fa, sa, gna = p[idx], g[idx], f[idx], step[idx].copy(), gnorm[idx]
        xa = x[idx]
        tight, loose = F_ROUNDING * np.abs(fa) + 1e-300, F_SLACK * np.abs(fa) + 1e-300
        accepted = np.zeros(idx.size, dtype=bool)
        newp, newf, newg, newgn = pa.copy(), fa.copy(), ga.copy(), gna.copy()
        for _h in range(MAX_HALVINGS + 1):
            todo = np.flatnonzero(~accepted)
            if todo.size == 0:
                break
            cand = manifold.exp(pa[todo], sa[todo].reshape(vshape) * ga[todo])
            fc = frechet_objective(manifold, cand, xa[todo], weights)
            gc = _gradient(manifold, cand, xa[todo], weights)
            gnc = manifold.norm(cand, gc)
            predicted = 0.5 * sa[todo] * gna[todo] ** 2
            armijo = fc <= fa[todo] - predicted + tight[todo]
            blind = (predicted <= loose[todo]) & (gnc < gna[todo]) & (fc <= fa[todo] + loose[todo])
            ok = armijo | blind
            sel = todo[ok]
            newp[sel], newf[sel], newg[sel], newgn[sel] = cand[ok], fc[ok], gc[ok], gnc[ok]
            accepted[sel] = True
            sa[todo[~ok]] *= 0.5
        acc = np.flatnonzero(accepted)
        nxt = sa.copy()
        if acc.size:
            # curvature along the step: <g - Gamma^{-1} g_new, g> / (s |g|^2)
            moved = manifold.transport(pa[acc], newp[acc], ga[acc])
            drop = gna[acc] ** 2 - manifold.inner(newp[acc], newg[acc], moved)
            h = drop / (sa[acc] * gna[acc] ** 2)
            grow = np.minimum(1.5 * sa[acc], MAX_GROWTH * opts.step_size)
            with np.errstate(divide="ignore"):
                nxt[acc] = np.where(h > 0, np.minimum(1.0 / h, MAX_GROWTH * opts.step_size), grow)
        # rows where every halving failed stop iterating
        p[idx], f[idx], g[idx], gnorm[idx] = newp, newf, newg, newgn
        step[idx] = nxt
        stalled[idx[~accepted]] = True
        active = (gnorm > opts.grad_tol) & ~stalled
    if np.any(gnorm > opts.grad_tol):
        bad = int(np.argmax(gnorm))
        raise NonConvergenceError(
            f"Frechet mean did not reach gradient norm {opts.grad_tol:g} "
            f"(got {gnorm[bad]:.3g}) within {opts.max_iters} iterations",
            t=bad,
            grad_norm=float(gnorm[bad]),
        )
    return manifold.project(p) if manifold.kind == "sphere" else p, gnorm


def _check_dispersion(manifold, x):
    if manifold.kind != "sphere":
        return
    # a ball of radius < pi/2 around some data point must contain everything
    dmat = manifold.dist(x[:, None], x[None, :])
    if not np.any(dmat.max(axis=1) < np.pi / 2):
        raise DispersedDataError("sphere points are not contained in an open hemisphere ball")


def _normalized_weights(weights, n):
    if weights is None:
        return np.full(n, 1.0 / n)
    w = np.asarray(weights, dtype=float)
    if w.shape != (n,) or np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
        raise ValueError("weights must be nonnegative, one per point, and sum to 1")
    return w


def frechet_mean_point(points, weights=None, opts=FrechetOptions(), init=None) -> ManifoldPoint:
    """Weighted Frechet mean of a list of :class:`ManifoldPoint`."""
    points = list(points)
    if not points:
        raise ValueError("at least one point is required")
    m = points[0].manifold
    x = np.stack([p.repr for p in points])
    w = _normalized_weights(weights, len(points))
    if opts.check_dispersion:
        _check_dispersion(m, x)
    start = m.chordal_mean(x, w) if init is None else np.asarray(init.repr if isinstance(init, ManifoldPoint) else init)
    if len(points) == 1:
        return points[0]
    mean, _ = _karcher(m, x[None], w, start[None], opts)
    return ManifoldPoint(m, mean[0])


def frechet_mean_curve(sample: Sample, opts=FrechetOptions(), weights=None) -> ManifoldCurve:
    """Pointwise Frechet mean curve.

    With ``opts.warm_start`` each time point starts from the previous
    solution (the first from the chordal mean).  Otherwise every time point
    starts from its chordal mean and the per-time problems are solved as one
    batch (optionally split across ``opts.threads`` workers); the result does
    not depend on the number of workers.
    """
    m = sample.manifold
    n, big_m = sample.values.shape[:2]
    w = _normalized_weights(weights, n)
    if n == 1:
        return ManifoldCurve(m, sample.grid, sample.values[0])
    x = np.swapaxes(sample.values, 0, 1)  # (M, n) + shape
    if opts.check_dispersion:
        for i in range(big_m):
            try:
                _check_dispersion(m, x[i])
            except DispersedDataError as exc:
                raise DispersedDataError(f"{exc} at t={sample.grid.times[i]:g}") from exc

    def solve(block, start):
        try:
            return _karcher(m, x[block], w, start, opts)[0]
        except NonConvergenceError as exc:
            i = block[exc.t] if exc.t is not None else block[0]
            t = float(sample.grid.times[i])
            raise NonConvergenceError(f"{exc} at t={t:g}", t=t, grad_norm=exc.grad_norm) from exc

    if opts.warm_start:
        out = np.empty((big_m,) + m.point_shape)
        start = m.chordal_mean(x[0], w)
        for i in range(big_m):
            out[i] = solve(np.array([i]), start[None])[0]
            start = out[i]
    else:
        start = m.chordal_mean(x, w, axis=1)
        blocks = np.array_split(np.arange(big_m), max(1, min(opts.threads, big_m)))
        if len(blocks) == 1:
            out = solve(blocks[0], start)
        else:
            with ThreadPoolExecutor(len(blocks)) as pool:
                parts = list(pool.map(lambda b: solve(b, start[b]), blocks))
            out = np.concatenate(parts)
    return ManifoldCurve(m, sample.grid, out)
