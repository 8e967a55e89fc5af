"""Intrinsic Riemannian functional linear regression.

Model: ``Y = alpha + << Log_mu X, Log_mu beta >> + eps``.  Two estimators of
the slope field are provided, both built on the iRFPCA of the predictors:

* principal component regression with ``K`` components,
  ``b_k = a_k / lambda_k`` with ``a_k = << chi, phi_k >>``;
* Tikhonov regularisation, ``b_k = a_k / (lambda_k + rho)`` summed over every
  component of the discretised operator.

Here ``chi = n^-1 sum_i (Y_i - Ybar) Log_mu X_i`` is the cross-moment field.
Optional scalar covariates are fitted jointly with the scores by (penalised)
least squares.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateEigenvalueError
from .frame import CoordField, Frame, from_coordinates_array
from .manifold import manifold_from_dict
from .mean import FrechetOptions, Sample
from .rfpca import EigenSystem, RfpcaFit, fit_rfpca, log_coordinates, scores
from .tensor_hilbert import ManifoldCurve, TimeGrid, VectorField, transport_values

__all__ = [
    "RegressionDataset",
    "FlrModel",
    "cross_moment",
    "fit_pcr",
    "fit_tikhonov",
    "predict",
    "predict_sample",
    "select_tuning",
    "slope_error",
]

EIGEN_GUARD = 1e-12


@dataclass(frozen=True, eq=False)
class RegressionDataset:
    sample: Sample
    responses: np.ndarray
    covariates: np.ndarray = None

    def __post_init__(self):
        y = np.array(self.responses, dtype=float).reshape(-1)
        if y.size != self.sample.n:
            raise ValueError(f"{y.size} responses for {self.sample.n} curves")
        if not np.all(np.isfinite(y)):
            raise ValueError("responses must be finite")
        y.setflags(write=False)
        object.__setattr__(self, "responses", y)
        if self.covariates is not None:
            g = np.array(self.covariates, dtype=float)
            g = g.reshape(g.shape[0], -1) if g.ndim else g
            if g.shape[0] != y.size or not np.all(np.isfinite(g)):
                raise ValueError("covariates must be finite with one row per curve")
            if g.shape[1] == 0:
                g = None
            else:
                g.setflags(write=False)
            object.__setattr__(self, "covariates", g)

    @property
    def n(self):
        return self.sample.n


@dataclass(frozen=True, eq=False)
class FlrModel:
    """Fitted regression; ``coef_field`` holds frame coordinates of ``Log_mu beta``."""

    mean: ManifoldCurve
    frame: Frame
    intercept: float
    coef_field: CoordField
    method: str
    tuning: float
    eigen: EigenSystem = None
    covariate_coefs: np.ndarray = field(default=None)
    covariate_means: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.method not in ("pcr", "tikhonov"):
            raise ValueError(f"unknown method {self.method!r}")
        if self.method == "pcr" and self.tuning < 1:
            raise ValueError("PCR needs at least one component")
        if self.method == "tikhonov" and not self.tuning > 0:
            raise ValueError("Tikhonov parameter must be positive")

    def slope_tangent(self) -> VectorField:
        """``Log_mu beta`` as a vector field along the fitted mean."""
        return VectorField(self.mean, from_coordinates_array(self.frame, self.coef_field.values))

    def slope_curve(self) -> ManifoldCurve:
        m = self.mean.manifold
        return ManifoldCurve(m, self.mean.grid, m.exp(self.mean.values, self.slope_tangent().values))

    def to_dict(self):
        return {
            "method": self.method,
            "tuning": float(self.tuning),
            "intercept": float(self.intercept),
            "coef_field": self.coef_field.values.tolist(),
            "covariate_coefs": None if self.covariate_coefs is None else np.asarray(self.covariate_coefs).tolist(),
            "covariate_means": None if self.covariate_means is None else np.asarray(self.covariate_means).tolist(),
            "eigen": self.eigen.to_dict() if self.eigen is not None else {
                "manifold": self.mean.manifold.to_dict(),
                "times": self.mean.grid.times.tolist(),
                "weights": self.mean.grid.weights.tolist(),
                "mean": self.mean.values.tolist(),
                "frame": self.frame.basis.tolist(),
                "eigenvalues": [],
                "eigenfunctions": [],
            },
        }

    @classmethod
    def from_dict(cls, doc):
        eig_doc = doc["eigen"]
        if eig_doc["eigenvalues"]:
            eig = EigenSystem.from_dict(eig_doc)
            mean, frame = eig.mean, eig.frame
        else:
            m = manifold_from_dict(eig_doc["manifold"])
            mean = ManifoldCurve(m, TimeGrid(eig_doc["times"], eig_doc["weights"]), np.asarray(eig_doc["mean"]))
            frame = Frame(mean, np.asarray(eig_doc["frame"]))
            eig = None
        cc = doc.get("covariate_coefs")
        cm = doc.get("covariate_means")
        return cls(
            mean=mean,
            frame=frame,
            intercept=float(doc["intercept"]),
            coef_field=CoordField(mean.grid, np.asarray(doc["coef_field"], dtype=float)),
            method=doc["method"],
            tuning=float(doc["tuning"]),
            eigen=eig,
            covariate_coefs=None if cc is None else np.asarray(cc, dtype=float),
            covariate_means=None if cm is None else np.asarray(cm, dtype=float),
        )


# --------------------------------------------------------------------------


def cross_moment(dataset: RegressionDataset, mean: ManifoldCurve, frame: Frame = None) -> VectorField:
    """``chi(t) = n^-1 sum_i (Y_i - Ybar) Log_mu(t) X_i(t)``."""
    from .rfpca import log_values

    logs = log_values(dataset.sample, mean)
    yc = dataset.responses - dataset.responses.mean()
    chi = np.tensordot(yc, logs, axes=1) / dataset.n
    return VectorField(mean, mean.manifold.to_tangent(mean.values, chi))


def _fit_state(dataset, opts, fit):
    if fit is None:
        fit = fit_rfpca(dataset.sample, None, opts)
    elif fit.sample is not dataset.sample:
        raise ValueError("the supplied iRFPCA fit was computed on a different sample")
    return fit


def _solve(dataset, fit: RfpcaFit, kind, tuning):
    eig = fit.eigen
    y = dataset.responses
    ybar = float(y.mean())
    yc = y - ybar
    n = dataset.n
    xi = fit.scores
    if kind == "pcr":
        k = int(tuning)
        if k > eig.K:
            raise ValueError(f"K={k} exceeds the {eig.K} available components")
        lam = eig.eigenvalues[:k]
        if lam[-1] <= EIGEN_GUARD:
            raise DegenerateEigenvalueError(f"eigenvalue {k} is {lam[-1]:.3g}, below the division guard")
        cols = slice(0, k)
        shrink = 0.0
    else:
        rho = float(tuning)
        if not rho > 0:
            raise ValueError("Tikhonov parameter must be positive")
        lam = eig.eigenvalues
        cols = slice(0, eig.K)
        shrink = rho
    phi = eig.eigenfuncs[cols]
    g = dataset.covariates
    if g is None:
        a = xi[:, cols].T @ yc / n
        b = a / (lam + shrink)
        intercept, gamma, gmean = ybar, None, None
    else:
        x = xi[:, cols]
        xbar = x.mean(axis=0)
        gmean = g.mean(axis=0)
        xc, gc = x - xbar, g - gmean
        design = np.hstack([xc, gc])
        p = x.shape[1]
        gram = design.T @ design / n
        gram[:p, :p] += shrink * np.eye(p)
        coef = np.linalg.lstsq(gram, design.T @ yc / n, rcond=None)[0]
        b, gamma = coef[:p], coef[p:]
        intercept = ybar - float(xbar @ b)
    coef_field = CoordField(eig.grid, np.einsum("k,kmd->md", b, phi))
    return FlrModel(
        mean=fit.mean,
        frame=fit.frame,
        intercept=intercept,
        coef_field=coef_field,
        method=kind,
        tuning=float(tuning),
        eigen=eig,
        covariate_coefs=gamma,
        covariate_means=gmean,
    )


def fit_pcr(dataset: RegressionDataset, k: int, opts=FrechetOptions(), fit: RfpcaFit = None) -> FlrModel:
    """iRFPCA regression estimator with ``k`` components."""
    if k < 1:
        raise ValueError("PCR needs at least one component")
    return _solve(dataset, _fit_state(dataset, opts, fit), "pcr", k)


def fit_tikhonov(dataset: RegressionDataset, rho: float, opts=FrechetOptions(), fit: RfpcaFit = None) -> FlrModel:
    """Tikhonov estimator ``(C + rho I)^-1 chi`` in the full discretised eigenbasis."""
    if not rho > 0:
        raise ValueError("Tikhonov parameter must be positive")
    return _solve(dataset, _fit_state(dataset, opts, fit), "tikhonov", rho)


def _covariate_term(model, covariates):
    if model.covariate_coefs is None:
        return 0.0
    if covariates is None:
        raise ValueError("model was fitted with covariates; covariates are required")
    g = np.asarray(covariates, dtype=float)
    return (g - model.covariate_means) @ model.covariate_coefs


def predict_sample(model: FlrModel, sample: Sample, covariates=None) -> np.ndarray:
    """Predictions for every curve in ``sample``."""
    z = log_coordinates(sample, model.mean, model.frame)
    lin = np.einsum("imd,md,m->i", z, model.coef_field.values, model.mean.grid.weights)
    return model.intercept + lin + _covariate_term(model, covariates)


def predict(model: FlrModel, x: ManifoldCurve, covariates=None) -> float:
    """``intercept + << Log_mu X, Log_mu beta >>`` for a single curve."""
    s = Sample(x.manifold, x.grid, x.values[None])
    g = None if covariates is None else np.asarray(covariates, dtype=float).reshape(1, -1)
    return float(predict_sample(model, s, g)[0])


def _rmse(model, validation):
    yhat = predict_sample(model, validation.sample, validation.covariates)
    return float(np.sqrt(np.mean((yhat - validation.responses) ** 2)))


def select_tuning(
    dataset: RegressionDataset,
    method: str,
    grid,
    validation: RegressionDataset,
    opts=FrechetOptions(),
    fit: RfpcaFit = None,
    threads: int = 1,
    return_scores: bool = False,
):
    """Grid value minimising validation RMSE.

    Ties (within a relative 1e-9) go to the smaller ``K`` for PCR and the
    larger ``rho`` for Tikhonov.
    """
    values = list(grid)
    if not values:
        raise ValueError("tuning grid is empty")
    if validation.n == 0:
        raise ValueError("validation set is empty")
    if method not in ("pcr", "tikhonov"):
        raise ValueError(f"unknown method {method!r}")
    fit = _fit_state(dataset, opts, fit)
    z_valid = log_coordinates(validation.sample, fit.mean, fit.frame)

    def evaluate(v):
        model = _solve(dataset, fit, method, v)
        lin = np.einsum("imd,md,m->i", z_valid, model.coef_field.values, fit.mean.grid.weights)
        yhat = model.intercept + lin + _covariate_term(model, validation.covariates)
        return float(np.sqrt(np.mean((yhat - validation.responses) ** 2)))

    if threads > 1 and len(values) > 1:
        with ThreadPoolExecutor(threads) as pool:
            errs = list(pool.map(evaluate, values))
    else:
        errs = [evaluate(v) for v in values]
    errs = np.asarray(errs)
    best = errs.min()
    ties = [v for v, e in zip(values, errs) if e <= best * (1 + 1e-9) + 1e-15]
    chosen = min(ties) if method == "pcr" else max(ties)
    return (chosen, errs) if return_scores else chosen


def slope_error(model: FlrModel, truth_mean: ManifoldCurve, truth_field: VectorField):
    """``(isd, irmise_sq)`` of the fitted slope against the truth.

    ``isd`` integrates ``d^2(beta_hat(t), beta(t))``; ``irmise_sq`` is the
    squared norm of ``Log beta_hat`` transported onto the true mean minus
    ``Log beta``.
    """
    m = truth_mean.manifold
    if model.mean.grid != truth_mean.grid or model.mean.manifold != m:
        raise ValueError("model and truth do not share manifold and grid")
    if not truth_field.curve.same_as(truth_mean):
        raise ValueError("truth field must live along the true mean")
    est_tangent = model.slope_tangent().values
    beta_hat = m.exp(model.mean.values, est_tangent)
    beta = m.exp(truth_mean.values, truth_field.values)
    w = truth_mean.grid.weights
    isd = float(w @ m.dist(beta_hat, beta) ** 2)
    moved = transport_values(m, model.mean.values, truth_mean.values, est_tangent)
    diff = moved - truth_field.values
    return isd, float(w @ m.inner(truth_mean.values, diff, diff))
