"""Intrinsic functional data analysis for curves on Riemannian manifolds."""

from .errors import (
    AntipodalPointError,
    BaseMismatchError,
    DegenerateEigenvalueError,
    DispersedDataError,
    FrameError,
    GeometryError,
    NonConvergenceError,
    RfdaError,
    SchemaError,
)
from .frame import CoordField, Frame, frame_along_curve, from_coordinates, to_coordinates
from .manifold import SPD, Euclidean, Manifold, ManifoldPoint, Sphere, TangentVector
from .mean import FrechetOptions, Sample, frechet_mean_curve, frechet_mean_point
from .rflr import FlrModel, RegressionDataset, fit_pcr, fit_tikhonov, predict, predict_sample, select_tuning
from .rfpca import EigenSystem, RfpcaFit, fit_rfpca, irmise, armise, reconstruct, scores
from .tensor_hilbert import ManifoldCurve, TimeGrid, VectorField, hs_distance, transport_field, vf_inner, vf_norm

__version__ = "0.1.0"
