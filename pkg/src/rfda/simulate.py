"""Monte Carlo generators and experiment harness for the sphere / SPD designs.

Predictor curves are generated as ``X = Exp_mu( sum_k sqrt(lambda_k) xi_k phi_k )``
with ``phi_k = (A psi_k)^T E`` along a fixed mean, ``psi_k`` vector-valued
Fourier functions and ``A`` a random orthogonal matrix fixed by the master
seed.  Responses follow the functional linear model with slope
``Log_mu beta = sum_k c_k phi_k`` and noise scaled to a target signal-to-noise
ratio.

Randomness: every stream is a Philox generator keyed by
``SeedSequence(seed, spawn_key=...)``:

* ``(0,)`` -- the orthogonal mixing matrix ``A`` (shared by all replicates);
* ``(1, r, j)`` -- replicate ``r``, split ``j`` (0 train, 1 validation, 2 test).

Replicates therefore reproduce bit-for-bit in any order or thread count.
"""

from __future__ import annotations

import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .errors import GeometryError, RfdaError
from .frame import frame_along_curve, from_coordinates_array
from .manifold import SPD, Manifold, Sphere, manifold_from_dict
from .mean import FrechetOptions, Sample
from .rfpca import EigenSystem, armise, fit_rfpca, irmise
from .rflr import RegressionDataset, fit_pcr, predict_sample, select_tuning, slope_error
from .tensor_hilbert import ManifoldCurve, TimeGrid, VectorField

__all__ = [
    "SimConfig",
    "Truth",
    "SimData",
    "ReplicateResult",
    "true_mean_curve",
    "true_eigenfields",
    "fourier_basis",
    "gen_dataset",
    "run_replicate",
    "run_experiment",
    "aggregate",
    "table_configs",
    "reproduce_table",
    "CSV_COLUMNS",
]

UNIFORM_HALF_WIDTH = math.pi / 4
CSV_COLUMNS = ("table", "manifold", "n", "estimator", "metric", "k", "noise", "mean", "sd", "replicates", "seed")


@dataclass(frozen=True)
class SimConfig:
    manifold: Manifold = field(default_factory=lambda: Sphere(2))
    n_train: int = 50
    n_valid: int = None
    n_test: int = 1000
    M: int = 101
    n_components_truth: int = 20
    lambda_scale: float = 2.0
    lambda_exponent: float = 1.2
    score_dist: str = None
    noise_dist: str = "normal"
    noise_df: float = 2.1
    snr: float = 2.0
    slope_scale: float = 1.5
    slope_exponent: float = 2.0
    K_slope: int = 20
    replicates: int = 25
    seed: int = 20190101
    n_eval_components: int = 5
    tuning_grid: tuple = tuple(range(1, 11))
    spd_mean_floor: float = 1e-6

    def __post_init__(self):
        if isinstance(self.manifold, dict):
            object.__setattr__(self, "manifold", manifold_from_dict(self.manifold))
        if self.manifold.kind not in ("sphere", "spd"):
            raise ValueError("simulation supports the sphere and SPD manifolds")
        if self.n_valid is None:
            object.__setattr__(self, "n_valid", self.n_train)
        if self.score_dist is None:
            default = "uniform" if self.manifold.kind == "sphere" else "normal"
            object.__setattr__(self, "score_dist", default)
        object.__setattr__(self, "tuning_grid", tuple(int(k) for k in self.tuning_grid))
        if self.n_train < 2:
            raise ValueError("n_train must be at least 2")
        if self.M < 3:
            raise ValueError("M must be at least 3")
        if not self.snr > 0:
            raise ValueError("snr must be positive")
        if self.score_dist not in ("uniform", "normal"):
            raise ValueError(f"unknown score distribution {self.score_dist!r}")
        if self.noise_dist not in ("normal", "student_t"):
            raise ValueError(f"unknown noise distribution {self.noise_dist!r}")
        if self.noise_dist == "student_t" and not self.noise_df > 2:
            raise ValueError("Student-t noise needs df > 2 for a finite variance")
        if self.replicates < 1:
            raise ValueError("replicates must be at least 1")
        if self.K_slope > self.n_components_truth:
            raise ValueError("K_slope cannot exceed the number of generating components")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")

    # ------------------------------------------------------------------
    @property
    def eigenvalues(self):
        k = np.arange(1, self.n_components_truth + 1)
        return self.lambda_scale * k ** (-self.lambda_exponent)

    @property
    def score_variance(self):
        return UNIFORM_HALF_WIDTH**2 / 3 if self.score_dist == "uniform" else 1.0

    @property
    def slope_coefs(self):
        k = np.arange(1, self.K_slope + 1)
        return self.slope_scale * k ** (-self.slope_exponent)

    @property
    def signal_variance(self):
        c = self.slope_coefs
        return float(np.sum(c**2 * self.eigenvalues[: c.size]) * self.score_variance)

    def noise_variance_factor(self, dist=None):
        """Variance of the unscaled noise draw (1 for normal, df/(df-2) for Student t)."""
        dist = dist or self.noise_dist
        return 1.0 if dist == "normal" else self.noise_df / (self.noise_df - 2.0)

    @property
    def grid(self):
        return TimeGrid.uniform(self.M)

    def to_dict(self):
        d = asdict(self)
        d["manifold"] = self.manifold.to_dict()
        d["tuning_grid"] = list(self.tuning_grid)
        return d

    @classmethod
    def from_dict(cls, doc):
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown config fields: {sorted(unknown)}")
        return cls(**doc)

    @classmethod
    def from_json(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def digest(self):
        import hashlib

        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def _rng(seed, *key):
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=key)))


# --------------------------------------------------------------------------
# truth


def true_mean_curve(config: SimConfig) -> ManifoldCurve:
    t = config.grid.times
    m = config.manifold
    if m.kind == "sphere":
        if m.d != 2:
            raise ValueError("the sphere design is defined for S^2")
        theta = 2 * t**2 + 4 * t + 0.5
        phi = (t**3 + 3 * t**2 + t + 1) / 2
        pts = np.stack([np.sin(phi) * np.cos(theta), np.sin(phi) * np.sin(theta), np.cos(phi)], axis=1)
        return ManifoldCurve(m, config.grid, pts)
    if m.m != 3:
        raise ValueError("the SPD design is defined for 3 x 3 matrices")
    mu = np.empty((t.size, 3, 3))
    mu[:, 0, 0] = t**0.4
    mu[:, 1, 1] = t**0.5
    mu[:, 2, 2] = t**0.6
    mu[:, 0, 1] = mu[:, 1, 0] = 0.5 * t
    mu[:, 1, 2] = mu[:, 2, 1] = 0.5 * t
    mu[:, 0, 2] = mu[:, 2, 0] = 0.1 * t**1.5
    w = np.linalg.eigvalsh(mu)
    inside = w[:, 0] > 0
    if not np.all(inside[t > 0]):
        bad = t[(~inside) & (t > 0)][0]
        raise GeometryError(f"SPD mean is not positive definite at t={bad:g}")
    # mu(0) is the zero matrix; lift it to the eigenvalue floor
    return ManifoldCurve(m, config.grid, SPD(3, floor=config.spd_mean_floor).project(mu))


def fourier_basis(n_funcs, times):
    """``f_1 = 1``, ``f_{2l} = sqrt2 cos(2 pi l t)``, ``f_{2l+1} = sqrt2 sin(2 pi l t)``; shape ``(n, M)``."""
    out = np.empty((n_funcs, times.size))
    for j in range(1, n_funcs + 1):
        if j == 1:
            out[0] = 1.0
        elif j % 2 == 0:
            out[j - 1] = math.sqrt(2) * np.cos(2 * math.pi * (j // 2) * times)
        else:
            out[j - 1] = math.sqrt(2) * np.sin(2 * math.pi * (j // 2) * times)
    return out


def mixing_matrix(config: SimConfig):
    d = config.manifold.intrinsic_dim
    q, r = np.linalg.qr(_rng(config.seed, 0).standard_normal((d, d)))
    return q * np.sign(np.diag(r))


def _weighted_orthonormalize(phi, weights):
    """Gram-Schmidt (via QR) of coordinate functions ``(K, M, d)`` under the quadrature."""
    k, m, d = phi.shape
    sw = np.sqrt(np.repeat(weights, d))
    q, r = np.linalg.qr(phi.reshape(k, m * d).T * sw[:, None])
    q = q * np.sign(np.diag(r))
    return (q / sw[:, None]).T.reshape(k, m, d)


def true_eigenfields(config: SimConfig, mean: ManifoldCurve = None, frame=None) -> EigenSystem:
    """Population eigensystem: eigenvalues ``lambda_k Var(xi)`` and fields ``(A psi_k)^T E``.

    ``psi_{k,j} = f_{d(k-1)+j} / sqrt(d)``.  When the grid cannot resolve the
    highest frequencies (aliasing on coarse grids), the fields are
    re-orthonormalised in order under the grid quadrature; leading fields are
    untouched.
    """
    mean = true_mean_curve(config) if mean is None else mean
    frame = frame_along_curve(mean) if frame is None else frame
    d = config.manifold.intrinsic_dim
    kt = config.n_components_truth
    f = fourier_basis(d * kt, config.grid.times)
    psi = f.reshape(kt, d, -1).transpose(0, 2, 1) / math.sqrt(d)
    coords = np.einsum("ab,kmb->kma", mixing_matrix(config), psi)
    w = config.grid.weights
    gram = np.einsum("kmd,lmd,m->kl", coords, coords, w)
    if np.abs(gram - np.eye(kt)).max() > 1e-10:
        coords = _weighted_orthonormalize(coords, w)
    lam = config.eigenvalues * config.score_variance
    return EigenSystem(mean, frame, lam, coords, 0)


@dataclass(frozen=True, eq=False)
class Truth:
    mean: ManifoldCurve
    eigen: EigenSystem
    slope_coords: np.ndarray
    signal_variance: float

    @property
    def frame(self):
        return self.eigen.frame

    @property
    def slope_field(self) -> VectorField:
        return VectorField(self.mean, from_coordinates_array(self.frame, self.slope_coords))

    @classmethod
    def build(cls, config: SimConfig):
        mean = true_mean_curve(config)
        eig = true_eigenfields(config, mean)
        c = config.slope_coefs
        slope = np.einsum("k,kmd->md", c, eig.eigenfuncs[: c.size])
        return cls(mean, eig, slope, config.signal_variance)


@dataclass(frozen=True, eq=False)
class Split:
    """One generated split: curves, noiseless signal and the raw noise draws."""

    sample: Sample
    signal: np.ndarray
    z: np.ndarray
    chi2: np.ndarray

    def dataset(self, config: SimConfig, noise: str = None) -> RegressionDataset:
        noise = noise or config.noise_dist
        sd = math.sqrt(config.signal_variance / config.snr)
        if noise == "normal":
            eps = self.z
        else:
            t = self.z / np.sqrt(self.chi2 / config.noise_df)
            eps = t / math.sqrt(config.noise_variance_factor("student_t"))
        return RegressionDataset(self.sample, self.signal + sd * eps)


@dataclass(frozen=True, eq=False)
class SimData:
    config: SimConfig
    truth: Truth
    train: Split
    valid: Split
    test: Split

    def datasets(self, noise=None):
        return tuple(s.dataset(self.config, noise) for s in (self.train, self.valid, self.test))


def _draw_split(config: SimConfig, truth: Truth, n, rng):
    lam = config.eigenvalues
    kt = lam.size
    if config.score_dist == "uniform":
        xi = rng.uniform(-UNIFORM_HALF_WIDTH, UNIFORM_HALF_WIDTH, size=(n, kt))
    else:
        xi = rng.standard_normal((n, kt))
    z = rng.standard_normal(n)
    chi2 = rng.chisquare(config.noise_df, size=n)
    m = config.manifold
    coords = np.einsum("ik,kmd->imd", xi * np.sqrt(lam), truth.eigen.eigenfuncs)
    tangent = from_coordinates_array(truth.frame, coords)
    x = m.exp(truth.mean.values[None], tangent)
    sample = Sample(m, truth.mean.grid, x)
    logs = m.log(truth.mean.values[None], sample.values)
    slope = truth.slope_field.values
    w = truth.mean.grid.weights
    signal = np.einsum("m,im->i", w, m.inner(truth.mean.values[None], logs, slope[None]))
    return Split(sample, signal, z, chi2)


def gen_dataset(config: SimConfig, replicate: int = 0, truth: Truth = None) -> SimData:
    """Generate train / validation / test splits for one replicate."""
    truth = Truth.build(config) if truth is None else truth
    splits = [
        _draw_split(config, truth, n, _rng(config.seed, 1, replicate, j))
        for j, n in enumerate((config.n_train, config.n_valid, config.n_test))
    ]
    return SimData(config, truth, *splits)


# --------------------------------------------------------------------------
# replicates


@dataclass
class ReplicateResult:
    replicate: int
    mean_ise: float
    irmise_sq: list
    armise_sq: list = None
    slope_irmise_sq: dict = field(default_factory=dict)
    slope_isd: dict = field(default_factory=dict)
    pred_rmse: dict = field(default_factory=dict)
    chosen_k: dict = field(default_factory=dict)
    seconds: float = 0.0


def run_replicate(config: SimConfig, replicate: int, truth: Truth = None, regression=True, noises=None, opts=FrechetOptions()):
    """Fit iRFPCA (and iRFLR) on one generated replicate and score against the truth."""
    start = time.perf_counter()
    truth = Truth.build(config) if truth is None else truth
    data = gen_dataset(config, replicate, truth)
    fit = fit_rfpca(data.train.sample, None, opts)
    k_eval = min(config.n_eval_components, fit.eigen.K)
    ir = [irmise(fit.eigen, truth.eigen, k) for k in range(1, k_eval + 1)]
    ar = None
    if config.manifold.kind == "sphere":
        ar = [armise(fit.eigen, truth.eigen, k) for k in range(1, k_eval + 1)]
    res = ReplicateResult(replicate, fit.mean.ise(truth.mean), ir, ar)
    if regression:
        grid = [k for k in config.tuning_grid if k <= fit.eigen.K and fit.eigen.eigenvalues[k - 1] > 1e-12]
        for noise in noises or (config.noise_dist,):
            train, valid, _ = data.datasets(noise)
            k = select_tuning(train, "pcr", grid, valid, fit=fit)
            model = fit_pcr(train, k, fit=fit)
            isd, sq = slope_error(model, truth.mean, truth.slope_field)
            yhat = predict_sample(model, data.test.sample)
            res.slope_irmise_sq[noise] = sq
            res.slope_isd[noise] = isd
            res.pred_rmse[noise] = float(np.sqrt(np.mean((yhat - data.test.signal) ** 2)))
            res.chosen_k[noise] = int(k)
    res.seconds = time.perf_counter() - start
    return res


def run_experiment(config: SimConfig, regression=True, noises=None, threads=1, opts=FrechetOptions()):
    """All replicates of ``config``; a failing replicate aborts the run."""
    truth = Truth.build(config)

    def one(r):
        try:
            return run_replicate(config, r, truth, regression, noises, opts)
        except RfdaError as exc:
            raise RfdaError(f"replicate {r} failed: {exc}") from exc

    reps = range(config.replicates)
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            return list(pool.map(one, reps))
    return [one(r) for r in reps]


# --------------------------------------------------------------------------
# aggregation


def _sd(values):
    v = np.asarray(values, dtype=float)
    if v.size < 2:
        return 0.0
    mu = math.fsum(v) / v.size
    return math.sqrt(math.fsum((v - mu) ** 2) / (v.size - 1))


def _root_cell(squares):
    """``sqrt(mean of squared errors)`` with the replicate SD of the per-replicate roots."""
    sq = np.asarray(squares, dtype=float)
    return math.sqrt(math.fsum(sq) / sq.size), _sd(np.sqrt(sq))


def _plain_cell(values):
    v = np.asarray(values, dtype=float)
    return math.fsum(v) / v.size, _sd(v)


def aggregate(config: SimConfig, results, table="", estimator="iRFPCA"):
    """Summary rows (dicts keyed by :data:`CSV_COLUMNS`) for one configuration."""
    base = dict(
        table=table,
        manifold=config.manifold.kind,
        n=config.n_train,
        replicates=len(results),
        seed=config.seed,
    )
    rows = []

    def add(estimator_, metric, k, noise, cell):
        rows.append(dict(base, estimator=estimator_, metric=metric, k=k, noise=noise, mean=cell[0], sd=cell[1]))

    add(estimator, "mean_rmise", 0, "", _root_cell([r.mean_ise for r in results]))
    k_eval = min(len(r.irmise_sq) for r in results)
    for k in range(k_eval):
        add(estimator, "irmise", k + 1, "", _root_cell([r.irmise_sq[k] for r in results]))
        if results[0].armise_sq is not None:
            add(estimator, "armise", k + 1, "", _root_cell([r.armise_sq[k] for r in results]))
    for noise in results[0].pred_rmse:
        add("iRFLR", "slope_imse", 0, noise, _plain_cell([r.slope_irmise_sq[noise] for r in results]))
        add("iRFLR", "slope_isd", 0, noise, _plain_cell([r.slope_isd[noise] for r in results]))
        add("iRFLR", "pred_rmse", 0, noise, _plain_cell([r.pred_rmse[noise] for r in results]))
        add("iRFLR", "chosen_k", 0, noise, _plain_cell([r.chosen_k[noise] for r in results]))
    return rows


# --------------------------------------------------------------------------
# table reproduction


PROFILES = {
    "desk": dict(replicates=25, n_test=1000),
    "full": dict(replicates=100, n_test=5000),
}
SAMPLE_SIZES = (50, 150, 500)


def table_configs(table, profile="desk", seed=SimConfig.seed, include_sphere_500=False, replicates=None, sizes=SAMPLE_SIZES):
    """``(config, regression, noises, keep)`` tasks that make up one table."""
    if profile not in PROFILES:
        raise ValueError(f"unknown profile {profile!r}")
    prof = dict(PROFILES[profile])
    if replicates is not None:
        prof["replicates"] = replicates
    tasks = []
    if table == "table1":
        for n in sizes:
            cfg = SimConfig(Sphere(2), n_train=n, seed=seed, **prof)
            tasks.append((cfg, False, None, {"mean_rmise", "irmise", "armise"}, 2))
    elif table == "table2":
        for kind in ("sphere", "spd"):
            for n in sizes:
                if kind == "sphere" and n == 500 and profile == "desk" and not include_sphere_500:
                    continue
                man = Sphere(2) if kind == "sphere" else SPD(3)
                cfg = SimConfig(man, n_train=n, seed=seed, **prof)
                tasks.append((cfg, False, None, {"irmise"}, 5))
    elif table == "table3":
        for kind in ("sphere", "spd"):
            for n in sizes:
                man = Sphere(2) if kind == "sphere" else SPD(3)
                cfg = SimConfig(man, n_train=n, seed=seed, **prof)
                tasks.append((cfg, True, ("normal", "student_t"), {"slope_imse", "pred_rmse"}, 0))
    else:
        raise ValueError(f"unknown table {table!r}; expected table1, table2 or table3")
    return tasks


def reproduce_table(table, profile="desk", seed=SimConfig.seed, threads=1, include_sphere_500=False, replicates=None, sizes=SAMPLE_SIZES, progress=None):
    """Run every configuration of ``table`` and return the summary rows."""
    rows = []
    for cfg, regression, noises, keep, kmax in table_configs(table, profile, seed, include_sphere_500, replicates, sizes):
        results = run_experiment(cfg, regression=regression, noises=noises, threads=threads)
        for row in aggregate(cfg, results, table=table):
            if row["metric"] in keep and row["k"] <= kmax:
                rows.append(row)
        if progress is not None:
            progress(cfg, results)
    return rows
