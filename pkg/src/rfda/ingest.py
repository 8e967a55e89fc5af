"""SPD curves from multivariate time series, and sample / response file I/O.

File formats (UTF-8, header row required):

* sphere sample CSV: ``subject, t, x1, ..., x{d+1}``
* SPD sample CSV: ``subject, t, s11, s12, ..., smm`` (row-major ``m*m`` entries)
* Euclidean sample CSV: ``subject, t, x1, ..., xd``
* responses CSV: ``subject, y, [covariate columns ...]``
* time-series CSV (one file per subject): one row per time point, one column
  per channel; the subject id is the file stem.

Sample JSON documents hold ``manifold``, ``times``, ``subjects`` and
``values`` (nested lists of shape ``(n, M) + point_shape``).  Floats are written
with 17 significant digits so that save / load round trips are bit-exact.
"""

from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import GeometryError, SchemaError
from .manifold import SPD, Manifold, manifold_from_dict
from .mean import Sample
from .tensor_hilbert import ManifoldCurve, TimeGrid

__all__ = [
    "MultiSeries",
    "DegenerateWindowWarning",
    "sliding_window_covariances",
    "sliding_covariance",
    "load_series",
    "load_series_dir",
    "load_sample",
    "save_sample",
    "load_responses",
    "save_responses",
    "fmt",
]


class DegenerateWindowWarning(UserWarning):
    """A window covariance was singular and had to be clamped."""


def fmt(x) -> str:
    return format(float(x), ".17g")


@dataclass(frozen=True, eq=False)
class MultiSeries:
    """One subject's ``m x T`` multichannel series (channels by time)."""

    subject: str
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.ndim != 2 or v.shape[0] < 1 or v.shape[1] < 1:
            raise ValueError("series values must be an m x T matrix")
        if not np.all(np.isfinite(v)):
            raise ValueError(f"series {self.subject!r} contains non-finite values")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def m(self):
        return self.values.shape[0]

    @property
    def T(self):
        return self.values.shape[1]


def _as_series(series):
    return series if isinstance(series, MultiSeries) else MultiSeries("0", series)


def sliding_window_covariances(series, h: int) -> np.ndarray:
    """Raw window covariances ``(T - 2h, m, m)``, each normalised by ``2h + 1``.

    The window for centre ``t`` (1-based, ``h+1 <= t <= T-h``) covers
    ``t-h .. t+h`` and is centred at its own mean.
    """
    s = _as_series(series)
    h = int(h)
    if h < 1:
        raise ValueError("window half-width h must be at least 1")
    if s.T < 2 * h + 1:
        raise ValueError(f"window too large: T={s.T} needs to be at least 2h+1={2 * h + 1}")
    win = sliding_window_view(s.values, 2 * h + 1, axis=1)  # (m, T-2h, 2h+1)
    cen = win - win.mean(axis=2, keepdims=True)
    cov = np.einsum("atj,btj->tab", cen, cen) / (2 * h + 1)
    return (cov + np.swapaxes(cov, 1, 2)) / 2


def sliding_covariance(series, h: int = None, floor: float = None) -> ManifoldCurve:
    """SPD curve of sliding-window covariances on the grid ``(j-1)/(T-2h-1)``.

    ``h`` defaults to ``2m``.  Windows whose covariance has an eigenvalue
    below ``floor`` (default: the SPD eigenvalue floor) are clamped and a
    :class:`DegenerateWindowWarning` is issued.
    """
    s = _as_series(series)
    h = 2 * s.m if h is None else int(h)
    if h < s.m:
        raise ValueError(f"h={h} is smaller than the number of channels m={s.m}; windows would be singular")
    if s.T < 2 * h + 2:
        raise ValueError(f"window too large: T={s.T} needs to be at least 2h+2={2 * h + 2} for a curve")
    cov = sliding_window_covariances(s, h)
    spd = SPD(s.m) if floor is None else SPD(s.m, floor=floor)
    low = np.linalg.eigvalsh(cov)[:, 0]
    bad = np.flatnonzero(low < spd.floor)
    if bad.size:
        warnings.warn(
            f"subject {s.subject}: {bad.size} singular window(s) clamped to eigenvalue {spd.floor:g}",
            DegenerateWindowWarning,
            stacklevel=2,
        )
    n = cov.shape[0]
    grid = TimeGrid.from_times(np.arange(n) / (n - 1))
    return ManifoldCurve(spd, grid, spd.project(cov))


# --------------------------------------------------------------------------
# CSV helpers


def _read_csv(path):
    path = Path(path)
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except UnicodeDecodeError as exc:
        raise SchemaError(f"{path}: not valid UTF-8") from exc
    rows = [r for r in rows if r and any(c.strip() for c in r)]
    if not rows:
        raise SchemaError(f"{path}: empty file (a header row is required)")
    header = [c.strip() for c in rows[0]]
    return header, rows[1:]


def _float(value, path, row, col):
    try:
        x = float(value)
    except ValueError:
        raise SchemaError(f"{path}: row {row}, column {col!r}: cannot parse {value!r} as a number") from None
    if not math.isfinite(x):
        raise SchemaError(f"{path}: row {row}, column {col!r}: non-finite value")
    return x


def load_series(path) -> MultiSeries:
    """Read a time-series CSV (rows are times, columns channels)."""
    header, rows = _read_csv(path)
    if not rows:
        raise SchemaError(f"{path}: no data rows")
    vals = np.empty((len(rows), len(header)))
    for i, r in enumerate(rows):
        if len(r) != len(header):
            raise SchemaError(f"{path}: row {i + 2} has {len(r)} fields, header has {len(header)}")
        for j, c in enumerate(r):
            vals[i, j] = _float(c, path, i + 2, header[j])
    return MultiSeries(Path(path).stem, vals.T)


def load_series_dir(directory):
    files = sorted(Path(directory).glob("*.csv"))
    if not files:
        raise SchemaError(f"{directory}: no .csv series files found")
    return [load_series(f) for f in files]


def _value_columns(manifold: Manifold):
    if manifold.kind == "spd":
        return [f"s{i + 1}{j + 1}" for i in range(manifold.m) for j in range(manifold.m)]
    return [f"x{i + 1}" for i in range(int(np.prod(manifold.point_shape)))]


def _format_of(path, fmt_):
    if fmt_ is not None:
        return fmt_
    suffix = Path(path).suffix.lower()
    if suffix in (".csv", ".json"):
        return suffix[1:]
    raise SchemaError(f"{path}: cannot infer format from the extension; use .csv or .json")


def save_sample(sample: Sample, path, format: str = None):
    """Write ``sample`` as CSV (long format) or JSON."""
    kind = _format_of(path, format)
    m = sample.manifold
    if kind == "json":
        doc = dict(
            manifold=m.to_dict(),
            times=[float(t) for t in sample.grid.times],
            subjects=list(sample.subjects),
            values=sample.values.tolist(),
        )
        Path(path).write_text(json.dumps(doc), encoding="utf-8")
        return
    cols = _value_columns(m)
    flat = sample.values.reshape(sample.n, len(sample.grid), -1)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["subject", "t"] + cols)
        for i, subj in enumerate(sample.subjects):
            for j, t in enumerate(sample.grid.times):
                w.writerow([subj, fmt(t)] + [fmt(x) for x in flat[i, j]])


def _infer_manifold(header, path):
    cols = header[2:]
    if cols and all(c.startswith("s") for c in cols):
        m = math.isqrt(len(cols))
        if m * m != len(cols):
            raise SchemaError(f"{path}: {len(cols)} matrix columns is not a perfect square")
        return SPD(m)
    raise SchemaError(f"{path}: cannot infer the manifold from the header; pass it explicitly")


def _check_points(manifold, values, subjects, grid, path, project):
    """Validate each point; on failure report subject and time."""
    if project:
        return manifold.project(values)
    try:
        return manifold.validate_point(values)
    except GeometryError:
        pass
    for i, subj in enumerate(subjects):
        for j, t in enumerate(grid.times):
            try:
                manifold.validate_point(values[i, j])
            except GeometryError as exc:
                raise SchemaError(
                    f"{path}: subject {subj!r} at t={t:g}: {exc} (use the project option to repair)"
                ) from exc
    raise SchemaError(f"{path}: invalid sample values")


def load_sample(path, manifold: Manifold = None, format: str = None, project: bool = False) -> Sample:
    """Read a sample written by :func:`save_sample` (or following its schema).

    CSV input needs ``manifold`` unless the header identifies SPD columns.
    Points violating the manifold constraints are rejected with the subject
    and time, or repaired with the manifold projection when ``project`` is set.
    """
    kind = _format_of(path, format)
    if kind == "json":
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise SchemaError(f"{path}: invalid JSON ({exc})") from exc
        missing = {"manifold", "times", "values"} - set(doc)
        if missing:
            raise SchemaError(f"{path}: missing fields {sorted(missing)}")
        man = manifold_from_dict(doc["manifold"])
        if manifold is not None and manifold != man:
            raise SchemaError(f"{path}: file holds {man}, expected {manifold}")
        grid = TimeGrid.from_times(doc["times"])
        vals = np.array(doc["values"], dtype=float)
        if vals.ndim < 2 or vals.shape[1:] != (len(grid),) + man.point_shape:
            raise SchemaError(f"{path}: values have shape {vals.shape}, expected (n, {len(grid)}) + {man.point_shape}")
        subjects = tuple(doc.get("subjects") or range(vals.shape[0]))
        vals = _check_points(man, vals, subjects, grid, path, project)
        return Sample(man, grid, vals, subjects)

    header, rows = _read_csv(path)
    if header[:2] != ["subject", "t"]:
        raise SchemaError(f"{path}: header must start with 'subject,t', got {header[:2]}")
    man = manifold or _infer_manifold(header, path)
    cols = _value_columns(man)
    if header[2:] != cols:
        raise SchemaError(f"{path}: expected value columns {cols}, got {header[2:]}")
    if not rows:
        raise SchemaError(f"{path}: no data rows")
    order, by_subject = [], {}
    for i, r in enumerate(rows):
        if len(r) != len(header):
            raise SchemaError(f"{path}: row {i + 2} has {len(r)} fields, header has {len(header)}")
        subj = r[0]
        if subj not in by_subject:
            order.append(subj)
            by_subject[subj] = []
        t = _float(r[1], path, i + 2, "t")
        x = [_float(c, path, i + 2, header[k + 2]) for k, c in enumerate(r[2:])]
        by_subject[subj].append((t, x))
    times = [t for t, _ in by_subject[order[0]]]
    for subj in order:
        ts = [t for t, _ in by_subject[subj]]
        if ts != times:
            raise SchemaError(f"{path}: subject {subj!r} is not sampled on the same times as {order[0]!r}")
    try:
        grid = TimeGrid.from_times(times)
    except ValueError as exc:
        raise SchemaError(f"{path}: {exc}") from exc
    vals = np.array([[x for _, x in by_subject[s]] for s in order], dtype=float)
    vals = vals.reshape((len(order), len(grid)) + man.point_shape)
    vals = _check_points(man, vals, tuple(order), grid, path, project)
    return Sample(man, grid, vals, tuple(order))


def save_responses(path, subjects, y, covariates=None, names=None):
    y = np.asarray(y, dtype=float).reshape(-1)
    g = None if covariates is None else np.asarray(covariates, dtype=float).reshape(y.size, -1)
    q = 0 if g is None else g.shape[1]
    names = list(names) if names else [f"z{j + 1}" for j in range(q)]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["subject", "y"] + names)
        for i, s in enumerate(subjects):
            w.writerow([s, fmt(y[i])] + ([fmt(v) for v in g[i]] if q else []))


def load_responses(path, subjects=None):
    """Read a responses CSV; returns ``(y, covariates or None, subjects)``.

    When ``subjects`` is given, rows are reordered to match it and every
    subject must be present exactly once.
    """
    header, rows = _read_csv(path)
    if header[:2] != ["subject", "y"]:
        raise SchemaError(f"{path}: header must start with 'subject,y', got {header[:2]}")
    if not rows:
        raise SchemaError(f"{path}: no data rows")
    ids, data = [], []
    for i, r in enumerate(rows):
        if len(r) != len(header):
            raise SchemaError(f"{path}: row {i + 2} has {len(r)} fields, header has {len(header)}")
        ids.append(r[0])
        data.append([_float(c, path, i + 2, header[k + 1]) for k, c in enumerate(r[1:])])
    if len(set(ids)) != len(ids):
        raise SchemaError(f"{path}: duplicate subject ids")
    data = np.array(data, dtype=float)
    if subjects is not None:
        pos = {s: i for i, s in enumerate(ids)}
        missing = [s for s in subjects if s not in pos]
        if missing:
            raise SchemaError(f"{path}: no response for subject(s) {missing[:5]}")
        data = data[[pos[s] for s in subjects]]
        ids = list(subjects)
    cov = data[:, 1:] if data.shape[1] > 1 else None
    return data[:, 0], cov, tuple(ids)
