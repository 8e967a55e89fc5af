"""Command-line front end.

Subcommands::

    rfda reproduce {table1,table2,table3} [--profile desk|full] --out DIR [--figures]
    rfda simulate --config CONFIG.json --out DIR [--write-data]
    rfda fpca SAMPLE --out DIR [--manifold KIND:DIM] [--config CONFIG.json] [--k K]
    rfda flr --train S --train-y Y --valid S --valid-y Y --test S [--test-y Y] --out DIR
    rfda ingest SERIES_DIR --out SAMPLE.{csv,json} [--h H]

Every run writes ``manifest.json`` into its output directory (``ingest``:
next to the output file) recording the command, a digest of the effective
configuration, the master seed, the library version, timestamps, output paths
and any warnings.

Precedence for settings: command-line flag > ``RFDA_SEED`` (seed only) >
config file > built-in default.

Exit codes: 0 success, 1 runtime or numerical failure, 2 usage, config or
input-schema error.

Output documents
----------------
``eigensystem.json``
    ``manifold`` ({"kind", "d"} or {"kind", "m"}), ``times``, ``weights``,
    ``mean`` (``(M,) + point_shape``), ``frame`` (``(M, D) + point_shape``
    orthonormal basis vectors), ``eigenvalues`` (``K``), ``eigenfunctions``
    (``(K, M, D)`` frame coordinates), ``n_used``.
``model.json``
    ``method``, ``tuning``, ``intercept``, ``coef_field`` (``(M, D)`` frame
    coordinates of ``Log_mu beta``), ``covariate_coefs``, ``covariate_means``
    and ``eigen`` (an eigensystem document).
"""

from __future__ import annotations

import argparse
import datetime as _dt
import hashlib
import json
import os
import sys
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .errors import RfdaError, SchemaError
from .ingest import fmt, load_responses, load_sample, load_series_dir, save_responses, save_sample, sliding_covariance
from .manifold import SPD, Euclidean, Sphere, manifold_from_dict
from .mean import FrechetOptions, Sample
from .rflr import RegressionDataset, fit_pcr, fit_tikhonov, predict_sample, select_tuning
from .rfpca import fit_rfpca, fraction_of_variance, select_k_fve

__all__ = ["main", "build_parser"]


class UsageError(Exception):
    """Bad flags or configuration (exit code 2)."""


def _now():
    return _dt.datetime.now(_dt.timezone.utc).isoformat()


def _digest(doc):
    return hashlib.sha256(json.dumps(doc, sort_keys=True, default=str).encode()).hexdigest()[:16]


def _write_manifest(out_dir, command, config, seed, outputs, started, notes=()):
    doc = dict(
        command=command,
        config_digest=_digest(config),
        config=config,
        seed=seed,
        version=__version__,
        started=started,
        finished=_now(),
        outputs=[str(p) for p in outputs],
        warnings=list(notes),
    )
    path = Path(out_dir) / "manifest.json"
    path.write_text(json.dumps(doc, indent=2, default=str), encoding="utf-8")
    return path


def _read_json(path):
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc


def _seed(flag, file_value=None, default=None):
    if flag is not None:
        return int(flag)
    env = os.environ.get("RFDA_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise UsageError(f"RFDA_SEED must be an integer, got {env!r}") from None
    return file_value if file_value is not None else default


def _parse_manifold(text):
    if text is None:
        return None
    kind, _, dim = text.partition(":")
    try:
        d = int(dim) if dim else None
        if kind == "sphere":
            return Sphere(d or 2)
        if kind == "spd":
            return SPD(d or 3)
        if kind == "euclidean":
            return Euclidean(d or 1)
    except (ValueError, RfdaError) as exc:
        raise UsageError(f"bad manifold {text!r}: {exc}") from exc
    raise UsageError(f"unknown manifold {text!r}; use sphere:D, spd:M or euclidean:D")


def _parse_grid(text, method):
    """``1..10`` or a comma list."""
    try:
        if ".." in text:
            a, b = text.split("..")
            vals = list(range(int(a), int(b) + 1))
        else:
            vals = [float(v) for v in text.split(",") if v.strip()]
        if method == "pcr":
            vals = [int(v) for v in vals]
    except ValueError:
        raise UsageError(f"cannot parse tuning grid {text!r}") from None
    if not vals:
        raise UsageError("tuning grid is empty")
    return vals


def _frechet_opts(doc, threads):
    try:
        return FrechetOptions(**{**doc, "threads": threads})
    except (TypeError, ValueError) as exc:
        raise UsageError(f"bad Frechet options: {exc}") from exc


def _mkdir(path):
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p


# --------------------------------------------------------------------------
# commands


def cmd_reproduce(args):
    from .report import format_rows, render_figures, write_rows
    from .simulate import reproduce_table

    if args.figures:
        import importlib.util

        # fail before the simulation rather than after it
        if importlib.util.find_spec("matplotlib") is None:
            raise UsageError("--figures needs matplotlib (pip install 'rfda[figures]')")
    started = _now()
    seed = _seed(args.seed, default=20190101)
    out = _mkdir(args.out)
    config = dict(
        table=args.table,
        profile=args.profile,
        seed=seed,
        replicates=args.replicates,
        include_sphere_500=args.include_sphere_500,
    )

    def progress(cfg, results):
        secs = sum(r.seconds for r in results)
        print(f"  {cfg.manifold.kind} n={cfg.n_train}: {len(results)} replicates, {secs:.1f}s", file=sys.stderr)

    rows = reproduce_table(
        args.table,
        profile=args.profile,
        seed=seed,
        threads=args.threads,
        include_sphere_500=args.include_sphere_500,
        replicates=args.replicates,
        progress=progress,
    )
    csv_path = out / f"{args.table}.csv"
    write_rows(rows, csv_path)
    outputs = [csv_path]
    if args.figures:
        outputs += render_figures(rows, out, prefix=args.table)
    print(format_rows(rows))
    _write_manifest(out, "reproduce", config, seed, outputs, started)
    return 0


def cmd_simulate(args):
    from .report import format_rows, write_rows
    from .simulate import SimConfig, aggregate, gen_dataset, run_experiment

    started = _now()
    doc = _read_json(args.config) if args.config else {}
    overrides = {k: v for k, v in dict(n_train=args.n, replicates=args.replicates).items() if v is not None}
    doc = {**doc, **overrides}
    seed = _seed(args.seed, doc.get("seed"))
    if seed is not None:
        doc["seed"] = seed
    try:
        cfg = SimConfig.from_dict(doc)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"bad simulation config: {exc}") from exc
    out = _mkdir(args.out)
    results = run_experiment(cfg, regression=not args.no_regression, threads=args.threads)
    rows = aggregate(cfg, results, table="simulate")
    csv_path = out / "summary.csv"
    write_rows(rows, csv_path)
    outputs = [csv_path]
    if args.write_data:
        data = gen_dataset(cfg, 0)
        for name, split in zip(("train", "valid", "test"), (data.train, data.valid, data.test)):
            ds = split.dataset(cfg)
            sp, rp = out / f"{name}_sample.csv", out / f"{name}_responses.csv"
            save_sample(split.sample, sp)
            save_responses(rp, split.sample.subjects, ds.responses)
            outputs += [sp, rp]
    print(format_rows(rows))
    _write_manifest(out, "simulate", cfg.to_dict(), cfg.seed, outputs, started)
    return 0


def _load(path, manifold, project):
    try:
        return load_sample(path, manifold=manifold, project=project)
    except SchemaError:
        raise
    except FileNotFoundError as exc:
        raise UsageError(str(exc)) from exc


def cmd_fpca(args):
    started = _now()
    doc = _read_json(args.config) if args.config else {}
    man = _parse_manifold(args.manifold) or (manifold_from_dict(doc["manifold"]) if "manifold" in doc else None)
    opts = _frechet_opts(doc.get("frechet", {}), args.threads)
    sample = _load(args.sample, man, args.project)
    if sample.n < 2:
        raise UsageError("covariance estimation needs at least two curves")
    k = args.k if args.k is not None else doc.get("k")
    fit = fit_rfpca(sample, None, opts)
    if k is None:
        fve_target = args.fve if args.fve is not None else doc.get("fve")
        k = select_k_fve(fit.eigen.eigenvalues, fve_target) if fve_target is not None else fit.eigen.K
    if not 1 <= k <= fit.eigen.K:
        raise UsageError(f"k must lie in 1..{fit.eigen.K}")
    fve = fraction_of_variance(fit.eigen.eigenvalues)
    eig = fit.eigen.truncate(k)
    out = _mkdir(args.out)
    eig_path = out / "eigensystem.json"
    eig_path.write_text(json.dumps(eig.to_dict()), encoding="utf-8")
    sc_path = out / "scores.csv"
    with open(sc_path, "w", encoding="utf-8") as fh:
        fh.write(",".join(["subject"] + [f"xi{j + 1}" for j in range(k)]) + "\n")
        for subj, row in zip(sample.subjects, fit.scores[:, :k]):
            fh.write(",".join([subj] + [fmt(v) for v in row]) + "\n")
    print(f"{'k':>3} {'eigenvalue':>14} {'FVE':>8}")
    for j in range(k):
        print(f"{j + 1:>3} {eig.eigenvalues[j]:>14.6g} {fve[j]:>8.4f}")
    config = dict(sample=str(args.sample), manifold=sample.manifold.to_dict(), k=int(k), frechet=doc.get("frechet", {}))
    _write_manifest(out, "fpca", config, None, [eig_path, sc_path], started)
    return 0


def _dataset(sample_path, y_path, manifold, project):
    s = _load(sample_path, manifold, project)
    if y_path is None:
        return s, None
    y, cov, _ = load_responses(y_path, s.subjects)
    return s, RegressionDataset(s, y, cov)


def cmd_flr(args):
    started = _now()
    man = _parse_manifold(args.manifold)
    _, train = _dataset(args.train, args.train_y, man, args.project)
    man = train.sample.manifold
    test_sample, test = _dataset(args.test, args.test_y, man, args.project)
    if test_sample.grid != train.sample.grid:
        raise UsageError("training and test samples are on different time grids")
    grid = _parse_grid(args.grid, args.method)
    opts = _frechet_opts({}, args.threads)
    fit = fit_rfpca(train.sample, None, opts)
    if len(grid) == 1:
        tuning = grid[0]
    else:
        if args.valid is None:
            raise UsageError("a tuning grid with several values needs --valid/--valid-y")
        vs, valid = _dataset(args.valid, args.valid_y, man, args.project)
        if valid is None:
            raise UsageError("--valid needs --valid-y")
        if vs.grid != train.sample.grid:
            raise UsageError("training and validation samples are on different time grids")
        tuning = select_tuning(train, args.method, grid, valid, fit=fit, threads=args.threads)
    model = fit_pcr(train, int(tuning), fit=fit) if args.method == "pcr" else fit_tikhonov(train, float(tuning), fit=fit)
    cov = None if test is None else test.covariates
    yhat = predict_sample(model, test_sample, cov)
    out = _mkdir(args.out)
    mp = out / "model.json"
    mp.write_text(json.dumps(model.to_dict()), encoding="utf-8")
    pp = out / "predictions.csv"
    with open(pp, "w", encoding="utf-8") as fh:
        fh.write("subject,yhat\n")
        for subj, v in zip(test_sample.subjects, yhat):
            fh.write(f"{subj},{fmt(v)}\n")
    print(f"method={args.method} tuning={tuning}")
    if test is not None:
        rmse = float(np.sqrt(np.mean((yhat - test.responses) ** 2)))
        print(f"test RMSE={rmse:.6g}")
    config = dict(method=args.method, grid=grid, train=str(args.train), test=str(args.test), chosen=tuning)
    _write_manifest(out, "flr", config, None, [mp, pp], started)
    return 0


def cmd_ingest(args):
    started = _now()
    out = Path(args.out)
    _mkdir(out.parent)
    series = load_series_dir(args.series_dir)
    ms = {s.m for s in series}
    ts = {s.T for s in series}
    if len(ms) != 1 or len(ts) != 1:
        raise SchemaError("all series must share the number of channels and time points")
    notes = []
    curves = []
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        try:
            curves = [sliding_covariance(s, args.h) for s in series]
        except ValueError as exc:
            raise UsageError(str(exc)) from exc
    for w in caught:
        notes.append(str(w.message))
        print(f"warning: {w.message}", file=sys.stderr)
    sample = Sample.from_curves(curves, [s.subject for s in series])
    save_sample(sample, out)
    m = ms.pop()
    config = dict(series_dir=str(args.series_dir), h=args.h if args.h is not None else 2 * m, out=str(out))
    _write_manifest(out.parent, "ingest", config, None, [out], started, notes)
    print(f"wrote {sample.n} SPD({m}) curves on {len(sample.grid)} time points to {out}")
    return 0


# --------------------------------------------------------------------------


def build_parser():
    p = argparse.ArgumentParser(prog="rfda", description=__doc__.split("\n")[0])
    p.add_argument("--threads", type=int, default=os.cpu_count() or 1, help="worker threads (default: all CPUs)")
    p.add_argument("--version", action="version", version=f"rfda {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("reproduce", help="reproduce a simulation table")
    r.add_argument("table", choices=["table1", "table2", "table3"])
    r.add_argument("--profile", choices=["desk", "full"], default="desk")
    r.add_argument("--out", required=True)
    r.add_argument("--seed", type=int)
    r.add_argument("--replicates", type=int, help="override the profile's replicate count")
    r.add_argument("--include-sphere-500", action="store_true", help="table2 desk: also run sphere n=500")
    r.add_argument("--figures", action="store_true", help="also render PNG figures (needs matplotlib)")
    r.set_defaults(func=cmd_reproduce)

    s = sub.add_parser("simulate", help="run one simulation configuration")
    s.add_argument("--config", help="JSON document with SimConfig fields")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int)
    s.add_argument("--n", type=int, help="training sample size")
    s.add_argument("--replicates", type=int)
    s.add_argument("--no-regression", action="store_true")
    s.add_argument("--write-data", action="store_true", help="also save replicate 0's splits as CSV")
    s.set_defaults(func=cmd_simulate)

    f = sub.add_parser("fpca", help="fit intrinsic FPCA to a sample file")
    f.add_argument("sample")
    f.add_argument("--out", required=True)
    f.add_argument("--config")
    f.add_argument("--manifold", help="sphere:D, spd:M or euclidean:D (needed for non-SPD CSV)")
    f.add_argument("--k", type=int)
    f.add_argument("--fve", type=float, help="choose K by fraction of variance explained")
    f.add_argument("--project", action="store_true", help="repair points that violate the manifold constraints")
    f.set_defaults(func=cmd_fpca)

    g = sub.add_parser("flr", help="fit and apply intrinsic functional linear regression")
    g.add_argument("--train", required=True)
    g.add_argument("--train-y", required=True)
    g.add_argument("--valid")
    g.add_argument("--valid-y")
    g.add_argument("--test", required=True)
    g.add_argument("--test-y")
    g.add_argument("--method", choices=["pcr", "tikhonov"], default="pcr")
    g.add_argument("--grid", default="1..10", help="'1..10' or comma list")
    g.add_argument("--manifold")
    g.add_argument("--project", action="store_true")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_flr)

    i = sub.add_parser("ingest", help="sliding-window covariance curves from time series")
    i.add_argument("series_dir")
    i.add_argument("--h", type=int, help="window half-width (default 2m)")
    i.add_argument("--out", required=True)
    i.set_defaults(func=cmd_ingest)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.threads < 1:
        parser.error("--threads must be at least 1")
    try:
        return args.func(args)
    except (UsageError, SchemaError) as exc:
        print(f"rfda: error: {exc}", file=sys.stderr)
        return 2
    except (RfdaError, ValueError, np.linalg.LinAlgError) as exc:
        print(f"rfda: failed: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
