"""CSV summaries and optional figures for simulation tables.

Figures need matplotlib (the ``figures`` extra); it is imported only when a
figure is requested and always uses the non-interactive Agg backend.
"""

from __future__ import annotations

import csv
from collections import defaultdict
from pathlib import Path

from .ingest import fmt
from .simulate import CSV_COLUMNS

__all__ = ["write_rows", "read_rows", "format_rows", "render_figures"]


def _cell(value):
    return fmt(value) if isinstance(value, float) else str(value)


def write_rows(rows, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_COLUMNS)
        for r in rows:
            w.writerow([_cell(r[c]) for c in CSV_COLUMNS])


def read_rows(path):
    with open(path, newline="", encoding="utf-8") as fh:
        out = list(csv.DictReader(fh))
    for r in out:
        for c in ("n", "k", "replicates", "seed"):
            r[c] = int(r[c])
        r["mean"], r["sd"] = float(r["mean"]), float(r["sd"])
    return out


def format_rows(rows):
    """Plain-text table in the ``mean (sd)`` convention."""
    lines = [f"{'manifold':8} {'n':>5} {'metric':12} {'k':>2} {'noise':9} {'mean (sd)':>18}"]
    for r in rows:
        lines.append(
            f"{r['manifold']:8} {r['n']:>5} {r['metric']:12} {r['k']:>2} {r['noise'] or '-':9} "
            f"{r['mean']:>8.3f} ({r['sd']:.3f})"
        )
    return "\n".join(lines)


def render_figures(rows, out_dir, prefix="table"):
    """One PNG per ``(manifold, metric)``: cell means against n with SD bars."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    groups = defaultdict(lambda: defaultdict(list))
    for r in rows:
        label = f"k={r['k']}" if r["k"] else "mean"
        if r["noise"]:
            label = r["noise"]
        groups[(r["manifold"], r["metric"])][label].append((r["n"], r["mean"], r["sd"]))
    paths = []
    for (man, metric), series in sorted(groups.items()):
        fig, ax = plt.subplots(figsize=(5, 3.5))
        for label, pts in sorted(series.items()):
            pts.sort()
            ns, mu, sd = zip(*pts)
            ax.errorbar(ns, mu, yerr=sd, marker="o", capsize=3, label=label)
        ax.set_xscale("log")
        ax.set_xlabel("n")
        ax.set_ylabel(metric)
        ax.set_title(f"{man}: {metric}")
        ax.legend(fontsize="small")
        fig.tight_layout()
        path = Path(out_dir) / f"{prefix}_{man}_{metric}.png"
        fig.savefig(path, dpi=120)
        plt.close(fig)
        paths.append(path)
    return paths
