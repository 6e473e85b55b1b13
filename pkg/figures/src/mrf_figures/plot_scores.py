"""Render the method-comparison panel from a score CSV.

The input is the ``scores.csv`` produced by ``mrfilter compare``:
one row per (scenario, method, replicate, time step) with ``kl`` and
``rmspe_ratio`` columns.  Output is a PNG with one labeled curve per
method, mean KL on a log axis against the time step.

Rendering is byte-stable: the same CSV always produces the same file.
All style state is set explicitly and the PNG metadata is pinned.
"""

import argparse
import csv
from collections import defaultdict

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

# canonical curve order and colors; methods not listed are appended
# in order of first appearance with the default cycle
METHOD_STYLE = {
    "mrf": ("tab:blue", "multi-resolution filter"),
    "lrf": ("tab:orange", "low-rank filter"),
    "mra": ("tab:green", "no-history variant"),
    "enkf": ("tab:red", "ensemble filter"),
}

_STABLE_RC = {
    "figure.dpi": 100,
    "savefig.dpi": 150,
    "font.family": "DejaVu Sans",
    "font.size": 10,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "svg.hashsalt": "plot-scores",
}


def load_scores(path):
    """Rows of the score CSV as dicts; numeric fields parsed."""
    rows = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            row["t"] = int(row["t"])
            row["rep"] = int(row["rep"])
            row["kl"] = float(row["kl"])
            row["rmspe_ratio"] = float(row["rmspe_ratio"])
            rows.append(row)
    if not rows:
        raise ValueError(f"no score rows in {path}")
    return rows


def _mean_kl_curves(rows):
    acc = defaultdict(lambda: defaultdict(list))
    order = []
    for row in rows:
        if row["method"] not in order:
            order.append(row["method"])
        acc[row["method"]][row["t"]].append(row["kl"])
    ordered = [m for m in METHOD_STYLE if m in acc]
    ordered += [m for m in order if m not in METHOD_STYLE]
    curves = {}
    for method in ordered:
        ts = sorted(acc[method])
        curves[method] = (np.array(ts),
                          np.array([np.mean(acc[method][t]) for t in ts]))
    return curves


def plot_scores(rows):
    """Comparison panel figure for the given score rows."""
    with matplotlib.rc_context(_STABLE_RC):
        fig, ax = plt.subplots(figsize=(6.4, 4.2))
        for method, (ts, kl) in _mean_kl_curves(rows).items():
            color, label = METHOD_STYLE.get(method, (None, method))
            ax.plot(ts, np.maximum(kl, 1e-300), color=color, label=label,
                    marker="o", markersize=3)
        ax.set_yscale("log")
        ax.set_xlabel("time step")
        ax.set_ylabel("mean KL divergence from the exact filter")
        scenario = rows[0]["scenario"]
        ax.set_title(f"filter comparison: {scenario}")
        ax.legend()
        fig.tight_layout()
    return fig


def render(csv_path, out_path):
    """Read a score CSV and write the comparison panel PNG."""
    fig = plot_scores(load_scores(csv_path))
    fig.savefig(out_path, format="png",
                metadata={"Software": "plot-scores"})
    plt.close(fig)
    return out_path


def main(argv=None):
    parser = argparse.ArgumentParser(
        description="render the comparison panel from a score CSV")
    parser.add_argument("scores", help="scores.csv from the compare run")
    parser.add_argument("-o", "--out", default="scores.png",
                        help="output PNG path")
    args = parser.parse_args(argv)
    render(args.scores, args.out)
    print(args.out)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
