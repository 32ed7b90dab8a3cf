"""Draw a results CSV as log-scale tail and bound curves.

Pure post-processing: every plotted number is read from the CSV.
"""
from __future__ import annotations

import csv
import math
from pathlib import Path


def _col(rows: list[dict], name: str) -> list[float]:
    out = []
    for r in rows:
        v = r[name]
        out.append(math.nan if v in ("NA", "") else float(v))
    return out


def plot_csv(csv_path: Path, svg_path: Path) -> None:
    import matplotlib

    matplotlib.use("svg")
    import matplotlib.pyplot as plt

    with open(csv_path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    xs = _col(rows, "x")
    fig, ax = plt.subplots(figsize=(7, 4.5))
    est = _col(rows, "tail_est")
    if not all(math.isnan(v) for v in est):
        lo, hi = _col(rows, "ci_lo"), _col(rows, "ci_hi")
        ax.fill_between(xs, lo, hi, color="C0", alpha=0.25, linewidth=0)
        ax.plot(xs, est, "o-", color="C0", label="Monte Carlo")
    ub = [min(1.0, math.exp(v)) if not math.isnan(v) else math.nan
          for v in _col(rows, "ub_chernoff_log")]
    ax.plot(xs, ub, "-", color="C3", label="Chernoff upper (optimized)")
    ax.plot(xs, _col(rows, "ub_paper"), "--", color="C1", label="closed-form upper")
    ax.plot(xs, _col(rows, "lb_gg"), "-", color="C2", label="lower, c = 1/2")
    ax.plot(xs, _col(rows, "lb_simple"), "--", color="C2", alpha=0.7, label="lower, simplified")
    ax.set_yscale("log")
    ax.set_xlabel("x")
    ax.set_ylabel("P(|R| > x)")
    ax.legend(fontsize=8)
    fig.tight_layout()
    plt.rcParams["svg.hashsalt"] = "perpetuity"
    fig.savefig(svg_path, format="svg", metadata={"Date": None})
    plt.close(fig)
