#!/usr/bin/env python3
import os
import sys

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import scienceplots  # noqa: F401
import pandas as pd
from matplotlib.ticker import MaxNLocator

from aeroorch.harness import XLABELS
from aeroorch.plots import METRICS

SWEEPS = ("requests-sweep", "network-sweep", "channels-sweep")


def generate_figures(runs_path, out_path=None):
    """One row of panels per sweep found under ``runs_path``, one column per metric."""
    out_path = runs_path if out_path is None else out_path
    found = [s for s in SWEEPS if os.path.exists(os.path.join(runs_path, s.replace("-", "_"), "metrics.csv"))]
    if not found:
        raise FileNotFoundError(f"no sweep results under {runs_path}")
    with plt.style.context(["science", "vibrant", "no-latex"]):
        fig, axes = plt.subplots(len(found), len(METRICS), figsize=(3.3 * len(METRICS), 2.5 * len(found)), squeeze=False)
        for row, sweep in zip(axes, found):
            frame = pd.read_csv(os.path.join(runs_path, sweep.replace("-", "_"), "metrics.csv"))
            for ax, (metric, (ylabel, _)) in zip(row, METRICS.items()):
                for policy, rows in frame.groupby("policy", sort=True):
                    rows = rows.sort_values("scenario_point")
                    x = rows["scenario_point"].to_numpy()
                    mean = rows[f"{metric}_mean"].to_numpy()
                    std = rows[f"{metric}_std"].to_numpy()
                    ax.plot(x, mean, marker="o", label=policy)
                    ax.fill_between(x, mean - std, mean + std, linewidth=0.0, alpha=0.2)
                ax.xaxis.set_major_locator(MaxNLocator(integer=True))
                ax.set(xlabel=XLABELS[sweep], ylabel=ylabel)
        axes[0][0].legend()
        fig.tight_layout()
        path = os.path.join(out_path, "sweeps.pdf")
        fig.savefig(path)
        plt.close(fig)
    return path


if __name__ == "__main__":
    print(generate_figures(sys.argv[1] if len(sys.argv) > 1 else "runs"))
