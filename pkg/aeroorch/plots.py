import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import scienceplots  # noqa: F401  registers the "science" styles
from matplotlib.ticker import MaxNLocator

from .utils import export

METRICS = {
    "acceptance": ("Accepted requests (%)", "acceptance.png"),
    "energy": ("Energy per request", "energy.png"),
    "latency": ("E2E latency (ms)", "latency.png"),
}


@export
def plot_metric(frame, metric, path, xlabel="Scenario point"):
    """One line per policy with a shaded ±1 std band."""
    ylabel, _ = METRICS[metric]
    with plt.style.context(["science", "vibrant", "no-latex"]):
        fig, ax = plt.subplots()
        for policy, rows in frame.groupby("policy", sort=True):
            rows = rows.sort_values("scenario_point")
            x = rows["scenario_point"].to_numpy()
            mean = rows[f"{metric}_mean"].to_numpy()
            std = rows[f"{metric}_std"].to_numpy()
            ax.plot(x, mean, marker="o", label=policy)
            ax.fill_between(x, mean - std, mean + std, linewidth=0.0, alpha=0.2)
        ax.xaxis.set_major_locator(MaxNLocator(integer=True))
        ax.set(xlabel=xlabel, ylabel=ylabel)
        ax.legend()
        fig.savefig(path, dpi=200)
        plt.close(fig)
    return path


@export
def plot_metrics(frame, directory, xlabel="Scenario point"):
    return [plot_metric(frame, m, os.path.join(directory, name), xlabel) for m, (_, name) in METRICS.items()]
