"""Class-wise score histograms from the per-class CSV written by
`ttpx eval --csv`.

    python scripts/plot_bins.py per_class.csv --out bins.png
"""

import argparse

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np
import pandas as pd

from ttpx.evaluation import classwise_bins

plt.rcParams.update(
    {
        "font.size": 16,  # Base font size
        "axes.labelsize": 16,  # Axis labels
        "axes.titlesize": 16,  # Plot title
        "xtick.labelsize": 12,  # X-axis tick labels
        "ytick.labelsize": 14,  # Y-axis tick labels
        "legend.fontsize": 14,  # Legend text
    }
)

METRICS = ("precision", "recall", "f1")


def plot_bins(df: pd.DataFrame, interval: float = 0.1, figsize=(14, 6)):
    """
    Grouped bar chart: for every score range, the number of classes whose
    precision / recall / f1 falls into it.

    Args:
        df (pd.DataFrame): per-class metrics with `technique_id` and metric columns
        interval (float): width of each score range
    """
    fig, ax = plt.subplots(figsize=figsize)
    histograms = {
        metric: classwise_bins(dict(zip(df["technique_id"], df[metric])), interval)
        for metric in METRICS
    }
    edges = histograms["f1"].edges
    positions = np.arange(len(edges) - 1)
    width = 0.8 / len(METRICS)
    for i, metric in enumerate(METRICS):
        ax.bar(positions + i * width, histograms[metric].counts, width, label=metric)

    ax.set_xticks(positions + width)
    ax.set_xticklabels([f"{lo:.1f}-{hi:.1f}" for lo, hi in zip(edges[:-1], edges[1:])])
    ax.set_xlabel("Score range")
    ax.set_ylabel("Number of classes")
    ax.set_title(f"Class-wise score distribution ({len(df)} classes)")
    ax.grid(True, axis="y", alpha=0.3)
    ax.legend()
    fig.tight_layout()
    return fig


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("csv", help="per-class metrics CSV")
    parser.add_argument("--interval", type=float, default=0.1)
    parser.add_argument("--out", help="save the figure instead of showing it")
    args = parser.parse_args()

    df = pd.read_csv(args.csv)
    fig = plot_bins(df, args.interval)
    if args.out:
        fig.savefig(args.out, dpi=150)
    else:
        plt.show()


if __name__ == "__main__":
    main()
