"""Plots for a bench output directory: RMSE boxplots, paths, velocity arrows."""
import csv
import sys
from collections import defaultdict
from pathlib import Path

import matplotlib.pyplot as plt


def rows(path):
    with open(path) as f:
        next(f)  # schema line
        return list(csv.DictReader(f))


def main(out):
    out = Path(out)
    box = defaultdict(lambda: defaultdict(list))
    for r in rows(out / "boxplot.csv"):
        box[r["group"]][r["filter"]].append(float(r["rmse"]))
    fig, axes = plt.subplots(1, len(box), figsize=(5 * len(box), 4), squeeze=False)
    for ax, (group, by_filter) in zip(axes[0], box.items()):
        ax.boxplot(list(by_filter.values()), tick_labels=list(by_filter))
        ax.set_title(f"RMSE ({group})")
    fig.savefig(out / "rmse.png", dpi=150)

    if (out / "trajectory.csv").exists():
        series = defaultdict(list)
        for r in rows(out / "trajectory.csv"):
            series[r["series"]].append((float(r["x"]), float(r["y"])))
        fig, ax = plt.subplots(figsize=(6, 6))
        for name, pts in series.items():
            ax.plot(*zip(*pts), "-" if name == "truth" else ".-", label=name)
        ax.set_aspect("equal")
        ax.legend()
        fig.savefig(out / "path.png", dpi=150)

    if (out / "velocity.csv").exists():
        fig, ax = plt.subplots(figsize=(6, 6))
        by = defaultdict(list)
        for r in rows(out / "velocity.csv"):
            by[r["series"]].append([float(r[k]) for k in ("x", "y", "vx", "vy")])
        for name, pts in by.items():
            x, y, vx, vy = zip(*pts)
            ax.quiver(x, y, vx, vy, angles="xy", label=name, alpha=0.7)
        ax.set_aspect("equal")
        ax.legend()
        fig.savefig(out / "velocity.png", dpi=150)


if __name__ == "__main__":
    main(sys.argv[1])
