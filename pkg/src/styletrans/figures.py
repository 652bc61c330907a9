"""Matplotlib report figures rendered next to the delimited outputs."""

from __future__ import annotations

import csv

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def loss_curve(csv_path, out_png):
    """Training curves from the loss CSV."""
    steps = []
    series = {"L_c": [], "L_s": [], "L_id1": [], "L_id2": [], "total": []}
    with open(csv_path, newline="") as f:
        for row in csv.DictReader(f):
            steps.append(int(row["step"]))
            for k in series:
                series[k].append(float(row[k]))
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for k, vals in series.items():
        ax.plot(steps, vals, label=k,
                linewidth=2 if k == "total" else 1)
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.set_yscale("log")
    ax.legend(loc="best", fontsize=8)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(out_png, dpi=120)
    plt.close(fig)


def dot_matrix_figure(matrices, out_png):
    """Side-by-side heatmaps of pairwise token dot-product matrices."""
    n = len(matrices)
    fig, axes = plt.subplots(1, n, figsize=(4 * n, 4))
    if n == 1:
        axes = [axes]
    for ax, (title, mat) in zip(axes, matrices.items()):
        im = ax.imshow(mat, cmap="viridis")
        ax.set_title(title, fontsize=10)
        ax.set_xticks([])
        ax.set_yticks([])
        fig.colorbar(im, ax=ax, fraction=0.046)
    fig.tight_layout()
    fig.savefig(out_png, dpi=120)
    plt.close(fig)
