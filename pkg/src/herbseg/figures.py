"""Matplotlib renderings written next to the delimited report outputs."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np
from matplotlib.colors import ListedColormap

from .analytics import CoverageStat, HeatMap, heat_lut
from .evaluation import OVERALL, TaxonReport

FIG_DPI = 120


def eval_report_figure(reports: list[TaxonReport], path) -> None:
    taxa = [r for r in reports if r.taxon != OVERALL]
    labels = [r.taxon for r in taxa]
    x = np.arange(len(labels))
    fig, ax = plt.subplots(figsize=(max(6, 0.9 * len(labels)), 4))
    ax.bar(x - 0.2, [r.mean_iou for r in taxa], width=0.4, label="IoU")
    ax.bar(x + 0.2, [r.mean_dice for r in taxa], width=0.4, label="Dice")
    ax.set_xticks(x)
    ax.set_xticklabels(labels, rotation=45, ha="right")
    ax.set_ylim(0, 1.05)
    ax.set_ylabel("mean score")
    ax.legend(loc="lower right")
    fig.tight_layout()
    fig.savefig(path, dpi=FIG_DPI)
    plt.close(fig)


def ratio_figure(single_mean: float, multi_mean: float, path) -> None:
    fig, ax = plt.subplots(figsize=(4.5, 4))
    bars = ax.bar(["single box", "multi region"],
                  [single_mean * 100, multi_mean * 100],
                  color=["#777777", "#2d7a2d"])
    for bar, value in zip(bars, (single_mean, multi_mean)):
        ax.text(bar.get_x() + bar.get_width() / 2, bar.get_height() + 1,
                f"{value * 100:.2f}%", ha="center")
    ax.set_ylabel("plant area / box area (%)")
    ax.set_ylim(0, 105)
    fig.tight_layout()
    fig.savefig(path, dpi=FIG_DPI)
    plt.close(fig)


def coverage_figure(stats: list[CoverageStat], path) -> None:
    labels = [s.taxon for s in stats]
    plant = [s.plant_pct for s in stats]
    background = [s.background_pct for s in stats]
    y = np.arange(len(labels))
    fig, ax = plt.subplots(figsize=(6, max(3, 0.45 * len(labels))))
    ax.barh(y, plant, color="#2d7a2d", label="plant")
    ax.barh(y, background, left=plant, color="#d8d0c0", label="background")
    ax.set_yticks(y)
    ax.set_yticklabels(labels)
    ax.invert_yaxis()
    ax.set_xlabel("coverage (%)")
    ax.set_xlim(0, 100)
    ax.legend(loc="lower right")
    fig.tight_layout()
    fig.savefig(path, dpi=FIG_DPI)
    plt.close(fig)


def heatmap_figure(hm: HeatMap, path) -> None:
    cmap = ListedColormap(heat_lut() / 255.0)
    fig, ax = plt.subplots(figsize=(5, 5 * hm.height / max(hm.width, 1)))
    im = ax.imshow(hm.values, cmap=cmap, vmin=0.0, vmax=1.0)
    ax.set_axis_off()
    fig.colorbar(im, ax=ax, fraction=0.04, label="foreground frequency")
    fig.tight_layout()
    fig.savefig(path, dpi=FIG_DPI)
    plt.close(fig)
