"""Figure rendering for training curves and cross-model comparisons. Uses the
Agg backend so commands can run headless; outputs are plain PNG files written
next to the delimited data they visualize."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def save_loss_curve(curve, path, title: str = "Parameter-alignment loss") -> None:
    """Mean loss per round with a one-standard-deviation band."""
    rounds = [row[0] for row in curve]
    means = np.array([row[1] for row in curve], dtype=float)
    stds = np.array([row[2] for row in curve], dtype=float)
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(rounds, means, color="tab:blue", lw=1.5, label="mean")
    ax.fill_between(
        rounds, means - stds, means + stds, color="tab:blue", alpha=0.25, label="std"
    )
    ax.set_xlabel("round")
    ax.set_ylabel("loss")
    ax.set_title(title)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)


def save_comparison(scene_ids, mode_totals: dict, path, title: str = "Total loss by model") -> None:
    """Grouped bars: one group per scene, one bar per mode.

    mode_totals maps mode name -> list of totals aligned with scene_ids."""
    modes = sorted(mode_totals)
    n_scenes = len(scene_ids)
    x = np.arange(n_scenes)
    width = 0.8 / max(len(modes), 1)
    fig, ax = plt.subplots(figsize=(1.6 * n_scenes + 3, 4))
    for k, mode in enumerate(modes):
        offs = (k - (len(modes) - 1) / 2.0) * width
        ax.bar(x + offs, mode_totals[mode], width=width, label=mode)
    ax.set_xticks(x)
    ax.set_xticklabels(scene_ids, rotation=20, ha="right")
    ax.set_ylabel("total loss")
    ax.set_title(title)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)


def save_lane_overlay(detected, reference, path, title: str = "Detected vs reference lanes") -> None:
    """Centerline overlay; detected solid, reference dashed."""
    fig, ax = plt.subplots(figsize=(6, 6))
    for lane in reference.lanes:
        pts = lane.centerline.pts
        ax.plot(pts[:, 0], pts[:, 1], "k--", lw=1.0)
    for lane in detected.lanes:
        pts = lane.centerline.pts
        ax.plot(pts[:, 0], pts[:, 1], lw=1.5)
    ax.set_aspect("equal")
    ax.set_xlabel("x (m)")
    ax.set_ylabel("y (m)")
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
