"""Figure rendering for fit debugging, evaluation reports and loss curves.

Everything renders through the Agg backend straight to files; figures sit
alongside the delimited outputs (CSV, JSON) the commands emit.
"""

from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .fitting import FitDebug
from .metrics import CORNER_CLASSES, EvalReport


def save_fit_debug(out_dir, debug: FitDebug, layout=None):
    """Render the fitting stages: fused map, mask + boundary, clustered
    lines, voted cells with the final polygon."""
    os.makedirs(out_dir, exist_ok=True)
    fig, axes = plt.subplots(1, 4, figsize=(16, 4.2))
    (ax_a, ax_b, ax_c, ax_d) = axes

    ax_a.imshow(debug.fused, cmap="viridis", vmin=0, vmax=1)
    ax_a.set_title("(a) fused floor-plan probability")

    ax_b.imshow(debug.mask, cmap="gray")
    if debug.polyline is not None:
        poly = np.vstack([debug.polyline, debug.polyline[:1]])
        ax_b.plot(poly[:, 0], poly[:, 1], "c-", lw=1.5)
    ax_b.set_title("(b) mask + simplified boundary")

    ax_c.imshow(debug.mask, cmap="gray")
    if debug.lines is not None:
        for x in debug.lines.xs:
            ax_c.axvline(x, color="orange", lw=1)
        for z in debug.lines.zs:
            ax_c.axhline(z, color="orange", lw=1)
    ax_c.set_title("(c) clustered wall lines")

    if debug.cells is not None:
        xs, zs = debug.cells.lines.xs, debug.cells.lines.zs
        ax_d.imshow(debug.mask, cmap="gray")
        for iz in range(debug.cells.include.shape[0]):
            for ix in range(debug.cells.include.shape[1]):
                if debug.cells.include[iz, ix]:
                    ax_d.add_patch(
                        plt.Rectangle(
                            (xs[ix], zs[iz]), xs[ix + 1] - xs[ix], zs[iz + 1] - zs[iz],
                            facecolor="tab:green", alpha=0.35, edgecolor="g",
                        )
                    )
    ax_d.set_title("(d) voted cells")

    for ax in axes:
        ax.set_xticks([])
        ax.set_yticks([])
    fig.tight_layout()
    fig.savefig(os.path.join(out_dir, "fit_stages.png"), dpi=110)
    plt.close(fig)

    from .io import write_map_png

    write_map_png(os.path.join(out_dir, "fused.png"), debug.fused)
    write_map_png(os.path.join(out_dir, "mask.png"), debug.mask.astype(float))
    write_map_png(os.path.join(out_dir, "mfc_ceiling.png"), debug.mfc_ceiling)
    write_map_png(os.path.join(out_dir, "mfc_floor.png"), debug.mfc_floor)


def save_eval_figures(out_dir, report: EvalReport):
    """Per-class IoU bars and a fit-time histogram."""
    os.makedirs(out_dir, exist_ok=True)
    classes = [c for c in CORNER_CLASSES if any(r.corner_class == c for r in report.records)]
    mean2 = [np.mean([r.iou2d for r in report.records if r.corner_class == c]) for c in classes]
    mean3 = [np.mean([r.iou3d for r in report.records if r.corner_class == c]) for c in classes]

    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(11, 4))
    idx = np.arange(len(classes))
    ax1.bar(idx - 0.18, mean2, width=0.36, label="2D IoU")
    ax1.bar(idx + 0.18, mean3, width=0.36, label="3D IoU")
    ax1.set_xticks(idx, classes)
    ax1.set_xlabel("corner class")
    ax1.set_ylim(0, 1.05)
    ax1.legend()
    ax1.set_title("mean IoU per corner class")

    times = [r.fit_time_s * 1e3 for r in report.records if not r.failed]
    if times:
        ax2.hist(times, bins=30, color="tab:gray")
        p50 = np.percentile(times, 50)
        ax2.axvline(p50, color="r", ls="--", label=f"p50 = {p50:.1f} ms")
        ax2.legend()
    ax2.set_xlabel("fit time (ms)")
    ax2.set_title("prediction timing")
    fig.tight_layout()
    fig.savefig(os.path.join(out_dir, "eval_report.png"), dpi=110)
    plt.close(fig)


def save_loss_curves(path, curve):
    """Training/validation loss and validation IoU over steps."""
    curve = np.asarray(curve, dtype=float)
    fig, ax1 = plt.subplots(figsize=(7, 4))
    ax1.plot(curve[:, 0], curve[:, 1], label="train loss")
    if np.isfinite(curve[:, 2]).any():
        ax1.plot(curve[:, 0], curve[:, 2], label="val loss")
    ax1.set_xlabel("step")
    ax1.set_ylabel("loss")
    ax1.legend(loc="upper left")
    mask = np.isfinite(curve[:, 3])
    if mask.any():
        ax2 = ax1.twinx()
        ax2.plot(curve[mask, 0], curve[mask, 3], "g.-", label="val 2D IoU")
        ax2.set_ylabel("val 2D IoU")
        ax2.set_ylim(0, 1)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
