"""Figure rendering for the report path.

Each run directory gets PNG figures next to the CSV files: loss/accuracy
curves with a seed-spread band, the smoothed per-dimension attribution
curves, the decision boundaries of 2-D models, and the balance-score curve
for mini-epoch runs. PNGs are written without the software metadata chunk so
repeated runs produce identical bytes.
"""

from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .harness import AggregateLog, GridSpec, decision_boundary

_PNG_META = {"Software": None}


def _save(fig, path):
    fig.savefig(path, dpi=110, metadata=_PNG_META)
    plt.close(fig)


def render_curves(agg: AggregateLog, path, title=""):
    """Test accuracy and train/test loss over iterations, mean with std band."""
    t = agg.mean.iteration
    fig, (ax_acc, ax_loss) = plt.subplots(1, 2, figsize=(10, 3.6))
    ax_acc.plot(t, agg.mean.test_acc, color="tab:blue", label="test accuracy")
    ax_acc.fill_between(t, agg.mean.test_acc - agg.std.test_acc,
                        agg.mean.test_acc + agg.std.test_acc,
                        color="tab:blue", alpha=0.2)
    ax_acc.set_xlabel("iteration")
    ax_acc.set_ylabel("accuracy")
    ax_acc.set_ylim(0.0, 1.02)
    ax_acc.legend(loc="lower right")
    ax_loss.plot(t, agg.mean.train_loss, color="tab:orange", label="train loss")
    ax_loss.plot(t, agg.mean.test_loss, color="tab:green", label="test loss")
    ax_loss.set_xlabel("iteration")
    ax_loss.set_ylabel("loss")
    ax_loss.legend(loc="upper right")
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    _save(fig, path)


def render_attributions(agg: AggregateLog, path, title=""):
    """Cumulative-mean smoothed input attribution per dimension."""
    t = agg.mean.iteration
    fig, ax = plt.subplots(figsize=(6, 3.6))
    for d in range(agg.mean.n_dims):
        ax.plot(t, agg.mean.attr_smooth[:, d], label=f"dim {d}")
    ax.set_xlabel("iteration")
    ax.set_ylabel("mean normalized attribution")
    ax.legend(loc="best", fontsize="small")
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    _save(fig, path)


def render_boundaries(nets, train, test, path, grid=None, title=""):
    """Decision boundaries of the per-seed models over the 2-D data."""
    if grid is None:
        lo = float(min(train.features.min(), test.features.min())) - 0.5
        hi = float(max(train.features.max(), test.features.max())) + 0.5
        grid = GridSpec(lo, hi, lo, hi, 120, 120)
    fig, ax = plt.subplots(figsize=(5, 4.2))
    for net in nets:
        xs, ys, classes = decision_boundary(net, grid)
        ax.contour(xs, ys, classes, levels=[0.5], colors="black",
                   linewidths=1.0, alpha=0.7)
    for c, color in ((0, "tab:blue"), (1, "tab:red")):
        sel = train.labels == c
        ax.scatter(train.features[sel, 0], train.features[sel, 1],
                   s=8, color=color, alpha=0.25)
        sel = test.labels == c
        ax.scatter(test.features[sel, 0], test.features[sel, 1],
                   s=10, color=color, alpha=0.9, marker="x")
    ax.set_xlabel("dim 0")
    ax.set_ylabel("dim 1")
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    _save(fig, path)


def render_balance(agg: AggregateLog, path, title=""):
    """Balance score and class proportions over mini-epochs."""
    me = agg.mean.mini_epoch
    fig, (ax_b, ax_p) = plt.subplots(1, 2, figsize=(10, 3.6))
    balance = np.where(np.isfinite(agg.mean.balance), agg.mean.balance, np.nan)
    ax_b.plot(me, balance, color="tab:purple")
    ax_b.set_xlabel("mini-epoch")
    ax_b.set_ylabel("balance score")
    for c in range(agg.mean.proportions.shape[1]):
        ax_p.plot(me, agg.mean.proportions[:, c], label=f"class {c}")
    ax_p.set_xlabel("mini-epoch")
    ax_p.set_ylabel("sample proportion")
    ax_p.set_ylim(0.0, 1.0)
    ax_p.legend(loc="best")
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    _save(fig, path)


def render_run_figures(out_dir, config, logs, agg: AggregateLog, nets=None,
                       data=None) -> list:
    """Render every figure that applies to this run; returns written paths."""
    prefix = f"{config.experiment}_{config.augmentation.family}"
    title = f"{config.experiment} / {config.augmentation.family}"
    paths = []

    path = os.path.join(out_dir, f"{prefix}_curves.png")
    render_curves(agg, path, title)
    paths.append(path)

    if config.attr_every > 0:
        path = os.path.join(out_dir, f"{prefix}_attributions.png")
        render_attributions(agg, path, title)
        paths.append(path)

    if nets and data and nets[0].layers[0].in_units == 2:
        train, test = data
        path = os.path.join(out_dir, f"{prefix}_boundaries.png")
        render_boundaries(nets, train, test, path, title=title)
        paths.append(path)

    if agg.mean.mini_epoch is not None:
        path = os.path.join(out_dir, f"{prefix}_balance.png")
        render_balance(agg, path, title)
        paths.append(path)
    return paths
