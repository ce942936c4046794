"""Matplotlib figure export for the report-emitting commands.

Every report path writes its delimited data first; these helpers render the
companion PNG next to it.  The Agg backend is forced so rendering works
headless.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def save_traces_figure(traces, path) -> None:
    """Overlay of the device drift curves."""
    fig, ax = plt.subplots(figsize=(7, 4))
    for device_id, trace in traces.items():
        ax.plot(trace.indices, trace.delta_r, label=device_id, linewidth=1.0)
    ax.axhline(0.05, color="grey", linestyle="--", linewidth=0.8, label="0.05 $\\Omega$")
    ax.set_xlabel("sample index")
    ax.set_ylabel("on-resistance drift ($\\Omega$)")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_history_figure(history, path) -> None:
    """Training and test MSE vs iteration, log scale."""
    its = [h[0] for h in history]
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.semilogy(its, [h[1] for h in history], label="train MSE", linewidth=1.0)
    ax.semilogy(its, [h[2] for h in history], label="test MSE", linewidth=1.0)
    ax.set_xlabel("iteration")
    ax.set_ylabel("MSE (normalized)")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_prediction_figure(actual, predicted, start_index, path) -> None:
    """Predicted trajectory over the sensed one, plus the residual box plot."""
    fig, (ax, bx) = plt.subplots(
        1, 2, figsize=(9, 4), gridspec_kw={"width_ratios": [3, 1]}
    )
    idx = np.arange(start_index, start_index + len(actual))
    ax.plot(idx, actual, label="sensed", linewidth=1.0)
    ax.plot(idx, predicted, label="predicted", linewidth=1.0, linestyle="--")
    ax.set_xlabel("sample index")
    ax.set_ylabel("drift ($\\Omega$)")
    ax.legend(fontsize=8)
    bx.boxplot(np.asarray(actual) - np.asarray(predicted))
    bx.set_ylabel("residual ($\\Omega$)")
    bx.set_xticks([])
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_comparison_figure(rows, path) -> None:
    """Bar chart of the detection-point error per method."""
    fig, ax = plt.subplots(figsize=(5, 4))
    methods = [r.method for r in rows]
    errors = [r.error_at_5pct for r in rows]
    ax.bar(methods, errors, color=["#2a6f97" if m == "deep_race" else "#9d8189" for m in methods])
    ax.set_ylabel("detection-point error (%)")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_aggregation_figure(curve, path) -> None:
    """Mean held-out MSE vs training devices per batch."""
    fig, ax = plt.subplots(figsize=(5, 4))
    ms = [m for m, _ in curve]
    ys = [y for _, y in curve]
    ax.semilogy(ms, ys, marker="o", linewidth=1.0)
    ax.set_xticks(ms)
    ax.set_xlabel("training devices per batch")
    ax.set_ylabel("mean held-out MSE")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_simulation_figure(report, path) -> None:
    """Per-version matured-prediction MSE plus retrain markers."""
    fig, ax = plt.subplots(figsize=(6, 4))
    versions = [vs.version for vs in report.version_stats]
    mses = [vs.mse for vs in report.version_stats]
    if versions:
        ax.bar([str(v) for v in versions], mses, color="#2a6f97")
    ax.set_xlabel("model version")
    ax.set_ylabel("matured-prediction MSE ($\\Omega^2$)")
    ax.set_title(f"retrains={report.retrain_count}", fontsize=9)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
