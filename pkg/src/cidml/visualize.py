from __future__ import annotations

import logging
from pathlib import Path
from typing import Any

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402
import seaborn as sns  # noqa: E402

log = logging.getLogger(__name__)

PALETTE = {
    "treated": "#F4A3B4",  # soft pink
    "control": "#86D7D0",  # soft teal
    "dml": "#B6A6FF",  # soft purple
    "po": "#FBBF24",  # amber
    "truth": "#F87171",  # soft red
    "text": "#1C1C1E",
    "muted": "#6B7280",
    "grid": "#D1D5DB",
}


def _minimal_axes(ax) -> None:
    ax.set_facecolor("white")
    ax.spines["top"].set_visible(False)
    ax.spines["right"].set_visible(False)
    ax.tick_params(length=0)
    ax.grid(axis="y", linestyle="--", alpha=0.2, color=PALETTE["grid"], zorder=0)
    ax.set_axisbelow(True)


def _title(ax, text: str) -> None:
    ax.set_title(text, fontsize=13, fontweight="bold", color=PALETTE["text"], loc="left")


def _save(fig: plt.Figure, output: Path, dpi: int) -> Path:
    output = Path(output).expanduser()
    output.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(output, dpi=dpi, bbox_inches="tight", facecolor="white")
    plt.close(fig)
    return output


def plot_propensity_overlap(
    *, e_hat: np.ndarray, treatment: np.ndarray, output: Path, bins: int = 50, dpi: int = 150
) -> Path:
    """Control histogram on top, treated below, shared x axis on [0, 1]."""
    sns.set_theme(style="whitegrid")
    d = np.asarray(treatment).astype(bool)
    fig, (ax_c, ax_t) = plt.subplots(2, 1, figsize=(9, 6), sharex=True, layout="constrained")
    edges = np.linspace(0.0, 1.0, bins + 1)
    for ax, mask, key in ((ax_c, ~d, "control"), (ax_t, d, "treated")):
        _minimal_axes(ax)
        ax.hist(np.asarray(e_hat)[mask], bins=edges, color=PALETTE[key], edgecolor="white")
        ax.set_ylabel(f"{key} (n={int(mask.sum()):,})", color=PALETTE["muted"])
    _title(ax_c, "Propensity score overlap")
    ax_t.set_xlabel("cross-fitted propensity")
    return _save(fig, output, dpi)


def plot_trimming_comparison(
    *, estimates: dict[str, dict[str, Any]], output: Path, truth: float | None = None, dpi: int = 150
) -> Path:
    """Point estimates with both interval flavors, one row per weighting variant."""
    sns.set_theme(style="whitegrid")
    labels = list(estimates)
    fig, ax = plt.subplots(figsize=(8, 1.2 + 0.9 * len(labels)), layout="constrained")
    _minimal_axes(ax)
    for i, label in enumerate(labels):
        est = estimates[label]
        lo, hi = est["ci_hc"]
        ax.plot([lo, hi], [i, i], color=PALETTE["dml"], linewidth=6, solid_capstyle="round")
        lo_h, hi_h = est["ci_homo"]
        ax.plot([lo_h, hi_h], [i - 0.18, i - 0.18], color=PALETTE["muted"], linewidth=2)
        ax.plot(est["beta"], i, "o", color=PALETTE["text"])
    if truth is not None:
        ax.axvline(truth, color=PALETTE["truth"], linestyle="--", label="truth")
        ax.legend(frameon=False)
    ax.set_yticks(range(len(labels)), labels)
    ax.set_xlabel("ATT (HC interval thick, homoscedastic thin)")
    _title(ax, "Effect of rescaling, common support and trimming")
    return _save(fig, output, dpi)


def plot_explained_variance(
    *, curve: pd.DataFrame, output: Path, target: float | None = None, n_kept: int | None = None, dpi: int = 150
) -> Path:
    sns.set_theme(style="whitegrid")
    fig, ax = plt.subplots(figsize=(8, 4.5), layout="constrained")
    _minimal_axes(ax)
    sns.lineplot(data=curve, x="component", y="cumulative", marker="o", color=PALETTE["dml"], ax=ax)
    ax.bar(curve["component"], curve["explained_variance_ratio"], color=PALETTE["control"], alpha=0.6)
    if target is not None:
        ax.axhline(target, color=PALETTE["truth"], linestyle="--", linewidth=1)
    if n_kept is not None:
        ax.axvline(n_kept, color=PALETTE["muted"], linestyle=":", linewidth=1)
    ax.set_ylim(0, 1.05)
    ax.set_xlabel("principal component")
    ax.set_ylabel("explained variance")
    _title(ax, "Explained variance by component")
    return _save(fig, output, dpi)


def plot_htt_histogram(
    *, h: np.ndarray, output: Path, att: float | None = None, bins: int = 30, dpi: int = 150
) -> Path:
    sns.set_theme(style="whitegrid")
    fig, ax = plt.subplots(figsize=(8, 4.5), layout="constrained")
    _minimal_axes(ax)
    sns.histplot(x=np.asarray(h), bins=bins, color=PALETTE["treated"], edgecolor="white", ax=ax)
    if att is not None:
        ax.axvline(att, color=PALETTE["text"], linestyle="--", linewidth=1.2, label=f"ATT = {att:,.3f}")
        ax.legend(frameon=False)
    ax.set_xlabel("customer-level effect h")
    ax.set_ylabel("customers")
    _title(ax, "Distribution of customer-level effects")
    return _save(fig, output, dpi)


def plot_placebo_study(*, aggregates: dict[str, Any], output: Path, dpi: int = 150) -> Path:
    """Mean absolute placebo error per estimator with 2 x MCSE whiskers."""
    sns.set_theme(style="whitegrid")
    stats = aggregates["estimators"]
    names = list(stats)
    means = [stats[n]["mean_abs_placebo_error"] or 0.0 for n in names]
    errs = [2.0 * (stats[n]["mcse_abs_placebo_error"] or 0.0) for n in names]
    fig, ax = plt.subplots(figsize=(6, 4.5), layout="constrained")
    _minimal_axes(ax)
    ax.bar(
        names,
        means,
        yerr=errs,
        capsize=6,
        color=[PALETTE.get(n, PALETTE["muted"]) for n in names],
        edgecolor="white",
    )
    for i, v in enumerate(means):
        ax.text(i, v, f"{v:,.3f}", ha="center", va="bottom", color=PALETTE["text"])
    ax.set_ylabel("mean |placebo estimate|")
    _title(ax, "Placebo error by estimator")
    return _save(fig, output, dpi)


def plot_width_comparison(*, records: pd.DataFrame, output: Path, dpi: int = 150) -> Path | None:
    """Scaled interval widths per replication, DML against bootstrap PO.

    Returns None without drawing when no replication produced both widths.
    """
    columns = ["dml_scaled_width", "po_scaled_width"]
    if not set(columns) <= set(records.columns):
        log.warning("no replication has both scaled widths; skipping %s", output)
        return None
    sns.set_theme(style="whitegrid")
    df = records.dropna(subset=columns)
    fig, ax = plt.subplots(figsize=(6, 6), layout="constrained")
    ax.set_facecolor("white")
    ax.grid(axis="both", linestyle="--", alpha=0.2, color=PALETTE["grid"])
    ax.scatter(df["po_scaled_width"], df["dml_scaled_width"], color=PALETTE["dml"], alpha=0.8)
    if not df.empty:
        top = float(max(df["po_scaled_width"].max(), df["dml_scaled_width"].max())) * 1.05
        ax.plot([0, top], [0, top], color=PALETTE["muted"], linestyle="--", linewidth=1)
        ax.set_xlim(0, top)
        ax.set_ylim(0, top)
    ax.set_xlabel("PO bootstrap CI width / |PO estimate|")
    ax.set_ylabel("DML HC CI width / |PO estimate|")
    _title(ax, "Confidence interval width comparison")
    return _save(fig, output, dpi)
