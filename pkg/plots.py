"""
Static figures from the exported CSVs: the empirical potential of one
window, the diffusion ratio, the b*-d relation with its fitted line and
the per-d potentials of a sweep.
"""

from __future__ import annotations

import logging
from pathlib import Path
from typing import Mapping, Optional, Union

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np
import pandas as pd
import seaborn as sns

logger = logging.getLogger(__name__)


def _save(fig, path: Union[str, Path]) -> Path:
    path = Path(path)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    logger.info("wrote figure %s", path)
    return path


def plot_potential_curve(curve: pd.DataFrame, path: Union[str, Path]) -> Path:
    """(M-1)U against the displacement x = P - P_M; empty bins are left out."""
    sns.set_theme(style="whitegrid")
    populated = curve.dropna(subset=["u_of_x"])
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.plot(populated["x"], populated["u_of_x"], marker="o", color="navy")
    ax.axvline(0.0, color="grey", linestyle="dotted", linewidth=1)
    ax.set_xlabel("P(u) - P_M(u)")
    ax.set_ylabel("(M-1) U")
    ax.set_title("Empirical potential")
    return _save(fig, path)


def plot_diffusion(diffusion: pd.DataFrame, path: Union[str, Path]) -> Path:
    """variance(lag) / (lag * variance(1)); a random walk stays on 1."""
    sns.set_theme(style="whitegrid")
    ratio = diffusion["variance"] / (diffusion["lag"] * diffusion["variance"].iloc[0])
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.plot(diffusion["lag"], ratio, color="darkgreen")
    ax.axhline(1.0, color="red", linestyle="dashed", linewidth=1, label="random walk")
    ax.set_xlabel("lag (ticks)")
    ax.set_ylabel("variance / (lag x variance(1))")
    ax.legend()
    return _save(fig, path)


def plot_sweep(sweep: pd.DataFrame, fit: Optional[pd.DataFrame], path: Union[str, Path]) -> Path:
    """b* for every d of a sweep, with the fitted line when there is one."""
    sns.set_theme(style="whitegrid")
    ok = sweep[sweep["status"] == "ok"]
    fig, ax = plt.subplots(figsize=(5, 4))
    sns.scatterplot(data=ok, x="d", y="b_star", ax=ax, color="black", s=40)

    if fit is not None and not fit.empty:
        intercept, slope = float(fit["intercept"].iloc[0]), float(fit["slope"].iloc[0])
        grid = np.linspace(ok["d"].min(), ok["d"].max(), 50)
        ax.plot(grid, intercept + slope * grid, color="red", linestyle="dashed",
                label=f"b* = {intercept:.2f} {slope:+.2f} d")
        ax.legend()

    ax.axhline(0.0, color="grey", linewidth=0.8)
    ax.set_xlabel("foreseeing parameter d")
    ax.set_ylabel("b*")
    return _save(fig, path)


def plot_curves_by_d(curves: Mapping[float, pd.DataFrame], path: Union[str, Path]) -> Path:
    """First-window potential of every d in a sweep, contrarians in blue and followers in red."""
    sns.set_theme(style="whitegrid")
    ordered = sorted(curves.items())
    palette = sns.color_palette("coolwarm", len(ordered))
    fig, ax = plt.subplots(figsize=(6, 4))
    for (d, curve), color in zip(ordered, palette):
        populated = curve.dropna(subset=["u_of_x"])
        ax.plot(populated["x"], populated["u_of_x"], marker=".", color=color, label=f"d = {d:g}")
    ax.axvline(0.0, color="grey", linestyle="dotted", linewidth=1)
    ax.set_xlabel("P(u) - P_M(u)")
    ax.set_ylabel("(M-1) U")
    ax.legend(fontsize="small")
    return _save(fig, path)
