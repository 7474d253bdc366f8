"""Figure rendering to files, tuned for reproducible artifacts.

All plots go straight to disk through the Agg backend.  SVG output is kept
byte-stable: the embedded creation date is dropped and the id hash salt is
pinned, so re-running a figure with the same inputs rewrites the same
bytes.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

matplotlib.rcParams["svg.hashsalt"] = "atomlink"

__all__ = [
    "save_figure",
    "plot_trajectory",
    "plot_fidelity_curve",
    "plot_heatmap",
    "plot_scaling",
]

_POP_STYLES = (
    ("P00", "tab:gray", "$P_{00}$"),
    ("PS", "tab:blue", "$P_S$"),
    ("PT", "tab:red", "$P_T$"),
    ("P11", "tab:green", "$P_{11}$"),
)


def save_figure(fig, path: str) -> str:
    """Write a figure and release it; returns the path."""
    path = str(path)
    if path.endswith(".svg"):
        fig.savefig(path, metadata={"Date": None})
    else:
        fig.savefig(path)
    plt.close(fig)
    return path


def plot_trajectory(traj, path: str, title: str | None = None) -> str:
    """Populations of the four ground states against time."""
    fig, ax = plt.subplots(figsize=(6.4, 4.2))
    for key, color, label in _POP_STYLES:
        if key in traj.records:
            ax.plot(traj.times, traj.records[key], color=color, label=label, lw=1.4)
    if "leak" in traj.records:
        ax.plot(traj.times, traj.records["leak"], color="0.7", ls=":", label="leak", lw=1.0)
    ax.set_xlabel("time (gt)")
    ax.set_ylabel("population")
    ax.set_ylim(-0.02, 1.02)
    ax.legend(loc="center right", frameon=False)
    if title:
        ax.set_title(title)
    fig.tight_layout()
    return save_figure(fig, path)


def plot_fidelity_curve(curve, path: str, xlabel: str, dips=None, ylabel: str = "$F_S$") -> str:
    """One-axis sweep result, with optional dip markers."""
    xs = np.array([x for x, _ in curve])
    ys = np.array([y for _, y in curve])
    fig, ax = plt.subplots(figsize=(6.4, 4.2))
    ax.plot(xs, ys, "o-", color="tab:blue", ms=3.5, lw=1.2)
    if dips:
        ax.plot([d.x for d in dips], [d.fidelity for d in dips], "v", color="tab:red", ms=8, label="dips")
        ax.legend(frameon=False)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    fig.tight_layout()
    return save_figure(fig, path)


def plot_heatmap(table, path: str, which: str = "F_S", title: str | None = None) -> str:
    """Two-axis sweep as a labeled grid image."""
    if len(table.axis_names) != 2:
        raise ValueError("heatmap needs a two-axis sweep")
    g = table.grid(which)
    xs, ys = table.axis_values[1], table.axis_values[0]
    fig, ax = plt.subplots(figsize=(5.6, 4.6))
    im = ax.imshow(g, origin="lower", aspect="auto", cmap="viridis")
    ax.set_xticks(range(len(xs)), [f"{v:g}" for v in xs])
    ax.set_yticks(range(len(ys)), [f"{v:g}" for v in ys])
    ax.set_xlabel(table.axis_names[1])
    ax.set_ylabel(table.axis_names[0])
    for i in range(g.shape[0]):
        for j in range(g.shape[1]):
            ax.text(j, i, f"{g[i, j]:.3f}", ha="center", va="center", fontsize=7, color="w")
    fig.colorbar(im, ax=ax, label=which.replace("F_", "$F_") + "$")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    return save_figure(fig, path)


def plot_scaling(studies, path: str) -> str:
    """Infidelity against cooperativity with the fitted 1/C lines."""
    fig, ax = plt.subplots(figsize=(5.8, 4.4))
    colors = {"S": "tab:blue", "T": "tab:red"}
    for st in studies:
        cs = np.array([pt.c for pt in st.points])
        infs = np.array([pt.infidelity for pt in st.points])
        col = colors.get(st.target, "tab:gray")
        ax.loglog(cs, infs, "o", color=col, label=f"target {st.target}")
        grid = np.geomspace(cs.min(), cs.max(), 64)
        ax.loglog(grid, st.fit.slope / grid, "--", color=col, lw=1.0,
                  label=f"{st.fit.slope:.1f}/C")
    ax.set_xlabel("cooperativity C")
    ax.set_ylabel("$1 - F$")
    ax.legend(frameon=False)
    fig.tight_layout()
    return save_figure(fig, path)
