"""Figure rendering for the report paths of the CLI.

Figures are written to files only; nothing here opens a window.
"""

from __future__ import annotations

import math

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

GOLDEN = (math.sqrt(5) - 1.0) / 2.0

RC = {
    "font.size": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 150,
    "savefig.bbox": "tight",
}


def _figure(width=4.5, height=None, nrows=1, sharex=False):
    height = height or width * GOLDEN * (1.0 if nrows == 1 else 1.4)
    return plt.subplots(nrows, 1, figsize=(width, height), sharex=sharex)


def plot_rms(stats, summary: dict | None, path) -> None:
    """RMS deviation of <x> from the target versus time, with fitted decays."""
    with plt.rc_context(RC):
        fig, ax = _figure()
        ax.plot(stats.t, stats.rms, color="C3", lw=1.0, label=f"RMS ({stats.n_completed} traj.)")
        if summary:
            ax.axhline(summary["plateau_rms"], color="0.5", ls="--", lw=0.8,
                       label=f"plateau {summary['plateau_rms']:.2f}")
            for fit in summary.get("fits", []):
                if not fit["ok"]:
                    continue
                s = np.linspace(0.0, 15.0, 200)
                ax.plot(fit["switch_time"] + s, fit["amplitude"] * np.exp(-s / fit["tau"]) + fit["plateau"],
                        color="k", lw=0.7, ls=":")
            if math.isfinite(summary.get("tau", math.nan)):
                ax.plot([], [], color="k", lw=0.7, ls=":", label=f"fit, tau = {summary['tau']:.2f}")
        ax.set_xlabel(r"$t$ [$\tau$]")
        ax.set_ylabel(r"RMS $\langle x\rangle - x_0$ [$X_s$]")
        ax.set_xlim(stats.t[0], stats.t[-1])
        ax.set_ylim(bottom=0)
        ax.legend(frameon=False)
        fig.savefig(path)
        plt.close(fig)


def plot_trajectory(traj, targets: np.ndarray, path) -> None:
    """Target, true and estimated mean position (top) and applied force (bottom)."""
    with plt.rc_context(RC):
        fig, (ax1, ax2) = _figure(nrows=2, sharex=True)
        ax1.plot(traj.t, targets, color="C0", lw=1.0, label="target")
        ax1.plot(traj.t, traj["x_true"], color="C3", lw=0.8, label=r"true $\langle x\rangle$")
        ax1.plot(traj.t, traj["x_est"], color="m", lw=0.6, alpha=0.8, label="estimate")
        ax1.set_ylabel(r"$x$ [$X_s$]")
        ax1.legend(frameon=False, ncol=3, loc="upper center")
        ax2.plot(traj.t, traj["u"], color="k", lw=0.6)
        ax2.set_ylabel(r"$u$ [$u_s$]")
        ax2.set_xlabel(r"$t$ [$\tau$]")
        fig.savefig(path)
        plt.close(fig)


def plot_sweep(rows: list[dict], path) -> None:
    """Plateau RMS over the (k, gamma) grid."""
    ks = sorted({r["k"] for r in rows})
    gs = sorted({r["gamma"] for r in rows})
    grid = np.full((len(ks), len(gs)), np.nan)
    for r in rows:
        grid[ks.index(r["k"]), gs.index(r["gamma"])] = r["plateau_rms"]
    with plt.rc_context(RC):
        fig, ax = _figure()
        im = ax.imshow(grid, origin="lower", aspect="auto", cmap="viridis")
        ax.set_xticks(range(len(gs)), [f"{g:g}" for g in gs])
        ax.set_yticks(range(len(ks)), [f"{k:g}" for k in ks])
        ax.set_xlabel(r"$\Gamma$")
        ax.set_ylabel(r"$k$")
        for i in range(len(ks)):
            for j in range(len(gs)):
                if np.isfinite(grid[i, j]):
                    ax.text(j, i, f"{grid[i, j]:.2f}", ha="center", va="center", color="w", fontsize=7)
        fig.colorbar(im, ax=ax, label="plateau RMS")
        fig.savefig(path)
        plt.close(fig)
