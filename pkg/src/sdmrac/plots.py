"""Static figure emission, regenerated purely from the run's CSV logs.

Every function takes file paths, not in-memory objects, so deleting the
figures and re-running the plot command reproduces them bit-identically.
"""

import matplotlib
import numpy as np

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .dynamics import read_csv  # noqa: E402

plt.rcParams["svg.hashsalt"] = "sdmrac"

_SAVE_KW = {"format": "svg", "metadata": {"Date": None}}


def plot_states(trajectory_csv, out_path):
    """Roll and roll-rate against the reference trajectory."""
    header, data = read_csv(trajectory_csv)
    col = {h: i for i, h in enumerate(header)}
    t = data[:, col["t"]]
    fig, axes = plt.subplots(2, 1, sharex=True, figsize=(8, 6))
    labels = ("roll [rad]", "roll rate [rad/s]")
    for i, ax in enumerate(axes):
        ax.plot(t, data[:, col[f"x{i+1}"]], label="plant", lw=1.0)
        ax.plot(t, data[:, col[f"xm{i+1}"]], label="reference", lw=1.0,
                ls="--")
        ax.set_ylabel(labels[i])
        ax.grid(True, alpha=0.3)
    axes[0].legend(loc="upper right")
    axes[1].set_xlabel("time [s]")
    fig.suptitle("State tracking")
    fig.savefig(out_path, **_SAVE_KW)
    plt.close(fig)


def plot_uncertainty(trajectory_csv, features_csv, out_path):
    """Adaptive element vs true uncertainty, shaded by the epistemic band."""
    header, data = read_csv(trajectory_csv)
    col = {h: i for i, h in enumerate(header)}
    fheader, fdata = read_csv(features_csv)
    fcol = {h: i for i, h in enumerate(fheader)}
    t = data[:, col["t"]]
    u_ad = data[:, col["u_ad"]]
    delta = data[:, col["delta_true"]]
    band = fdata[:, fcol["band_epi"]]
    fig, ax = plt.subplots(figsize=(8, 4))
    ax.plot(t, delta, label="true uncertainty", lw=1.0)
    ax.plot(t, u_ad, label="adaptive element", lw=0.8)
    ax.fill_between(t, u_ad - 2 * band, u_ad + 2 * band, alpha=0.3,
                    label="epistemic 2-sigma band")
    ax.set_xlabel("time [s]")
    ax.set_ylabel("uncertainty estimate")
    ax.grid(True, alpha=0.3)
    ax.legend(loc="upper right")
    fig.savefig(out_path, **_SAVE_KW)
    plt.close(fig)


def plot_weights(weights_csv, out_path):
    """Evolution of every fast-weight component over the run."""
    header, data = read_csv(weights_csv)
    t = data[:, 0]
    fig, ax = plt.subplots(figsize=(8, 4))
    for j in range(1, data.shape[1]):
        ax.plot(t, data[:, j], lw=0.7)
    ax.set_xlabel("time [s]")
    ax.set_ylabel("fast weights")
    ax.grid(True, alpha=0.3)
    fig.savefig(out_path, **_SAVE_KW)
    plt.close(fig)


def plot_overlay(run_dirs, labels, out_prefix):
    """Side-by-side comparison figures for two completed run directories."""
    fig, axes = plt.subplots(2, 1, sharex=True, figsize=(8, 6))
    for d, lab in zip(run_dirs, labels):
        header, data = read_csv(f"{d}/trajectory.csv")
        col = {h: i for i, h in enumerate(header)}
        t = data[:, col["t"]]
        axes[0].plot(t, data[:, col["x1"]], lw=0.9, label=f"{lab} roll")
        axes[1].plot(t, data[:, col["e1"]], lw=0.9, label=f"{lab} error")
    header, data = read_csv(f"{run_dirs[0]}/trajectory.csv")
    col = {h: i for i, h in enumerate(header)}
    axes[0].plot(data[:, col["t"]], data[:, col["xm1"]], "k--", lw=0.8,
                 label="reference")
    for ax in axes:
        ax.grid(True, alpha=0.3)
        ax.legend(loc="upper right", fontsize=8)
    axes[1].set_xlabel("time [s]")
    fig.savefig(f"{out_prefix}_states.svg", **_SAVE_KW)
    plt.close(fig)

    fig, ax = plt.subplots(figsize=(8, 4))
    for d, lab in zip(run_dirs, labels):
        header, data = read_csv(f"{d}/trajectory.csv")
        col = {h: i for i, h in enumerate(header)}
        ax.plot(data[:, col["t"]], data[:, col["u_ad"]], lw=0.8, label=lab)
    ax.plot(data[:, col["t"]], data[:, col["delta_true"]], "k--", lw=0.8,
            label="true uncertainty")
    ax.set_xlabel("time [s]")
    ax.grid(True, alpha=0.3)
    ax.legend(loc="upper right", fontsize=8)
    fig.savefig(f"{out_prefix}_uncertainty.svg", **_SAVE_KW)
    plt.close(fig)

    fig, ax = plt.subplots(figsize=(8, 4))
    for d, lab in zip(run_dirs, labels):
        _, data = read_csv(f"{d}/weights.csv")
        norms = np.linalg.norm(data[:, 1:], axis=1)
        ax.plot(data[:, 0], norms, lw=0.9, label=f"{lab} ||W||")
    ax.set_xlabel("time [s]")
    ax.set_ylabel("fast-weight norm")
    ax.grid(True, alpha=0.3)
    ax.legend(loc="lower right", fontsize=8)
    fig.savefig(f"{out_prefix}_weights.svg", **_SAVE_KW)
    plt.close(fig)
