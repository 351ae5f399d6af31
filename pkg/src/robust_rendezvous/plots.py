"""PNG figures written next to the CSV artifacts (non-interactive backend)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from robust_rendezvous.propagation import ControlTrajectory, StateTrajectory  # noqa: E402

plt.rcParams.update({
    "figure.figsize": (6.4, 3.6),
    "axes.grid": True,
    "grid.alpha": 0.3,
    "font.size": 9,
    "savefig.dpi": 120,
})


def _save(fig, path: Path) -> Path:
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def control_profile(u: ControlTrajectory, x: StateTrajectory, path: Path,
                    reference: ControlTrajectory | None = None) -> Path:
    """Thrust magnitude (stairs) and mass along the mission."""
    t = u.grid.nodes
    fig, (ax1, ax2) = plt.subplots(2, 1, sharex=True, figsize=(6.4, 4.8))
    ax1.stairs(u.norms(), t, color="C0", label="|u|")
    if reference is not None:
        ax1.stairs(reference.norms(), t, color="0.5", ls="--", label="reference")
        ax1.legend(loc="center left", frameon=False)
    ax1.set_ylabel("thrust fraction")
    ax1.set_ylim(-0.05, 1.05)
    ax2.plot(t, x.states[:, 6], color="C1")
    ax2.set_ylabel("mass")
    ax2.set_xlabel("time")
    return _save(fig, path)


def deterministic_convergence(history: list, path: Path) -> Path:
    it = np.array([h[0] for h in history])
    dev = np.array([h[1] for h in history])
    cons = np.array([h[2] for h in history])
    fig, ax = plt.subplots()
    ax.semilogy(it, np.maximum(dev, 1e-16), color="C0")
    ax.set_xlabel("iteration")
    ax.set_ylabel("|C(x(t_f))|", color="C0")
    ax2 = ax.twinx()
    ax2.plot(it, cons, color="C1")
    ax2.set_ylabel("consumption", color="C1")
    ax2.grid(False)
    return _save(fig, path)


def multiplier_trace(mu: np.ndarray, consumption: np.ndarray, path: Path) -> Path:
    k = np.arange(1, len(mu) + 1)
    fig, (ax1, ax2) = plt.subplots(2, 1, sharex=True, figsize=(6.4, 4.8))
    ax1.plot(k, mu, lw=0.8)
    ax1.set_ylabel("mu")
    ax2.plot(k, consumption, lw=0.8, color="C1")
    ax2.set_ylabel("consumption")
    ax2.set_xlabel("iteration")
    return _save(fig, path)


def sweep(p: np.ndarray, mu: np.ndarray, consumption: np.ndarray, path: Path) -> Path:
    order = np.argsort(p)
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(8.0, 3.2))
    ax1.plot(p[order], mu[order], "o-")
    ax1.set_xlabel("probability level p")
    ax1.set_ylabel("final mu")
    ax2.plot(p[order], consumption[order], "o-", color="C1")
    ax2.set_xlabel("probability level p")
    ax2.set_ylabel("consumption")
    return _save(fig, path)


def failure_histogram(t_p: np.ndarray, t_d: np.ndarray, path: Path) -> Path:
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(8.0, 3.2))
    ax1.hist(t_p, bins=40, color="C0")
    ax1.set_xlabel("onset t_p")
    ax2.hist(t_d, bins=40, color="C1")
    ax2.set_xlabel("duration t_d")
    return _save(fig, path)
