"""SVG figures for one run: path, cross-track error, heading and speed."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .simulation import SimLog  # noqa: E402

# fixed salt and no date stamp keep the SVG bytes stable between runs
_SVG_RC = {"svg.hashsalt": "gpsids", "svg.fonttype": "none"}
_META = {"Date": None, "Creator": "gpsids"}


def _shade(ax, log: SimLog):
    if log.attack_window is not None:
        start, end = log.attack_window
        if log.truth:
            end = min(end, log.truth[-1][0])
        ax.axvspan(start, end, color="tab:red", alpha=0.12, label="attack window")


def _save(fig, path: Path) -> Path:
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata=_META)
    plt.close(fig)
    return path


def plot_run(log: SimLog, out_dir, prefix: str = "") -> list:
    """Write trajectory, e(t), psi(t) and speed figures; return their paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    truth = np.array(log.truth) if log.truth else np.zeros((0, 7))
    t = log.times
    paths = []
    with plt.rc_context(_SVG_RC):
        fig, ax = plt.subplots(figsize=(5, 5))
        ax.plot(truth[:, 1], truth[:, 2], lw=1.2, label="true path")
        if log.estimate:
            est = np.array(log.estimate)
            ax.plot(est[:, 1], est[:, 2], lw=0.8, ls="--", label="EKF estimate")
        if len(truth):
            ax.plot(truth[0, 1], truth[0, 2], "ko", ms=4, label="start")
        ax.set_xlabel("east x (m)")
        ax.set_ylabel("north y (m)")
        ax.set_aspect("equal", adjustable="datalim")
        ax.legend(loc="best", fontsize=8)
        paths.append(_save(fig, out / f"{prefix}trajectory.svg"))

        fig, ax = plt.subplots(figsize=(7, 3))
        ax.plot(t, log.column("e") if log.rows else [], lw=1)
        _shade(ax, log)
        ax.set_xlabel("time (s)")
        ax.set_ylabel("cross-track error e (m)")
        paths.append(_save(fig, out / f"{prefix}cross_track.svg"))

        fig, ax = plt.subplots(figsize=(7, 3))
        if len(truth):
            ax.plot(truth[:, 0], np.unwrap(truth[:, 3]), lw=1, label="true yaw")
        _shade(ax, log)
        ax.set_xlabel("time (s)")
        ax.set_ylabel("yaw psi, unwrapped (rad)")
        ax.legend(loc="best", fontsize=8)
        paths.append(_save(fig, out / f"{prefix}yaw.svg"))

        fig, ax = plt.subplots(figsize=(7, 3))
        if len(truth):
            ax.plot(truth[:, 0], truth[:, 4], lw=1)
        _shade(ax, log)
        ax.set_xlabel("time (s)")
        ax.set_ylabel("speed vx (m/s)")
        paths.append(_save(fig, out / f"{prefix}speed.svg"))
    return paths
