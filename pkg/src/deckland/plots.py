"""Figure data series and matplotlib renderings for episode and Monte Carlo results."""

from __future__ import annotations

import csv
import math
from pathlib import Path

import numpy as np

from .harness import METRICS, EpisodeLog, TouchdownReport, fit_normal
from .sea import UsvDeckState, deck_frame_offset

HIST_METRICS = ("position_dev", "vertical_impact_vel", "horizontal_vel_dev", "roll_dev", "pitch_dev", "yaw_dev")
UNITS = {
    "position_dev": "m",
    "vertical_impact_vel": "m/s",
    "horizontal_vel_dev": "m/s",
    "roll_dev": "deg",
    "pitch_dev": "deg",
    "yaw_dev": "deg",
    "landing_duration": "s",
    "total_time": "s",
}
TIMELINE_COLUMNS = ("t", "state", "uav_x", "uav_y", "uav_z", "deck_x", "deck_y", "deck_z", "uav_roll", "deck_roll",
                    "uav_pitch", "deck_pitch", "uav_vz", "deck_vz", "ref_z", "horizontal_dist")


# ------------------------------------------------------------------ series


def touchdown_scatter(logs) -> list[dict]:
    """Touchdown point in deck axes (forward, left) for every log that reached the deck or ended."""
    rows = []
    for log in logs:
        snap = log.contact if log.contact is not None else log.final
        if snap is None:
            continue
        deck = np.asarray(snap.deck)
        off = deck_frame_offset(UsvDeckState(deck[:6], deck[6:12], np.zeros(0)), np.asarray(snap.uav)[0:2])
        success = log.report.success if log.report is not None else log.contact is not None
        rows.append({"seed": log.seed, "forward": float(off[0]), "left": float(off[1]), "success": bool(success)})
    return rows


def deviation_histogram(reports, metric: str, bins: int = 15) -> list[dict]:
    """Histogram of one metric over successful episodes, with the fitted normal density per bin."""
    vals = np.array([getattr(r, metric) for r in reports if r.success], dtype=float)
    if vals.size == 0:
        return []
    counts, edges = np.histogram(vals, bins=bins)
    mu, sigma = fit_normal(vals)
    centres = 0.5 * (edges[:-1] + edges[1:])
    if sigma > 0:
        pdf = np.exp(-0.5 * ((centres - mu) / sigma) ** 2) / (sigma * math.sqrt(2 * math.pi))
    else:
        pdf = np.zeros_like(centres)
    width = edges[1] - edges[0]
    return [{"left": float(a), "right": float(b), "count": int(c), "density": float(c / (vals.size * width)),
             "normal_pdf": float(p)} for a, b, c, p in zip(edges[:-1], edges[1:], counts, pdf)]


def timeline(log: EpisodeLog) -> list[dict]:
    """Per-sample UAV and deck traces of one episode."""
    rows = []
    for t, u, d, s, ref in zip(log.t, log.uav, log.deck, log.state, log.reference):
        rows.append({
            "t": t, "state": s,
            "uav_x": u[0], "uav_y": u[1], "uav_z": u[2],
            "deck_x": d[0], "deck_y": d[1], "deck_z": d[2],
            "uav_roll": math.degrees(u[3]), "deck_roll": math.degrees(d[3]),
            "uav_pitch": math.degrees(u[4]), "deck_pitch": math.degrees(d[4]),
            "uav_vz": u[8], "deck_vz": d[8],
            "ref_z": ref[2] if len(ref) > 2 else float("nan"),
            "horizontal_dist": math.hypot(u[0] - d[0], u[1] - d[1]),
        })
    return rows


def _write_rows(rows, path, columns=None) -> Path:
    path = Path(path)
    columns = columns or (tuple(rows[0].keys()) if rows else ())
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=columns)
        w.writeheader()
        w.writerows(rows)
    return path


def write_plot_data(reports, logs, out_dir) -> list[Path]:
    """Write one CSV per figure: touchdown scatter, a histogram per metric, a timeline per log."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    if logs:
        written.append(_write_rows(touchdown_scatter(logs), out / "touchdown_scatter.csv",
                                   ("seed", "forward", "left", "success")))
        for log in logs:
            if log.t:
                written.append(_write_rows(timeline(log), out / f"timeline_{log.seed}.csv", TIMELINE_COLUMNS))
    for m in HIST_METRICS:
        written.append(_write_rows(deviation_histogram(reports, m), out / f"hist_{m}.csv",
                                   ("left", "right", "count", "density", "normal_pdf")))
    return written


# ------------------------------------------------------------------ figures


def _pyplot():
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    return plt


def render_figures(reports: list[TouchdownReport], logs: list[EpisodeLog], out_dir,
                   deck_size=(2.5, 1.7)) -> list[Path]:
    """Render PNG figures next to the tabular outputs and return their paths."""
    plt = _pyplot()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    if logs:
        pts = touchdown_scatter(logs)
        fig, ax = plt.subplots(figsize=(5, 4))
        L, W = deck_size
        ax.add_patch(plt.Rectangle((-L / 2, -W / 2), L, W, fill=False, color="k", lw=1))
        for ok, colour, label in ((True, "tab:blue", "landed"), (False, "tab:red", "failed")):
            sel = [p for p in pts if p["success"] == ok]
            if sel:
                ax.scatter([p["forward"] for p in sel], [p["left"] for p in sel], s=12, c=colour, label=label)
        ax.set_xlabel("forward offset [m]")
        ax.set_ylabel("left offset [m]")
        ax.set_aspect("equal")
        ax.legend(loc="upper right", fontsize=8)
        ax.set_title("touchdown points in deck axes")
        written.append(_save(fig, out / "touchdown_scatter.png", plt))

        for log in logs:
            if log.t:
                written.append(_timeline_figure(log, out / f"timeline_{log.seed}.png", plt))

    landed = [r for r in reports if r.success]
    if landed:
        fig, axes = plt.subplots(2, 3, figsize=(11, 6))
        for ax, m in zip(axes.ravel(), HIST_METRICS):
            rows = deviation_histogram(reports, m)
            lefts = np.array([r["left"] for r in rows])
            widths = np.array([r["right"] - r["left"] for r in rows])
            ax.bar(lefts, [r["density"] for r in rows], width=widths, align="edge", alpha=0.6)
            ax.plot(lefts + widths / 2, [r["normal_pdf"] for r in rows], "k-", lw=1)
            ax.set_xlabel(f"{m} [{UNITS[m]}]")
        axes[0, 0].set_ylabel("density")
        axes[1, 0].set_ylabel("density")
        fig.suptitle(f"touchdown deviations over {len(landed)} landings")
        fig.tight_layout()
        written.append(_save(fig, out / "deviation_histograms.png", plt))
    return written


def _timeline_figure(log: EpisodeLog, path, plt) -> Path:
    rows = timeline(log)
    t = np.array([r["t"] for r in rows])
    col = lambda k: np.array([r[k] for r in rows])
    fig, axes = plt.subplots(3, 1, figsize=(8, 7), sharex=True)
    axes[0].plot(t, col("uav_z"), label="UAV")
    axes[0].plot(t, col("deck_z"), label="deck")
    axes[0].set_ylabel("z [m]")
    axes[0].legend(fontsize=8)
    axes[1].plot(t, col("uav_roll"), label="UAV roll")
    axes[1].plot(t, col("deck_roll"), label="deck roll")
    axes[1].plot(t, col("uav_pitch"), "--", label="UAV pitch")
    axes[1].plot(t, col("deck_pitch"), "--", label="deck pitch")
    axes[1].set_ylabel("angle [deg]")
    axes[1].legend(fontsize=8, ncol=2)
    axes[2].semilogy(t, np.maximum(col("horizontal_dist"), 1e-3))
    axes[2].set_ylabel("horizontal distance [m]")
    axes[2].set_xlabel("t [s]")
    for ev in log.events:
        for ax in axes:
            ax.axvline(ev["t"], color="0.7", lw=0.6)
    fig.suptitle(f"episode {log.seed}")
    fig.tight_layout()
    return _save(fig, path, plt)


def _save(fig, path, plt) -> Path:
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return Path(path)


def summary_lines(stats) -> list[str]:
    lines = [f"episodes {stats.n_episodes}  success {stats.success_rate:.3f}  touchdown {stats.touchdown_rate:.3f}"]
    for k in METRICS:
        v = stats.metrics.get(k)
        if v is not None:
            lines.append(f"{k:20s} mu {v[0]: .4f}  sigma {v[1]:.4f} {UNITS[k]}")
    for k, v in stats.fractions.items():
        lines.append(f"{k:20s} {v:.3f}")
    return lines
