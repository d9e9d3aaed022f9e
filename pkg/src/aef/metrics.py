"""Metrics and reporting: insertion loss, RMSE across scenario groups, reward
statistics, and report/chart emission.

Sign conventions, both of which appear in EMC practice, are kept explicit:
``insertion_loss_db`` is positive for attenuation (the ratio definition),
while report outputs negate it ("negative_is_attenuation") so attenuation
plots downward; ``report.json`` carries a ``sign_convention`` field naming
the one in use.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass
from xml.sax.saxutils import escape

import numpy as np

from .circuit import FrequencyGrid
from .signal import Spectrum

SIGN_CONVENTION = "negative_is_attenuation"


@dataclass(frozen=True)
class InsertionLossSeries:
    """Required vs achieved insertion loss (positive-attenuation dB) on a grid."""

    grid: FrequencyGrid
    required: np.ndarray
    achieved: np.ndarray

    def __post_init__(self) -> None:
        req = np.asarray(self.required, dtype=np.float64)
        ach = np.asarray(self.achieved, dtype=np.float64)
        if req.shape != ach.shape or req.shape != (len(self.grid),):
            raise ValueError("required/achieved must match the grid length")
        object.__setattr__(self, "required", req)
        object.__setattr__(self, "achieved", ach)


@dataclass(frozen=True)
class MetricReport:
    dataset: str
    insertion_loss_rmse: float
    avg_low_freq_insertion_loss: float
    cum_reward_mean: float
    cum_reward_std: float
    runtime_per_episode: float

    def __post_init__(self) -> None:
        if self.insertion_loss_rmse < 0 or self.cum_reward_std < 0:
            raise ValueError("rmse and std must be non-negative")


def insertion_loss_db(i_original: float, i_filtered: float) -> float:
    """20*log10(original/filtered); positive means the filter attenuated."""
    if i_original <= 0 or i_filtered <= 0:
        raise ValueError("intensities must be positive")
    return 20.0 * math.log10(i_original / i_filtered)


def rmse(groups: list[InsertionLossSeries]) -> float:
    """Root mean squared required-vs-achieved error pooled over all groups.

    Equals sqrt((1/(Ng*Np)) * sum of squared errors) when every group has the
    same point count Np; groups of unequal length pool by total point count.
    """
    if not groups:
        raise ValueError("need at least one series group")
    total = 0.0
    count = 0
    for g in groups:
        err = g.required - g.achieved
        total += float(np.sum(err * err))
        count += err.size
    return math.sqrt(total / count)


@dataclass(frozen=True)
class RewardStats:
    mean: float
    std: float
    runtime_per_episode_s: float

    def format(self) -> str:
        return f"{self.mean:.2f} ± {self.std:.2f}"


def reward_stats(logs: list) -> RewardStats:
    """Population mean/std of episode cumulative rewards pooled across logs."""
    if not logs:
        raise ValueError("need at least one training log")
    rewards = np.concatenate([log.episode_rewards() for log in logs])
    if rewards.size == 0:
        raise ValueError("logs contain no episodes")
    wall = np.concatenate([[e.wall_ms for e in log.episodes] for log in logs])
    return RewardStats(float(rewards.mean()), float(rewards.std()), float(wall.mean()) / 1e3)


def required_insertion_loss(spectrum: Spectrum, limit: float) -> np.ndarray:
    """Attenuation (dB, never negative) needed to bring each bin to the limit."""
    if not math.isfinite(limit):
        raise ValueError("limit must be finite")
    return np.maximum(spectrum.magnitudes_dbua() - limit, 0.0)


def _polyline(xs, ys, x0, y0, w, h, color: str) -> str:
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    x_lo, x_hi = float(xs.min()), float(xs.max())
    y_lo, y_hi = float(ys.min()), float(ys.max())
    x_span = x_hi - x_lo or 1.0
    y_span = y_hi - y_lo or 1.0
    pts = " ".join(
        f"{x0 + (x - x_lo) / x_span * w:.2f},{y0 + h - (y - y_lo) / y_span * h:.2f}"
        for x, y in zip(xs, ys)
    )
    return f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{pts}"/>'


_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b")


def _svg_chart(path, titled_series: list[tuple[str, np.ndarray, np.ndarray]]) -> None:
    """Static SVG line chart: one polyline per series, no scripting."""
    width, height = 640, 360
    margin = 50
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<rect x="{margin}" y="{margin}" width="{width - 2 * margin}" '
        f'height="{height - 2 * margin}" fill="none" stroke="#888"/>',
    ]
    for i, (label, xs, ys) in enumerate(titled_series):
        color = _COLORS[i % len(_COLORS)]
        parts.append(_polyline(xs, ys, margin, margin, width - 2 * margin,
                               height - 2 * margin, color))
        parts.append(
            f'<text x="{margin + 8}" y="{margin + 16 + 14 * i}" font-size="11" '
            f'fill="{color}">{escape(label)}</text>'
        )
    parts.append("</svg>")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(parts) + "\n")


def emit_report(
    report: MetricReport,
    series: list[InsertionLossSeries],
    out_dir,
    episode_rewards: list[float] | None = None,
) -> list[str]:
    """Write report.json plus CSVs and a chart for whatever data is present.

    Returns the list of paths written. CSV floats use repr so they re-parse
    bit-exactly.
    """
    os.makedirs(out_dir, exist_ok=True)
    written = []

    report_path = os.path.join(out_dir, "report.json")
    payload = {
        "dataset": report.dataset,
        "rmse_db": report.insertion_loss_rmse,
        "avg_low_freq_il_db": report.avg_low_freq_insertion_loss,
        "cum_reward_mean": report.cum_reward_mean,
        "cum_reward_std": report.cum_reward_std,
        "runtime_per_episode_s": report.runtime_per_episode,
        "sign_convention": SIGN_CONVENTION,
    }
    try:
        with open(report_path, "w", encoding="utf-8", newline="\n") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")
    except OSError as exc:
        raise OSError(f"failed writing {report_path}: {exc}") from exc
    written.append(report_path)

    chart_series: list[tuple[str, np.ndarray, np.ndarray]] = []
    if series:
        il_path = os.path.join(out_dir, "insertion_loss.csv")
        with open(il_path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("group,freq_hz,required_db,achieved_db\n")
            for gi, g in enumerate(series):
                for f, req, ach in zip(g.grid.points, g.required, g.achieved):
                    fh.write(f"{gi},{f!r},{req!r},{ach!r}\n")
        written.append(il_path)
        first = series[0]
        freqs = first.grid.as_array()
        chart_series.append(("required IL (dB)", freqs, first.required))
        chart_series.append(("achieved IL (dB)", freqs, first.achieved))

    if episode_rewards:
        rw_path = os.path.join(out_dir, "rewards.csv")
        with open(rw_path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("episode,cum_reward\n")
            for i, r in enumerate(episode_rewards, start=1):
                fh.write(f"{i},{r!r}\n")
        written.append(rw_path)
        chart_series.append(
            ("cumulative reward", np.arange(1, len(episode_rewards) + 1),
             np.asarray(episode_rewards, dtype=np.float64))
        )

    if chart_series:
        svg_path = os.path.join(out_dir, "curves.svg")
        _svg_chart(svg_path, chart_series)
        written.append(svg_path)
    return written
