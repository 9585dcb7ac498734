"""Writers for simulation output: CSV time series, metrics JSON, SVG plots."""

from __future__ import annotations

import csv
import fnmatch
import io
import json
import re
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .model import Metrics, SimulationResult

DEFAULT_PLOTS = ("system.f_avg_fcrd_hz", "hub.f_hz")


def select_channels(result: SimulationResult, patterns: Optional[Sequence[str]]) -> List[str]:
    """Channel names matching any glob in ``patterns`` (all when None), in record order."""
    names = list(result.channels)
    if not patterns:
        return names
    out = [n for n in names if any(fnmatch.fnmatchcase(n, p) for p in patterns)]
    missing = [p for p in patterns if not any(fnmatch.fnmatchcase(n, p) for n in names)]
    if missing:
        raise KeyError(f"no channel matches {missing}")
    return out


def _fmt(x: float) -> str:
    return format(float(x), ".12g")


def timeseries_csv(result: SimulationResult, channels: Optional[Sequence[str]] = None) -> str:
    names = select_channels(result, channels)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["t_s", *names])
    cols = [result.t] + [result.channels[n] for n in names]
    for row in zip(*cols):
        writer.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def metrics_json(metrics: Metrics) -> str:
    return json.dumps(metrics.to_dict(), indent=2) + "\n"


def read_metrics(path) -> Metrics:
    return Metrics.from_dict(json.loads(Path(path).read_text()))


def read_timeseries(path) -> Tuple[np.ndarray, Dict[str, np.ndarray]]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], np.array(rows[1:], dtype=float).reshape(len(rows) - 1, len(rows[0]))
    return body[:, 0], {name: body[:, k] for k, name in enumerate(header) if k > 0}


def _ticks(lo: float, hi: float, n: int = 5) -> np.ndarray:
    if hi <= lo:
        return np.array([lo])
    raw = (hi - lo) / n
    mag = 10 ** np.floor(np.log10(raw))
    step = min((m * mag for m in (1, 2, 2.5, 5, 10) if m * mag >= raw), default=10 * mag)
    start = np.ceil(lo / step) * step
    return np.arange(start, hi + step * 1e-9, step)


def svg_plot(t: np.ndarray, y: np.ndarray, title: str, width: int = 640,
             height: int = 360) -> str:
    """Deterministic single-series line plot as an SVG document."""
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    left, right, top, bottom = 70, 20, 30, 45
    pw, ph = width - left - right, height - top - bottom
    t0, t1 = float(t[0]), float(t[-1]) if t[-1] > t[0] else float(t[0]) + 1.0
    y0, y1 = float(np.min(y)), float(np.max(y))
    if y1 - y0 < 1e-9 * max(1.0, abs(y0)):
        y0, y1 = y0 - 0.5, y1 + 0.5
    pad = 0.05 * (y1 - y0)
    y0, y1 = y0 - pad, y1 + pad

    def sx(v):
        return left + (v - t0) / (t1 - t0) * pw

    def sy(v):
        return top + (y1 - v) / (y1 - y0) * ph

    step = max(1, len(t) // 2000)
    pts = " ".join(f"{sx(a):.2f},{sy(b):.2f}" for a, b in zip(t[::step], y[::step]))
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}">',
           '<rect width="100%" height="100%" fill="white"/>',
           f'<text x="{width / 2:.1f}" y="18" text-anchor="middle" font-family="sans-serif" '
           f'font-size="13">{_escape(title)}</text>',
           f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>']
    for v in _ticks(t0, t1):
        x = sx(v)
        out.append(f'<line x1="{x:.2f}" y1="{top + ph}" x2="{x:.2f}" y2="{top + ph + 4}" '
                   f'stroke="black"/>')
        out.append(f'<text x="{x:.2f}" y="{top + ph + 16}" text-anchor="middle" '
                   f'font-family="sans-serif" font-size="10">{v:g}</text>')
    for v in _ticks(y0, y1):
        yy = sy(v)
        out.append(f'<line x1="{left - 4}" y1="{yy:.2f}" x2="{left}" y2="{yy:.2f}" '
                   f'stroke="black"/>')
        out.append(f'<text x="{left - 6}" y="{yy + 3:.2f}" text-anchor="end" '
                   f'font-family="sans-serif" font-size="10">{v:.6g}</text>')
    out.append(f'<text x="{left + pw / 2:.1f}" y="{height - 8}" text-anchor="middle" '
               f'font-family="sans-serif" font-size="11">t (s)</text>')
    out.append(f'<polyline fill="none" stroke="#1f4e9c" stroke-width="1.2" points="{pts}"/>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _escape(text: str) -> str:
    return text.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def _plot_name(channel: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.-]", "_", channel) + ".svg"


def write_result(result: SimulationResult, out_dir, channels: Optional[Sequence[str]] = None,
                 plots: Optional[Iterable[str]] = None, make_plots: bool = True) -> List[Path]:
    """Write ``timeseries.csv``, ``metrics.json`` and one SVG per plotted channel.

    ``channels`` limits the CSV columns (glob patterns); ``plots`` lists the
    channels to plot and defaults to the requested channels, or to the
    system and hub frequencies when none were requested.
    """
    if len(result) == 0:
        raise ValueError("cannot write an empty result")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    p = out / "timeseries.csv"
    p.write_bytes(timeseries_csv(result, channels).encode())
    written.append(p)
    if result.metrics is not None:
        p = out / "metrics.json"
        p.write_bytes(metrics_json(result.metrics).encode())
        written.append(p)
    if make_plots:
        if plots is None:
            plots = select_channels(result, channels) if channels else \
                [c for c in DEFAULT_PLOTS if c in result.channels]
        for name in plots:
            p = out / _plot_name(name)
            p.write_bytes(svg_plot(result.t, result.channels[name], name).encode())
            written.append(p)
    return written
