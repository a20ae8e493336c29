"""Self-contained SVG emission for metrics CSVs: no plotting dependencies.

One figure, two panels: training loss on a log scale and test accuracy,
one polyline per input CSV, legend from file basenames. The output is
plain text SVG so tests can parse their own artifacts back.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass

from .training import METRICS_COLUMNS

_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf")

_WIDTH, _HEIGHT = 980, 430
_PANEL_W, _PANEL_H = 390, 300
_MARGIN_LEFT, _MARGIN_TOP = 70, 60
_PANEL_GAP = 110


class MetricsCsvError(ValueError):
    """Metrics CSV is malformed; message carries path and line number."""


@dataclass
class Series:
    label: str
    epochs: list[float]
    losses: list[float]
    accuracies: list[float]


def read_metrics_csv(path) -> Series:
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise MetricsCsvError(f"{path}:1: empty file")
    header = lines[0].split(",")
    if header != list(METRICS_COLUMNS):
        raise MetricsCsvError(f"{path}:1: expected header {','.join(METRICS_COLUMNS)}")
    epochs, losses, accs = [], [], []
    for line_no, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        cells = line.split(",")
        if len(cells) != len(METRICS_COLUMNS):
            raise MetricsCsvError(f"{path}:{line_no}: expected {len(METRICS_COLUMNS)} cells, got {len(cells)}")
        try:
            epochs.append(float(cells[0]))
            losses.append(float(cells[2]))
            accs.append(float(cells[3]))
        except ValueError as exc:
            raise MetricsCsvError(f"{path}:{line_no}: {exc}") from None
    if not epochs:
        raise MetricsCsvError(f"{path}:2: no data rows")
    label = os.path.basename(str(path))
    return Series(label=label, epochs=epochs, losses=losses, accuracies=accs)


def _scale(values: list[float], lo: float, hi: float, out_lo: float, out_hi: float) -> list[float]:
    span = hi - lo
    if span == 0.0:
        return [0.5 * (out_lo + out_hi) for _ in values]
    return [out_lo + (v - lo) / span * (out_hi - out_lo) for v in values]


def _panel(series_list, values_key, x0, title, log_scale):
    all_y = []
    for s in series_list:
        for v in getattr(s, values_key):
            if log_scale:
                if v > 0 and math.isfinite(v):
                    all_y.append(math.log10(v))
            elif math.isfinite(v):
                all_y.append(v)
    if not all_y:
        all_y = [0.0]
    y_lo, y_hi = min(all_y), max(all_y)
    all_x = [e for s in series_list for e in s.epochs]
    x_lo, x_hi = min(all_x), max(all_x)

    parts = [
        f'<rect x="{x0}" y="{_MARGIN_TOP}" width="{_PANEL_W}" height="{_PANEL_H}" '
        'fill="none" stroke="#333" stroke-width="1"/>',
        f'<text x="{x0 + _PANEL_W / 2:.1f}" y="{_MARGIN_TOP - 12}" text-anchor="middle" '
        f'font-size="15">{title}</text>',
    ]
    y_labels = (
        (f"1e{y_lo:.2f}", f"1e{y_hi:.2f}") if log_scale else (f"{y_lo:.3g}", f"{y_hi:.3g}")
    )
    parts.append(
        f'<text x="{x0 - 6}" y="{_MARGIN_TOP + _PANEL_H}" text-anchor="end" font-size="11">{y_labels[0]}</text>'
    )
    parts.append(
        f'<text x="{x0 - 6}" y="{_MARGIN_TOP + 10}" text-anchor="end" font-size="11">{y_labels[1]}</text>'
    )
    parts.append(
        f'<text x="{x0}" y="{_MARGIN_TOP + _PANEL_H + 18}" font-size="11">{x_lo:g}</text>'
    )
    parts.append(
        f'<text x="{x0 + _PANEL_W}" y="{_MARGIN_TOP + _PANEL_H + 18}" text-anchor="end" font-size="11">{x_hi:g}</text>'
    )

    floor = y_lo  # out-of-domain points for the log panel clamp to the floor
    for idx, s in enumerate(series_list):
        raw = getattr(s, values_key)
        if log_scale:
            ys = [math.log10(v) if (v > 0 and math.isfinite(v)) else floor for v in raw]
        else:
            ys = [v if math.isfinite(v) else floor for v in raw]
        xs = _scale(s.epochs, x_lo, x_hi, x0, x0 + _PANEL_W)
        ys_px = _scale(ys, y_lo, y_hi, _MARGIN_TOP + _PANEL_H, _MARGIN_TOP)
        points = " ".join(f"{x:.2f},{y:.2f}" for x, y in zip(xs, ys_px))
        color = _PALETTE[idx % len(_PALETTE)]
        parts.append(
            f'<polyline class="series" fill="none" stroke="{color}" stroke-width="1.5" '
            f'points="{points}"/>'
        )
    return parts


def render_svg(series_list: list[Series]) -> str:
    if not series_list:
        raise ValueError("need at least one metrics CSV to plot")
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_WIDTH}" height="{_HEIGHT}" '
        f'viewBox="0 0 {_WIDTH} {_HEIGHT}" font-family="sans-serif">',
        f'<rect width="{_WIDTH}" height="{_HEIGHT}" fill="white"/>',
    ]
    parts += _panel(series_list, "losses", _MARGIN_LEFT, "train loss (log)", log_scale=True)
    parts += _panel(
        series_list, "accuracies", _MARGIN_LEFT + _PANEL_W + _PANEL_GAP, "test accuracy", log_scale=False
    )
    legend_x = _MARGIN_LEFT
    legend_y = _MARGIN_TOP + _PANEL_H + 40
    for idx, s in enumerate(series_list):
        color = _PALETTE[idx % len(_PALETTE)]
        x = legend_x + (idx % 3) * 300
        y = legend_y + (idx // 3) * 18
        parts.append(f'<rect x="{x}" y="{y - 9}" width="18" height="4" fill="{color}"/>')
        parts.append(f'<text class="legend" x="{x + 24}" y="{y}" font-size="12">{s.label}</text>')
    parts.append("</svg>")
    return "\n".join(parts)


def plot_metrics(csv_paths, out_path) -> str:
    """Render the CSVs into one SVG file; returns the SVG text."""
    series = [read_metrics_csv(p) for p in csv_paths]
    svg = render_svg(series)
    with open(out_path, "w") as fh:
        fh.write(svg + "\n")
    return svg
