"""RunLog CSV files, run comparison tables and dependency-free SVG charts."""

from __future__ import annotations

import csv
import math
import os
from pathlib import Path
from typing import Sequence

from .curriculum import RunLog, RunLogRow
from .errors import DataFormatError
from .metrics import PSNR_SENTINEL_DB

RUNLOG_COLUMNS = ("stage", "epoch", "samples_cum", "train_loss", "val_mae", "val_game", "val_ssim", "val_psnr")
NOT_REACHED = "not reached"

COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b")


def _fmt(x: float) -> str:
    return repr(float(x))


def write_runlog(runlog: RunLog, path: str | os.PathLike) -> Path:
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(RUNLOG_COLUMNS)
        for r in runlog.rows:
            psnr = PSNR_SENTINEL_DB if math.isinf(r.val_psnr) else r.val_psnr
            w.writerow(
                [r.stage, r.epoch, r.samples_cum, _fmt(r.train_loss), _fmt(r.val_mae),
                 _fmt(r.val_game), _fmt(r.val_ssim), _fmt(psnr)]
            )
    return path


def read_runlog(path: str | os.PathLike) -> RunLog:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"run log not found: {path}")
    rows = []
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None or tuple(header) != RUNLOG_COLUMNS:
            raise DataFormatError(f"{path}:1: expected header {','.join(RUNLOG_COLUMNS)}")
        for lineno, rec in enumerate(reader, 2):
            if not rec:
                continue
            try:
                if len(rec) != len(RUNLOG_COLUMNS):
                    raise ValueError
                rows.append(RunLogRow(int(rec[0]), int(rec[1]), int(rec[2]), *map(float, rec[3:])))
            except ValueError:
                raise DataFormatError(f"{path}:{lineno}: malformed run log row") from None
    for prev, cur in zip(rows, rows[1:]):
        if cur.samples_cum <= prev.samples_cum:
            raise DataFormatError(f"{path}: samples_cum must be strictly increasing")
    return RunLog(rows, {"path": str(path)})


def samples_to_threshold(runlog: RunLog, threshold: float) -> int | None:
    """Cumulative samples at the first epoch whose training loss is <= threshold."""
    for r in runlog.rows:
        if r.train_loss <= threshold:
            return r.samples_cum
    return None


def merge_runs(runs: dict[str, RunLog]) -> tuple[list[str], list[list]]:
    """Outer-join runs on samples_cum; missing cells are empty strings."""
    keys = sorted({r.samples_cum for log in runs.values() for r in log.rows})
    lookup = {name: {r.samples_cum: r.train_loss for r in log.rows} for name, log in runs.items()}
    header = ["samples_cum"] + [f"{name}_train_loss" for name in runs]
    rows = [[k] + [_fmt(lookup[n][k]) if k in lookup[n] else "" for n in runs] for k in keys]
    return header, rows


def unique_names(paths: Sequence[str | os.PathLike]) -> list[str]:
    names, seen = [], {}
    for p in paths:
        stem = Path(p).stem
        seen[stem] = seen.get(stem, 0) + 1
        names.append(stem if seen[stem] == 1 else f"{stem}_{seen[stem]}")
    return names


# -- SVG --------------------------------------------------------------------


def _escape(text: str) -> str:
    return (
        text.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;").replace('"', "&quot;")
    )


def _ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    if hi <= lo:
        return [lo]
    raw = (hi - lo) / n
    mag = 10 ** math.floor(math.log10(raw))
    step = next(m * mag for m in (1, 2, 5, 10) if m * mag >= raw)
    start = math.ceil(lo / step) * step
    out, v = [], start
    while v <= hi + 1e-12 * step:
        out.append(round(v, 12))
        v += step
    return out


def line_chart_svg(
    series: Sequence[tuple[str, Sequence[float], Sequence[float]]],
    title: str,
    x_label: str,
    y_label: str,
    width: int = 800,
    height: int = 480,
) -> str:
    """Render (name, xs, ys) series as a standalone SVG document."""
    points = [(x, y) for _, xs, ys in series for x, y in zip(xs, ys) if math.isfinite(y)]
    if not points:
        raise ValueError("nothing to plot")
    left, right, top, bottom = 80, 180, 50, 60
    pw, ph = width - left - right, height - top - bottom
    x0, x1 = min(0.0, min(p[0] for p in points)), max(p[0] for p in points)
    y0, y1 = min(0.0, min(p[1] for p in points)), max(p[1] for p in points)
    x1 = x1 if x1 > x0 else x0 + 1
    y1 = y1 if y1 > y0 else y0 + 1

    def sx(x):
        return left + (x - x0) / (x1 - x0) * pw

    def sy(y):
        return top + ph - (y - y0) / (y1 - y0) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2:.1f}" y="28" text-anchor="middle" font-size="16">{_escape(title)}</text>',
        f'<line x1="{left}" y1="{top + ph}" x2="{left + pw}" y2="{top + ph}" stroke="black"/>',
        f'<line x1="{left}" y1="{top}" x2="{left}" y2="{top + ph}" stroke="black"/>',
    ]
    for t in _ticks(x0, x1):
        out.append(f'<line x1="{sx(t):.1f}" y1="{top + ph}" x2="{sx(t):.1f}" y2="{top + ph + 5}" stroke="black"/>')
        out.append(f'<text x="{sx(t):.1f}" y="{top + ph + 18}" text-anchor="middle">{t:g}</text>')
    for t in _ticks(y0, y1):
        out.append(f'<line x1="{left - 5}" y1="{sy(t):.1f}" x2="{left + pw}" y2="{sy(t):.1f}" stroke="#ddd"/>')
        out.append(f'<text x="{left - 8}" y="{sy(t) + 4:.1f}" text-anchor="end">{t:g}</text>')
    out.append(
        f'<text x="{left + pw / 2:.1f}" y="{height - 15}" text-anchor="middle">{_escape(x_label)}</text>'
    )
    out.append(
        f'<text transform="translate(20,{top + ph / 2:.1f}) rotate(-90)" text-anchor="middle">'
        f"{_escape(y_label)}</text>"
    )
    for k, (name, xs, ys) in enumerate(series):
        color = COLORS[k % len(COLORS)]
        pts = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in zip(xs, ys) if math.isfinite(y))
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="2" points="{pts}"/>')
        ly = top + 10 + 20 * k
        out.append(f'<line x1="{left + pw + 15}" y1="{ly}" x2="{left + pw + 40}" y2="{ly}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{left + pw + 45}" y="{ly + 4}">{_escape(name)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def loss_chart(runs: dict[str, RunLog]) -> str:
    series = [
        (name, [r.samples_cum for r in log.rows], [r.train_loss for r in log.rows])
        for name, log in runs.items()
    ]
    return line_chart_svg(series, "Training loss vs. samples consumed", "samples consumed", "training loss")
