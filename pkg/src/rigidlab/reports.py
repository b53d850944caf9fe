"""Report writers: CSV tables, JSON documents, static SVG plots and run manifests.

Everything here is deterministic: floats are written with ``repr``, JSON keys
are sorted, and SVG coordinates use a fixed number of digits.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
import platform
import time
from pathlib import Path

import numpy as np

from . import __version__


def _clean(obj):
    """JSON-safe copy: numpy scalars and arrays to Python, non-finite floats to None."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def dumps(obj) -> str:
    return json.dumps(_clean(obj), indent=2, sort_keys=True) + "\n"


def write_json(path, obj) -> Path:
    path = Path(path)
    path.write_text(dumps(obj), encoding="utf-8", newline="\n")
    return path


def csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    return buf.getvalue()


def write_csv(path, header, rows) -> Path:
    path = Path(path)
    path.write_text(csv_text(header, rows), encoding="utf-8", newline="\n")
    return path


def config_hash(config) -> str:
    canon = json.dumps(_clean(config), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()


def timestamp() -> str:
    return time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())


def manifest(command, label, config, resolutions, outputs, threads, backend) -> dict:
    import scipy

    return {
        "command": command,
        "label": label,
        "config_hash": config_hash(config),
        "config": config,
        "resolutions": resolutions,
        "outputs": sorted(os.path.basename(str(p)) for p in outputs),
        "versions": {
            "rigidlab": __version__,
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "python": platform.python_version(),
        },
        "kernel_backend": backend,
        "threads": threads,
        "timestamp": timestamp(),
    }


# ---------------------------------------------------------------------------
# SVG

_RAMP = np.array([
    [68, 1, 84], [59, 82, 139], [33, 145, 140], [94, 201, 98], [253, 231, 37],
], dtype=float)


def _color(t):
    t = min(max(float(t), 0.0), 1.0) * (len(_RAMP) - 1)
    k = min(int(t), len(_RAMP) - 2)
    c = _RAMP[k] + (t - k) * (_RAMP[k + 1] - _RAMP[k])
    return "#%02x%02x%02x" % tuple(int(round(v)) for v in c)


def _fmt(v):
    return f"{v:.2f}"


def svg_heatmap(values, title="", size=480) -> str:
    """Heatmap of a 2-D cell array (``values[i, j]``: ``i`` along x, ``j`` along y)."""
    v = np.asarray(values, dtype=float)
    if v.ndim != 2:
        raise ValueError("heatmaps need a 2-D array")
    nx, ny = v.shape
    lo, hi = float(np.min(v)), float(np.max(v))
    span = hi - lo if hi > lo else 1.0
    margin, bar = 40, 20
    cw, ch = size / nx, size / ny
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size + 2 * margin + bar + 60}" '
        f'height="{size + 2 * margin}">',
        f'<text x="{margin}" y="{margin - 12}" font-family="sans-serif" font-size="14">{title}</text>',
    ]
    for i in range(nx):
        for j in range(ny):
            x = margin + i * cw
            y = margin + (ny - 1 - j) * ch
            out.append(f'<rect x="{_fmt(x)}" y="{_fmt(y)}" width="{_fmt(cw + 0.05)}" '
                       f'height="{_fmt(ch + 0.05)}" fill="{_color((v[i, j] - lo) / span)}"/>')
    bx = margin + size + 10
    for k in range(50):
        y = margin + size * (1 - (k + 1) / 50)
        out.append(f'<rect x="{bx}" y="{_fmt(y)}" width="{bar}" height="{_fmt(size / 50 + 0.05)}" '
                   f'fill="{_color((k + 0.5) / 50)}"/>')
    out.append(f'<text x="{bx + bar + 4}" y="{margin + 10}" font-family="sans-serif" '
               f'font-size="11">{hi:.4g}</text>')
    out.append(f'<text x="{bx + bar + 4}" y="{margin + size}" font-family="sans-serif" '
               f'font-size="11">{lo:.4g}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def svg_loglog(series, title="", xlabel="x", ylabel="y", width=520, height=400) -> str:
    """Log-log line plot of ``{name: (x, y)}``; non-positive points are dropped."""
    palette = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"]
    pts = {}
    for name, (x, y) in series.items():
        x, y = np.asarray(x, float), np.asarray(y, float)
        keep = (x > 0) & (y > 0) & np.isfinite(x) & np.isfinite(y)
        if np.any(keep):
            pts[name] = (np.log10(x[keep]), np.log10(y[keep]))
    margin = 60
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
           f'<text x="{margin}" y="24" font-family="sans-serif" font-size="14">{title}</text>']
    if pts:
        allx = np.concatenate([p[0] for p in pts.values()])
        ally = np.concatenate([p[1] for p in pts.values()])
        x0, x1 = float(allx.min()), float(allx.max())
        y0, y1 = float(ally.min()), float(ally.max())
        x1 = x1 if x1 > x0 else x0 + 1.0
        y1 = y1 if y1 > y0 else y0 + 1.0
        pw, ph = width - 2 * margin, height - 2 * margin

        def sx(v):
            return margin + (v - x0) / (x1 - x0) * pw

        def sy(v):
            return height - margin - (v - y0) / (y1 - y0) * ph

        out.append(f'<rect x="{margin}" y="{margin}" width="{pw}" height="{ph}" '
                   'fill="none" stroke="#444"/>')
        for k, (name, (lx, ly)) in enumerate(sorted(pts.items())):
            col = palette[k % len(palette)]
            path = " ".join(f"{_fmt(sx(a))},{_fmt(sy(b))}" for a, b in zip(lx, ly))
            out.append(f'<polyline points="{path}" fill="none" stroke="{col}" stroke-width="2"/>')
            for a, b in zip(lx, ly):
                out.append(f'<circle cx="{_fmt(sx(a))}" cy="{_fmt(sy(b))}" r="3" fill="{col}"/>')
            out.append(f'<text x="{width - margin + 4}" y="{margin + 14 * (k + 1)}" '
                       f'font-family="sans-serif" font-size="11" fill="{col}">{name}</text>')
        out.append(f'<text x="{margin}" y="{height - 20}" font-family="sans-serif" font-size="11">'
                   f'log10 {xlabel}: {x0:.3g} .. {x1:.3g}</text>')
        out.append(f'<text x="8" y="{margin - 8}" font-family="sans-serif" font-size="11">'
                   f'log10 {ylabel}: {y0:.3g} .. {y1:.3g}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def write_text(path, text) -> Path:
    path = Path(path)
    path.write_text(text, encoding="utf-8", newline="\n")
    return path
