"""Minimal self-contained SVG line plots (no external assets)."""

import math
from xml.sax.saxutils import escape

import numpy as np

W, H = 330, 260
ML, MR, MT, MB = 58, 12, 28, 40


def _ticks(lo, hi, n=5):
    if not (math.isfinite(lo) and math.isfinite(hi)) or hi <= lo:
        return [lo]
    raw = (hi - lo) / n
    mag = 10 ** math.floor(math.log10(raw))
    step = min((m * mag for m in (1, 2, 5, 10) if m * mag >= raw), default=raw)
    first = math.ceil(lo / step) * step
    out = []
    t = first
    while t <= hi + 1e-12 * step:
        out.append(round(t, 12))
        t += step
    return out


def _label(v):
    return f"{v:g}"


def panel(x, y, title, xlabel, ylabel, ox, guide=None, note=None, ylog_label=False):
    """One panel as an SVG group; ``x``, ``y`` finite arrays."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    ok = np.isfinite(x) & np.isfinite(y)
    x, y = x[ok], y[ok]
    parts = [f'<g transform="translate({ox},0)">',
             f'<rect x="0" y="0" width="{W}" height="{H}" fill="white" stroke="#ccc"/>',
             f'<text x="{W / 2}" y="16" text-anchor="middle" font-size="12">{escape(title)}</text>']
    pw, ph = W - ML - MR, H - MT - MB
    if x.size == 0:
        parts.append(f'<text x="{W / 2}" y="{H / 2}" text-anchor="middle" font-size="11">no data</text></g>')
        return "\n".join(parts)
    x0, x1 = float(x.min()), float(x.max())
    ys = list(y) + ([guide] if guide is not None else [])
    y0, y1 = float(min(ys)), float(max(ys))
    if x1 == x0:
        x1 = x0 + 1
    if y1 == y0:
        y0, y1 = y0 - 0.5, y1 + 0.5

    def X(v):
        return ML + (v - x0) / (x1 - x0) * pw

    def Y(v):
        return MT + (1 - (v - y0) / (y1 - y0)) * ph

    parts.append(f'<rect x="{ML}" y="{MT}" width="{pw}" height="{ph}" fill="none" stroke="black"/>')
    for t in _ticks(x0, x1):
        parts.append(f'<line x1="{X(t):.2f}" y1="{MT + ph}" x2="{X(t):.2f}" y2="{MT + ph + 4}" stroke="black"/>')
        parts.append(f'<text x="{X(t):.2f}" y="{MT + ph + 15}" text-anchor="middle" font-size="9">{_label(t)}</text>')
    for t in _ticks(y0, y1):
        lab = f"1e{t:g}" if ylog_label else _label(t)
        parts.append(f'<line x1="{ML - 4}" y1="{Y(t):.2f}" x2="{ML}" y2="{Y(t):.2f}" stroke="black"/>')
        parts.append(f'<text x="{ML - 6}" y="{Y(t) + 3:.2f}" text-anchor="end" font-size="9">{lab}</text>')
    parts.append(f'<text x="{ML + pw / 2}" y="{H - 6}" text-anchor="middle" font-size="10">{escape(xlabel)}</text>')
    parts.append(f'<text x="12" y="{MT + ph / 2}" text-anchor="middle" font-size="10" '
                 f'transform="rotate(-90 12 {MT + ph / 2})">{escape(ylabel)}</text>')
    if guide is not None:
        parts.append(f'<line class="guide" x1="{ML}" y1="{Y(guide):.2f}" x2="{ML + pw}" y2="{Y(guide):.2f}" '
                     'stroke="gray" stroke-dasharray="4 3"/>')
    pts = " ".join(f"{X(a):.2f},{Y(b):.2f}" for a, b in zip(x, y))
    parts.append(f'<polyline class="data" fill="none" stroke="#1f5fbf" stroke-width="1.4" points="{pts}"/>')
    if note:
        parts.append(f'<text x="{ML + pw - 4}" y="{MT + 12}" text-anchor="end" font-size="10" fill="#b00">{escape(note)}</text>')
    parts.append("</g>")
    return "\n".join(parts)


def three_panel(cols, cumulative_time=None, breakdown_iter=None, title=""):
    """Error vs iteration, error vs wall time, and rate ratio over the last half."""
    it = cols["iter"]
    err = cols.get("err_rel_1", np.full(it.shape, np.nan))
    if breakdown_iter is not None:
        keep = it <= breakdown_iter
        it, err = it[keep], err[keep]
    with np.errstate(divide="ignore", invalid="ignore"):
        lerr = np.where(err > 0, np.log10(err), np.nan)
    note = f"breakdown at iteration {breakdown_iter}" if breakdown_iter is not None else None
    p1 = panel(it, lerr, "relative error", "iteration", "log10 error", 0, note=note, ylog_label=True)
    if cumulative_time is not None and cumulative_time.size >= it.size:
        p2 = panel(cumulative_time[:it.size], lerr, "relative error vs time", "wall time (s)",
                   "log10 error", W, ylog_label=True)
    else:
        p2 = panel([], [], "relative error vs time", "wall time (s)", "log10 error", W)
    K = int(it[-1]) if it.size else 0
    start = K - K // 2 + 1
    ratio = cols.get("ratio_vs_bound", np.full(cols["iter"].shape, np.nan))[:it.size]
    sel = it >= start
    p3 = panel(it[sel], ratio[sel], "ratio to rate bound (last 50%)", "iteration", "ratio", 2 * W,
               guide=1.0)
    return (f'<svg xmlns="http://www.w3.org/2000/svg" width="{3 * W}" height="{H + 20}" '
            f'viewBox="0 0 {3 * W} {H + 20}" font-family="sans-serif">\n'
            f'<title>{escape(title)}</title>\n{p1}\n{p2}\n{p3}\n'
            f'<text x="4" y="{H + 14}" font-size="10">{escape(title)}</text>\n</svg>\n')
