"""Standalone SVG line plot of RMSE versus ground-truth depth range."""

from __future__ import annotations

from .errors import UsageError

_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def _fmt(v):
    return format(v, ".6g")


def render_range_plot(series, width=640, height=400):
    """series: [(label, [(lo, hi, rmse-or-None, count), ...]), ...] -> SVG text.

    Buckets with zero pixels break the polyline: no point is fabricated.
    """
    if not series:
        raise UsageError("nothing to plot")
    xs, ys = [], []
    for _, buckets in series:
        for lo, hi, rmse, count in buckets:
            xs.extend([lo, hi])
            if count and rmse is not None:
                ys.append(rmse)
    if not ys:
        raise UsageError("no populated range buckets to plot")
    x0, x1 = min(xs), max(xs)
    y0, y1 = 0.0, max(ys) * 1.1 or 1.0
    ml, mr, mt, mb = 56, 16, 20, 44
    pw, ph = width - ml - mr, height - mt - mb

    def px(x):
        return ml + (x - x0) / (x1 - x0) * pw

    def py(y):
        return mt + ph - (y - y0) / (y1 - y0) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">',
        f'<rect x="{ml}" y="{mt}" width="{pw}" height="{ph}" fill="none" stroke="#888"/>',
    ]
    for i in range(5):
        xv = x0 + (x1 - x0) * i / 4
        yv = y0 + (y1 - y0) * i / 4
        out.append(f'<line x1="{_fmt(px(xv))}" y1="{mt + ph}" x2="{_fmt(px(xv))}" y2="{mt + ph + 4}" stroke="#444"/>')
        out.append(
            f'<text x="{_fmt(px(xv))}" y="{mt + ph + 16}" text-anchor="middle">{_fmt(xv)}</text>'
        )
        out.append(f'<line x1="{ml - 4}" y1="{_fmt(py(yv))}" x2="{ml}" y2="{_fmt(py(yv))}" stroke="#444"/>')
        out.append(f'<text x="{ml - 6}" y="{_fmt(py(yv) + 3)}" text-anchor="end">{_fmt(yv)}</text>')
    out.append(
        f'<text x="{ml + pw / 2}" y="{height - 8}" text-anchor="middle">ground-truth depth (m)</text>'
    )
    out.append(
        f'<text x="14" y="{mt + ph / 2}" text-anchor="middle" '
        f'transform="rotate(-90 14 {mt + ph / 2})">RMSE (m)</text>'
    )

    for si, (label, buckets) in enumerate(series):
        color = _COLORS[si % len(_COLORS)]
        segment = []
        segments = []
        for lo, hi, rmse, count in buckets:
            if count and rmse is not None:
                segment.append((0.5 * (lo + hi), rmse))
            elif segment:
                segments.append(segment)
                segment = []
        if segment:
            segments.append(segment)
        for seg in segments:
            pts = " ".join(f"{_fmt(px(x))},{_fmt(py(y))}" for x, y in seg)
            if len(seg) == 1:
                x, y = seg[0]
                out.append(f'<circle cx="{_fmt(px(x))}" cy="{_fmt(py(y))}" r="3" fill="{color}"/>')
            else:
                out.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        ly = mt + 14 + 14 * si
        out.append(f'<line x1="{ml + 8}" y1="{ly - 4}" x2="{ml + 28}" y2="{ly - 4}" stroke="{color}" stroke-width="1.5"/>')
        out.append(f'<text x="{ml + 32}" y="{ly}">{label}</text>')
    out.append("</svg>")
    return "\n".join(out)


def text_table(series):
    """Aligned plain-text table of the same per-range data."""
    lines = []
    for label, buckets in series:
        lines.append(label)
        lines.append(f"  {'range':>16}  {'rmse':>10}  {'count':>8}")
        for lo, hi, rmse, count in buckets:
            rtxt = _fmt(rmse) if (count and rmse is not None) else "-"
            lines.append(f"  {_fmt(lo):>7}-{_fmt(hi):<8}  {rtxt:>10}  {count:>8}")
    return "\n".join(lines)
