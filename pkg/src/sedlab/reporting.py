"""Sorted-run reports: per-system event-based F1 values sorted ascending,
written as CSV rows and as one polyline per system in a standalone SVG.
"""

from __future__ import annotations

from .train import RunSummary

_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#7f7f7f")

_WIDTH, _HEIGHT = 640, 440
_MARGIN_L, _MARGIN_R, _MARGIN_T, _MARGIN_B = 60, 150, 20, 40


def sorted_f1_rows(summaries: list[RunSummary]) -> list[tuple[str, int, float]]:
    """(system, rank, f1) rows with per-system event F1 sorted ascending."""
    rows: list[tuple[str, int, float]] = []
    for summary in summaries:
        values = sorted(r.event_f1 for r in summary.results)
        rows.extend((summary.variant, rank, f1) for rank, f1 in enumerate(values, start=1))
    return rows


def write_report_csv(path, rows: list[tuple[str, int, float]]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("system,rank,f1\n")
        for system, rank, f1 in rows:
            fh.write(f"{system},{rank},{f1!r}\n")


def read_report_csv(path) -> list[tuple[str, int, float]]:
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        if header != "system,rank,f1":
            raise ValueError(f"{path}: unexpected CSV header {header!r}")
        for line in fh:
            if not line.strip():
                continue
            system, rank, f1 = line.rstrip("\n").split(",")
            rows.append((system, int(rank), float(f1)))
    return rows


def write_report_svg(path, summaries: list[RunSummary]) -> None:
    """One sorted-ascending polyline per system over the rank axis."""
    if not summaries:
        raise ValueError("no summaries to plot")
    series = [(s.variant, sorted(r.event_f1 for r in s.results)) for s in summaries]
    if any(len(vals) == 0 for _, vals in series):
        empty = [name for name, vals in series if not vals]
        raise ValueError(f"empty summaries: {empty}")
    n_max = max(len(vals) for _, vals in series)
    y_all = [v for _, vals in series for v in vals]
    y_lo, y_hi = min(y_all), max(y_all)
    if y_hi - y_lo < 1e-9:
        y_lo, y_hi = y_lo - 0.05, y_hi + 0.05
    pad = 0.05 * (y_hi - y_lo)
    y_lo, y_hi = max(0.0, y_lo - pad), y_hi + pad
    plot_w = _WIDTH - _MARGIN_L - _MARGIN_R
    plot_h = _HEIGHT - _MARGIN_T - _MARGIN_B

    def x_at(rank: int) -> float:
        if n_max == 1:
            return _MARGIN_L + plot_w / 2
        return _MARGIN_L + plot_w * (rank - 1) / (n_max - 1)

    def y_at(value: float) -> float:
        return _MARGIN_T + plot_h * (1 - (value - y_lo) / (y_hi - y_lo))

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_WIDTH}" height="{_HEIGHT}" '
        f'viewBox="0 0 {_WIDTH} {_HEIGHT}">',
        f'<rect x="{_MARGIN_L}" y="{_MARGIN_T}" width="{plot_w}" height="{plot_h}" '
        'fill="none" stroke="#333" stroke-width="1"/>',
        f'<text x="{_MARGIN_L + plot_w / 2:.1f}" y="{_HEIGHT - 8}" text-anchor="middle" '
        'font-size="13">run rank (sorted ascending)</text>',
        f'<text x="14" y="{_MARGIN_T + plot_h / 2:.1f}" text-anchor="middle" font-size="13" '
        f'transform="rotate(-90 14 {_MARGIN_T + plot_h / 2:.1f})">event-based F1</text>',
    ]
    for k in range(5):
        val = y_lo + (y_hi - y_lo) * k / 4
        y = y_at(val)
        parts.append(f'<line x1="{_MARGIN_L - 4}" y1="{y:.1f}" x2="{_MARGIN_L}" y2="{y:.1f}" stroke="#333"/>')
        parts.append(f'<text x="{_MARGIN_L - 8}" y="{y + 4:.1f}" text-anchor="end" font-size="11">{val:.3f}</text>')
    for rank in range(1, n_max + 1):
        x = x_at(rank)
        parts.append(
            f'<line x1="{x:.1f}" y1="{_MARGIN_T + plot_h}" x2="{x:.1f}" y2="{_MARGIN_T + plot_h + 4}" stroke="#333"/>'
        )
        parts.append(
            f'<text x="{x:.1f}" y="{_MARGIN_T + plot_h + 16}" text-anchor="middle" font-size="10">{rank}</text>'
        )
    for idx, (name, vals) in enumerate(series):
        color = _PALETTE[idx % len(_PALETTE)]
        points = " ".join(f"{x_at(r + 1):.2f},{y_at(v):.2f}" for r, v in enumerate(vals))
        parts.append(f'<polyline fill="none" stroke="{color}" stroke-width="2" points="{points}"/>')
        ly = _MARGIN_T + 16 + 18 * idx
        lx = _WIDTH - _MARGIN_R + 10
        parts.append(f'<line x1="{lx}" y1="{ly - 4}" x2="{lx + 22}" y2="{ly - 4}" stroke="{color}" stroke-width="2"/>')
        parts.append(f'<text x="{lx + 28}" y="{ly}" font-size="12">{name}</text>')
    parts.append("</svg>")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(parts) + "\n")
