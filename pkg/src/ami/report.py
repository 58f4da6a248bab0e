"""Plain-text tables, CSV files and a dependency-free SVG heatmap."""

from __future__ import annotations

import csv
import html
import math
from pathlib import Path

import numpy as np


def write_csv(rows: list[dict], path, columns: list[str] | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    columns = columns or (list(rows[0]) if rows else [])
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=columns, extrasaction="ignore")
        w.writeheader()
        w.writerows(rows)
    return path


def read_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _cell(v) -> str:
    if isinstance(v, float):
        return "inf" if math.isinf(v) else f"{v:.2f}"
    return str(v)


def format_table(rows: list[dict], columns: list[str] | None = None) -> str:
    """Fixed-width text table, one line per row."""
    if not rows:
        return ""
    columns = columns or list(rows[0])
    cells = [[_cell(r.get(c, "")) for c in columns] for r in rows]
    widths = [max(len(c), *(len(row[i]) for row in cells)) for i, c in enumerate(columns)]
    line = lambda vals: "  ".join(v.rjust(w) for v, w in zip(vals, widths))
    return "\n".join([line(columns), line(["-" * w for w in widths]), *map(line, cells)])


def heatmap_rows(matrix: np.ndarray, names: list[str]) -> list[dict]:
    return [{"modality": n, **{f"p{j}": float(v) for j, v in enumerate(row)}} for n, row in zip(names, matrix)]


def write_heatmap_csv(matrix: np.ndarray, names: list[str], path) -> Path:
    cols = ["modality"] + [f"p{j}" for j in range(matrix.shape[1])]
    return write_csv(heatmap_rows(matrix, names), path, cols)


def _shade(v: float) -> str:
    # white at 0 to a deep blue at 1
    v = min(max(v, 0.0), 1.0)
    r = round(255 - 200 * v)
    g = round(255 - 150 * v)
    return f"rgb({r},{g},255)"


def heatmap_svg(matrix: np.ndarray, names: list[str], title: str = "sensing rate per patch",
                cell: int = 44) -> str:
    """SVG with one labelled cell per (modality, patch index)."""
    M, L = matrix.shape
    left, top = 90, 40
    width, height = left + L * cell + 20, top + M * cell + 40
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'font-family="sans-serif" font-size="11">',
           f'<text x="{left}" y="20" font-size="13">{html.escape(title)}</text>']
    for i, name in enumerate(names):
        y = top + i * cell
        out.append(f'<text x="{left - 8}" y="{y + cell / 2 + 4}" text-anchor="end">{html.escape(name)}</text>')
        for j in range(L):
            v = float(matrix[i, j])
            x = left + j * cell
            ink = "white" if v > 0.6 else "black"
            out.append(f'<rect x="{x}" y="{y}" width="{cell}" height="{cell}" fill="{_shade(v)}" stroke="#888"/>')
            out.append(f'<text x="{x + cell / 2}" y="{y + cell / 2 + 4}" text-anchor="middle" '
                       f'fill="{ink}">{v:.2f}</text>')
    for j in range(L):
        out.append(f'<text x="{left + j * cell + cell / 2}" y="{top + M * cell + 16}" '
                   f'text-anchor="middle">{j}</text>')
    out.append(f'<text x="{left + L * cell / 2}" y="{top + M * cell + 32}" text-anchor="middle">patch index</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def write_heatmap(matrix: np.ndarray, names: list[str], out_dir, stem: str = "heatmap") -> tuple[Path, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = write_heatmap_csv(matrix, names, out / f"{stem}.csv")
    svg_path = out / f"{stem}.svg"
    svg_path.write_text(heatmap_svg(matrix, names))
    return csv_path, svg_path
