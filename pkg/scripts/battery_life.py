"""Battery life of every sensor subset at full duty, from the datasheet power
ranges of the four wearable sensor families and a 300 mWh battery.

    python scripts/battery_life.py --out runs/battery

Writes ``battery_life.csv`` (min, mid and max power per subset) and
``battery_life.svg`` (midpoint hours, log scale).
"""

import argparse
import math
from pathlib import Path
from xml.sax.saxutils import escape

from ami import energy as en
from ami.report import format_table, write_csv


def bar_svg(rows, path, width=640, bar_h=18):
    top = max(r["mid_h"] for r in rows)
    scale = (width - 220) / math.log10(top * 1.5)
    lines = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{bar_h * len(rows) + 40}" '
             'font-family="sans-serif" font-size="11">',
             '<text x="10" y="16">battery life at midpoint power (h, log scale)</text>']
    for i, r in enumerate(rows):
        y = 28 + i * bar_h
        w = max(1.0, scale * math.log10(max(r["mid_h"], 1.0)))
        lines.append(f'<text x="10" y="{y + 12}">{escape(r["subset"])}</text>')
        lines.append(f'<rect x="150" y="{y}" width="{w:.1f}" height="{bar_h - 4}" fill="#4a7"/>')
        lines.append(f'<text x="{155 + w:.1f}" y="{y + 12}">{r["mid_h"]:.1f}</text>')
    lines.append("</svg>")
    Path(path).write_text("\n".join(lines) + "\n")


def main():
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--out", default="runs/battery")
    p.add_argument("--capacity", type=float, default=en.BATTERY_MWH, help="mWh")
    args = p.parse_args()
    table = en.PowerTable.from_ranges(en.SENSOR_POWER_MW, capacity_mwh=args.capacity)
    rows = []
    for point in ("min", "mid", "max"):
        for subset, power, hours in en.battery_curve(table, point):
            if point == "min":
                rows.append({"subset": subset})
            row = next(r for r in rows if r["subset"] == subset)
            row[f"{point}_mw"] = power
            row[f"{point}_h"] = hours
    rows.sort(key=lambda r: -r["mid_h"])
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(rows, out / "battery_life.csv")
    bar_svg(rows, out / "battery_life.svg")
    print(format_table(rows, ["subset", "mid_mw", "min_h", "mid_h", "max_h"]))


if __name__ == "__main__":
    main()
