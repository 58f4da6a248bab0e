import xml.etree.ElementTree as ET

import numpy as np

from ami import report


def test_csv_round_trip(tmp_path):
    rows = [{"a": 1, "b": 0.5}, {"a": 2, "b": 1.25}]
    p = report.write_csv(rows, tmp_path / "sub" / "t.csv")
    assert report.read_csv(p) == [{"a": "1", "b": "0.5"}, {"a": "2", "b": "1.25"}]


def test_table_is_aligned():
    text = report.format_table([{"name": "x", "v": 1.0}, {"name": "longer", "v": float("inf")}])
    lines = text.splitlines()
    assert len({len(l) for l in lines}) == 1
    assert lines[2].split() == ["x", "1.00"] and lines[3].split() == ["longer", "inf"]
    assert report.format_table([]) == ""


def test_heatmap_files(tmp_path):
    m = np.array([[0.0, 0.5, 1.0], [0.25, 0.75, 1.0]])
    csv_path, svg_path = report.write_heatmap(m, ["acc", "ecg<1>"], tmp_path)
    rows = report.read_csv(csv_path)
    assert [r["modality"] for r in rows] == ["acc", "ecg<1>"]
    assert float(rows[1]["p1"]) == 0.75
    root = ET.fromstring(svg_path.read_text())  # well-formed, names escaped
    rects = root.findall("{http://www.w3.org/2000/svg}rect")
    assert len(rects) == 6
    texts = [t.text for t in root.iter("{http://www.w3.org/2000/svg}text")]
    assert "0.75" in texts and "ecg<1>" in texts


def test_shade_runs_white_to_blue():
    assert report._shade(0.0) == "rgb(255,255,255)"
    assert report._shade(1.0) == "rgb(55,105,255)"
    assert report._shade(7.0) == report._shade(1.0)
