import json
import xml.etree.ElementTree as ET

import numpy as np

from rigidlab import reports


def test_clean_and_dumps():
    obj = {"a": np.float64(1.5), "b": np.arange(3), "c": float("nan"), "d": (np.int64(2), np.bool_(True)),
           1: "x"}
    text = reports.dumps(obj)
    data = json.loads(text)
    assert data == {"a": 1.5, "b": [0, 1, 2], "c": None, "d": [2, True], "1": "x"}
    assert text.endswith("\n") and "\r" not in text
    assert list(data) == sorted(data)


def test_csv_text_format():
    text = reports.csv_text(["n", "value"], [(5, 0.1), (10, np.float64(1 / 3))])
    lines = text.split("\n")
    assert lines[0] == "n,value"
    assert lines[1] == "5,0.1"
    assert float(lines[2].split(",")[1]) == 1 / 3
    assert "\r" not in text and text.endswith("\n")


def test_write_files(tmp_path):
    p = reports.write_csv(tmp_path / "t.csv", ["a"], [(1,)])
    assert p.read_bytes() == b"a\n1\n"
    q = reports.write_json(tmp_path / "t.json", {"x": 1})
    assert json.loads(q.read_text()) == {"x": 1}


def test_config_hash_stable():
    a = reports.config_hash({"x": 1, "y": [1.0, 2.0]})
    b = reports.config_hash({"y": [1.0, 2.0], "x": 1})
    assert a == b and len(a) == 64
    assert a != reports.config_hash({"x": 2, "y": [1.0, 2.0]})


def test_manifest_fields():
    man = reports.manifest("energy", "lbl", {"p": 2}, [[9, 9]], ["/tmp/energy_lbl.json"], 4, "python")
    assert man["outputs"] == ["energy_lbl.json"]
    assert set(man["versions"]) == {"rigidlab", "numpy", "scipy", "python"}
    assert man["config_hash"] == reports.config_hash({"p": 2})
    assert man["threads"] == 4 and "timestamp" in man


def test_svg_heatmap_well_formed():
    svg = reports.svg_heatmap(np.arange(12.0).reshape(3, 4), "demo")
    root = ET.fromstring(svg)
    rects = root.findall("{http://www.w3.org/2000/svg}rect")
    assert len(rects) == 12 + 50
    # constant fields do not divide by zero
    ET.fromstring(reports.svg_heatmap(np.ones((2, 2))))


def test_svg_loglog_well_formed():
    svg = reports.svg_loglog({"a": ([1, 10, 100], [1.0, 0.1, 0.0]), "b": ([1, 2], [3, 4])}, "t")
    root = ET.fromstring(svg)
    lines = root.findall("{http://www.w3.org/2000/svg}polyline")
    assert len(lines) == 2
    ET.fromstring(reports.svg_loglog({}))
