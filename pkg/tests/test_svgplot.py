import xml.etree.ElementTree as ET

import numpy as np
import pytest

from kschaos.svgplot import Series, line_chart

NS = "{http://www.w3.org/2000/svg}"


def texts(root):
    return [t.text for t in root.iter(NS + "text") if t.text]


def test_series_validation():
    with pytest.raises(ValueError):
        Series("s", [], [])
    with pytest.raises(ValueError):
        Series("s", [1.0, 2.0], [1.0])
    with pytest.raises(ValueError):
        Series("s", [1.0, np.nan], [1.0, 2.0])
    with pytest.raises(ValueError):
        Series("s", [1.0, 2.0], [1.0, 2.0], band_lo=[0.5, 1.5])


def test_empty_chart_rejected(tmp_path):
    with pytest.raises(ValueError):
        line_chart(str(tmp_path / "x.svg"), [])


def test_loglog_slope_annotation(tmp_path):
    x = np.array([1.0, 2.0, 4.0, 8.0, 16.0])
    path = str(tmp_path / "quad.svg")
    line_chart(path, [Series("parabola", x, x ** 2)],
               title="t", xlabel="x", ylabel="y")
    root = ET.parse(path).getroot()
    labels = texts(root)
    assert any("slope 2.00" in t for t in labels)
    assert "t" in labels and "x" in labels and "y" in labels


def test_nonpositive_values_force_linear_axes(tmp_path):
    x = [1.0, 2.0, 3.0]
    path = str(tmp_path / "lin.svg")
    line_chart(path, [Series("s", x, [-1.0, 0.0, 1.0])])
    root = ET.parse(path).getroot()
    assert not any("slope" in t for t in texts(root))
    with pytest.raises(ValueError):
        line_chart(path, [Series("s", x, [-1.0, 0.0, 1.0])], logy=True)


def test_band_polygon_rendered(tmp_path):
    x = [1.0, 2.0, 4.0]
    y = [0.5, 0.4, 0.3]
    s = Series("p", x, y, band_lo=[0.4, 0.3, 0.2], band_hi=[0.6, 0.5, 0.4])
    path = str(tmp_path / "band.svg")
    line_chart(path, [s])
    root = ET.parse(path).getroot()
    polys = list(root.iter(NS + "polygon"))
    assert len(polys) == 1
    assert len(polys[0].get("points").split()) == 6


def test_decade_ticks_on_log_axis(tmp_path):
    x = [1.0, 10.0, 100.0, 1000.0]
    path = str(tmp_path / "log.svg")
    line_chart(path, [Series("s", x, [1.0, 2.0, 3.0, 4.0])], logx=True)
    labels = texts(ET.parse(path).getroot())
    for tick in ("1", "10", "100", "1000"):
        assert tick in labels


def test_rewrites_are_byte_identical(tmp_path):
    x = [1.0, 2.0, 4.0]
    path = str(tmp_path / "again.svg")
    line_chart(path, [Series("s", x, [3.0, 2.0, 1.0])], title="rerun")
    first = open(path, "rb").read()
    line_chart(path, [Series("s", x, [3.0, 2.0, 1.0])], title="rerun")
    assert open(path, "rb").read() == first


def test_labels_are_escaped(tmp_path):
    path = str(tmp_path / "esc.svg")
    line_chart(path, [Series("a<b", [1.0, 2.0], [1.0, 2.0])],
               title="x & y")
    root = ET.parse(path).getroot()   # parse fails if escaping is broken
    assert any("a<b" in t for t in texts(root))
