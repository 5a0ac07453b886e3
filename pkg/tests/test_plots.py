import xml.etree.ElementTree as ET

from artrd.plots import line_svg, scatter_svg

NS = "{http://www.w3.org/2000/svg}"


def test_scatter_is_valid_and_deterministic():
    svg = scatter_svg([1, 2, 3], [3.0, 1.0, 2.0], title="t <&>", xlabel="x", ylabel="y",
                      labels=["a", "b", "c"])
    assert svg == scatter_svg([1, 2, 3], [3.0, 1.0, 2.0], title="t <&>", xlabel="x",
                              ylabel="y", labels=["a", "b", "c"])
    root = ET.fromstring(svg)
    assert len(root.findall(f".//{NS}circle")) == 3


def test_scatter_handles_constant_values():
    ET.fromstring(scatter_svg([2, 2], [5, 5], title="c", xlabel="x", ylabel="y"))


def test_line_chart_has_one_path_per_series():
    svg = line_svg({"a": ([0, 1, 2], [0.0, 1.0, 0.5]), "b": ([0, 2], [1.0, 1.0])},
                   title="curves")
    root = ET.fromstring(svg)
    assert len(root.findall(f".//{NS}polyline")) + len(root.findall(f".//{NS}path")) == 2
