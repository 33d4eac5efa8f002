"""CSV records and SVG figures.

SVG coordinates come from one affine map per figure, declared on the root
element as ``data-viewport="xmin ymin sx sy pad height"``: a world point
(x, y) lands at (pad + sx (x - xmin), height - pad - sy (y - ymin)).
"""

from __future__ import annotations

import csv
import dataclasses
import io
import math
import os
import xml.etree.ElementTree as ET
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from fgpe.evader import Disk
from fgpe.factor_graph import ellipse_axes
from fgpe.harness.sweep import RunRecord
from fgpe.sim import TraceRow

__all__ = ["COLUMNS", "emit_csv", "read_csv", "format_cell", "Viewport", "emit_trace_svg", "emit_series_svg"]

COLUMNS = tuple(f.name for f in dataclasses.fields(RunRecord))

_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf")


def _write(path, text: str) -> None:
    try:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    except OSError as exc:
        raise OSError(exc.errno, f"cannot write {os.fspath(path)}: {exc.strerror}") from exc


# ------------------------------------------------------------------ CSV


def format_cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def emit_csv(records: Iterable[RunRecord], path) -> None:
    """One row per record under the fixed header; an empty input gives a header-only file."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(COLUMNS)
    for r in records:
        w.writerow([format_cell(getattr(r, c)) for c in COLUMNS])
    _write(path, buf.getvalue())


def read_csv(path) -> list[dict[str, str]]:
    try:
        with open(path, encoding="utf-8", newline="") as fh:
            return list(csv.DictReader(fh))
    except OSError as exc:
        raise OSError(exc.errno, f"cannot read {os.fspath(path)}: {exc.strerror}") from exc


# ------------------------------------------------------------------ SVG


@dataclass(frozen=True)
class Viewport:
    xmin: float
    ymin: float
    sx: float
    sy: float
    pad: float
    width: float
    height: float

    @classmethod
    def fit(cls, xs: Sequence[float], ys: Sequence[float], scale: float = 20.0, pad: float = 20.0,
            equal: bool = True, size: tuple[float, float] = (640.0, 400.0)) -> "Viewport":
        x0, x1 = min(xs), max(xs)
        y0, y1 = min(ys), max(ys)
        wx, wy = max(x1 - x0, 1e-9), max(y1 - y0, 1e-9)
        if equal:
            sx = sy = scale
        else:
            sx, sy = (size[0] - 2 * pad) / wx, (size[1] - 2 * pad) / wy
        return cls(x0, y0, sx, sy, pad, 2 * pad + sx * wx, 2 * pad + sy * wy)

    def to_svg(self, x: float, y: float) -> tuple[float, float]:
        return self.pad + self.sx * (x - self.xmin), self.height - self.pad - self.sy * (y - self.ymin)

    def declaration(self) -> str:
        return " ".join(repr(float(v)) for v in (self.xmin, self.ymin, self.sx, self.sy, self.pad, self.height))


def _root(vp: Viewport) -> ET.Element:
    return ET.Element("svg", {
        "xmlns": "http://www.w3.org/2000/svg",
        "width": repr(vp.width), "height": repr(vp.height),
        "viewBox": f"0 0 {vp.width!r} {vp.height!r}",
        "data-viewport": vp.declaration(),
    })


def _points(vp: Viewport, pts: Iterable[tuple[float, float]]) -> str:
    out = []
    for x, y in pts:
        u, v = vp.to_svg(x, y)
        out.append(f"{u!r},{v!r}")
    return " ".join(out)


def _save(root: ET.Element, path) -> None:
    ET.indent(root)
    _write(path, ET.tostring(root, encoding="unicode") + "\n")


def emit_trace_svg(trace: Sequence[TraceRow], path, *, obstacles: Sequence[Disk] = (),
                   covariances: Sequence[np.ndarray] | None = None, ellipse_scale: float = 1.0,
                   ellipse_every: int = 10, captured: bool = False, scale: float = 20.0) -> Viewport:
    """Evader truth (solid), pursuers (dashed), evader estimate (dotted), obstacles, capture marker.

    ``covariances[k]`` belongs to the k-th estimate row; every ``ellipse_every``-th
    one is drawn as its 1-sigma ellipse with both axes multiplied by ``ellipse_scale``.
    """
    if not trace:
        raise ValueError("empty trace")
    xs = [r.x for r in trace] + [o.center.x + s * o.radius for o in obstacles for s in (-1, 1)]
    ys = [r.y for r in trace] + [o.center.y + s * o.radius for o in obstacles for s in (-1, 1)]
    vp = Viewport.fit(xs, ys, scale=scale)
    root = _root(vp)
    for i, o in enumerate(obstacles):
        cx, cy = vp.to_svg(o.center.x, o.center.y)
        ET.SubElement(root, "circle", {"class": "obstacle", "id": f"obstacle-{i}", "cx": repr(cx), "cy": repr(cy),
                                       "r": repr(o.radius * vp.sx), "fill": "#999999"})
    tracks: dict[tuple[str, int], list[tuple[float, float]]] = {}
    for r in sorted(trace, key=lambda r: r.step):
        tracks.setdefault((r.entity_kind, r.id), []).append((r.x, r.y))
    style = {"evader": ("#000000", None), "estimate": ("#555555", "2 3")}
    for (kind, ident), pts in sorted(tracks.items()):
        color, dash = style.get(kind, (_PALETTE[ident % len(_PALETTE)], "6 4"))
        attrs = {"class": kind, "id": f"{kind}-{ident}", "points": _points(vp, pts), "fill": "none",
                 "stroke": color, "stroke-width": "1.5"}
        if dash:
            attrs["stroke-dasharray"] = dash
        ET.SubElement(root, "polyline", attrs)
    if covariances is not None:
        est = tracks.get(("estimate", 0), [])
        for k, (cov, (x, y)) in enumerate(zip(covariances, est)):
            if k % max(ellipse_every, 1):
                continue
            a, b, ang = ellipse_axes(cov)
            a, b = a * ellipse_scale, b * ellipse_scale
            cx, cy = vp.to_svg(x, y)
            ET.SubElement(root, "ellipse", {
                "class": "ellipse", "cx": repr(cx), "cy": repr(cy), "rx": repr(a * vp.sx), "ry": repr(b * vp.sy),
                "transform": f"rotate({-math.degrees(ang)!r} {cx!r} {cy!r})",
                "fill": "none", "stroke": "#ff7f0e"})
    if captured and ("evader", 0) in tracks:
        cx, cy = vp.to_svg(*tracks[("evader", 0)][-1])
        ET.SubElement(root, "circle", {"class": "capture", "id": "capture", "cx": repr(cx), "cy": repr(cy),
                                       "r": "6", "fill": "none", "stroke": "#d62728", "stroke-width": "2"})
    _save(root, path)
    return vp


def emit_series_svg(series: Mapping[str, Sequence[tuple[float, float]]], path, *, title: str = "",
                    xlabel: str = "", ylabel: str = "") -> Viewport:
    """Line chart with one polyline per named series and a text legend."""
    pts = [p for s in series.values() for p in s]
    if not pts:
        raise ValueError("no data points")
    vp = Viewport.fit([p[0] for p in pts], [p[1] for p in pts], pad=40.0, equal=False)
    root = _root(vp)
    x0, y0 = vp.to_svg(vp.xmin, vp.ymin)
    ET.SubElement(root, "line", {"class": "axis", "x1": repr(x0), "y1": repr(y0),
                                 "x2": repr(vp.width - vp.pad), "y2": repr(y0), "stroke": "#000000"})
    ET.SubElement(root, "line", {"class": "axis", "x1": repr(x0), "y1": repr(y0),
                                 "x2": repr(x0), "y2": repr(vp.pad), "stroke": "#000000"})
    for text, x, y in ((title, vp.width / 2, vp.pad / 2), (xlabel, vp.width / 2, vp.height - 8),
                       (ylabel, 4.0, vp.pad / 2)):
        if text:
            t = ET.SubElement(root, "text", {"x": repr(x), "y": repr(y), "font-size": "12"})
            t.text = text
    for i, (name, s) in enumerate(series.items()):
        color = _PALETTE[i % len(_PALETTE)]
        ET.SubElement(root, "polyline", {"class": "series", "data-name": name, "points": _points(vp, s),
                                         "fill": "none", "stroke": color, "stroke-width": "1.5"})
        t = ET.SubElement(root, "text", {"x": repr(vp.width - vp.pad - 120), "y": repr(vp.pad + 14 * i),
                                         "font-size": "11", "fill": color})
        t.text = name
    _save(root, path)
    return vp
