"""Model performance frontiers over a cloud of (metric1, metric2) points.

The frontier is traced on the convex hull: start at the hull vertex with the
best second metric and walk along the hull toward better first-metric values
for as long as the first metric strictly improves. With both metrics
maximized this is the upper-right hull chain; a minimized metric is handled
by negation.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

ORIENTATIONS = ("max-max", "max-min")


@dataclass(frozen=True)
class PerfPoint:
    m1: float
    m2: float
    config_id: str = ""


@dataclass(frozen=True)
class FrontierCurve:
    indices: tuple[int, ...]  # input indices, increasing in m1
    orientation: str

    def __len__(self):
        return len(self.indices)

    def __iter__(self):
        return iter(self.indices)


def _cross(o, a, b) -> float:
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def _as_points(points) -> np.ndarray:
    if len(points) and isinstance(points[0], PerfPoint):
        pts = np.array([[p.m1, p.m2] for p in points], dtype=np.float64)
    else:
        pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    if not np.all(np.isfinite(pts)):
        raise ValueError("points must be finite")
    return pts


def _distinct(pts: np.ndarray) -> list[int]:
    """Index of the first occurrence of each distinct point, sorted by (m1, m2)."""
    first = {}
    for i, p in enumerate(map(tuple, pts.tolist())):
        first.setdefault(p, i)
    return sorted(first.values(), key=lambda i: (pts[i, 0], pts[i, 1]))


def convex_hull(points) -> list[int]:
    """Hull vertex indices in clockwise order (Andrew's monotone chain).

    Duplicates collapse to their first occurrence and collinear boundary
    points are dropped. Sets with fewer than three distinct points, or all
    collinear, come back as their distinct extreme points in sorted order.
    """
    pts = _as_points(points)
    order = _distinct(pts)
    if len(order) <= 2:
        return order

    def chain(seq):
        out: list[int] = []
        for i in seq:
            while len(out) >= 2 and _cross(pts[out[-2]], pts[out[-1]], pts[i]) >= 0:
                out.pop()
            out.append(i)
        return out

    # with ">= 0" popping, each chain turns clockwise
    upper = chain(order)
    lower = chain(reversed(order))
    return upper[:-1] + lower[:-1]


def frontier(points, orientation: str = "max-max") -> FrontierCurve:
    if orientation not in ORIENTATIONS:
        raise ValueError(f"orientation must be one of {ORIENTATIONS}")
    pts = _as_points(points)
    if len(pts) == 0:
        return FrontierCurve((), orientation)
    if orientation == "max-min":
        pts = pts * np.array([1.0, -1.0])
    hull = convex_hull(pts)
    k = len(hull)
    # top vertex: largest m2, then largest m1
    top = max(range(k), key=lambda j: (pts[hull[j], 1], pts[hull[j], 0]))
    idxs = [hull[top]]
    # clockwise from the top moves toward larger m1 along the upper hull
    cur = top
    while k > 1:
        nxt = (cur + 1) % k
        if nxt == top or pts[hull[nxt], 0] <= pts[hull[cur], 0]:
            break
        idxs.append(hull[nxt])
        cur = nxt
    # counterclockwise from the top only reaches points with smaller m1 and
    # no larger m2; those are dominated by the top vertex, so nothing to add
    return FrontierCurve(tuple(idxs), orientation)


def pareto_set(points, orientation: str = "max-max") -> list[int]:
    """Indices of all nondominated points (brute force, O(n^2))."""
    pts = _as_points(points)
    if orientation == "max-min":
        pts = pts * np.array([1.0, -1.0])
    out = []
    for i in range(len(pts)):
        ge = np.all(pts >= pts[i], axis=1)
        gt = np.any(pts > pts[i], axis=1)
        if not np.any(ge & gt):
            out.append(i)
    return out


def write_frontier_csv(path, config_ids, m1, m2, orientation: str = "max-max",
                       header_line: str | None = None) -> FrontierCurve:
    """Rows ``config_id,m1,m2,on_frontier`` for every input point."""
    pts = np.column_stack([np.asarray(m1, float), np.asarray(m2, float)])
    curve = frontier(pts, orientation)
    on = set(curve.indices)
    with open(Path(path), "w", newline="") as f:
        if header_line:
            f.write(header_line + "\n")
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["config_id", "m1", "m2", "on_frontier"])
        for i, cid in enumerate(config_ids):
            w.writerow([cid, f"{pts[i, 0]:.9g}", f"{pts[i, 1]:.9g}", int(i in on)])
    return curve
