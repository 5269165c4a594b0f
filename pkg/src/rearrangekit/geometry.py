"""Axis-aligned footprint geometry.

All rectangles live in the world XY plane (z up). Placement search runs over
the event grid of rectangle edge coordinates, which is exact for rectilinear
unions: the feasible set of lower-left corners is a union of closed cells of
that grid, so its lexicographic minimum sits on a grid line.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence, Tuple

import numpy as np

EPS = 1e-9
DEFAULT_MARGIN = 0.01


class GeometryError(ValueError):
    pass


@dataclass(frozen=True)
class Rect:
    xmin: float
    ymin: float
    xmax: float
    ymax: float

    def __post_init__(self):
        vals = (self.xmin, self.ymin, self.xmax, self.ymax)
        if not all(math.isfinite(v) for v in vals):
            raise GeometryError(f"non-finite rect {vals}")
        if not (self.xmin < self.xmax and self.ymin < self.ymax):
            raise GeometryError(f"degenerate rect {vals}")

    @classmethod
    def from_seq(cls, seq: Sequence[float]) -> "Rect":
        xmin, ymin, xmax, ymax = (float(v) for v in seq)
        return cls(xmin, ymin, xmax, ymax)

    @classmethod
    def from_center(cls, cx: float, cy: float, width: float, depth: float) -> "Rect":
        return cls(cx - width / 2, cy - depth / 2, cx + width / 2, cy + depth / 2)

    @property
    def width(self) -> float:
        return self.xmax - self.xmin

    @property
    def depth(self) -> float:
        return self.ymax - self.ymin

    @property
    def area(self) -> float:
        return self.width * self.depth

    @property
    def center(self) -> Tuple[float, float]:
        return ((self.xmin + self.xmax) / 2, (self.ymin + self.ymax) / 2)

    def as_list(self) -> list:
        return [self.xmin, self.ymin, self.xmax, self.ymax]

    def overlap_area(self, other: "Rect") -> float:
        dx = min(self.xmax, other.xmax) - max(self.xmin, other.xmin)
        dy = min(self.ymax, other.ymax) - max(self.ymin, other.ymin)
        if dx <= 0 or dy <= 0:
            return 0.0
        return dx * dy

    def overlaps(self, other: "Rect", tol: float = EPS) -> bool:
        """Positive-area intersection (edge contact does not count)."""
        dx = min(self.xmax, other.xmax) - max(self.xmin, other.xmin)
        dy = min(self.ymax, other.ymax) - max(self.ymin, other.ymin)
        return dx > tol and dy > tol

    def intersection(self, other: "Rect") -> Optional["Rect"]:
        if not self.overlaps(other):
            return None
        return Rect(
            max(self.xmin, other.xmin),
            max(self.ymin, other.ymin),
            min(self.xmax, other.xmax),
            min(self.ymax, other.ymax),
        )

    def contains(self, other: "Rect", slack: float = EPS) -> bool:
        return (
            other.xmin >= self.xmin - slack
            and other.ymin >= self.ymin - slack
            and other.xmax <= self.xmax + slack
            and other.ymax <= self.ymax + slack
        )

    def contains_point(self, x: float, y: float, slack: float = EPS) -> bool:
        return (
            self.xmin - slack <= x <= self.xmax + slack
            and self.ymin - slack <= y <= self.ymax + slack
        )

    def expanded(self, margin: float) -> "Rect":
        return Rect(self.xmin - margin, self.ymin - margin, self.xmax + margin, self.ymax + margin)

    def shrunk(self, margin: float) -> "Rect":
        return self.expanded(-margin)

    def translated(self, dx: float, dy: float) -> "Rect":
        return Rect(self.xmin + dx, self.ymin + dy, self.xmax + dx, self.ymax + dy)

    def iou(self, other: "Rect") -> float:
        inter = self.overlap_area(other)
        if inter == 0.0:
            return 0.0
        return inter / (self.area + other.area - inter)


@dataclass(frozen=True)
class Footprint:
    width: float
    depth: float

    def __post_init__(self):
        if not (self.width > 0 and self.depth > 0):
            raise GeometryError(f"footprint extents must be positive: {self.width}x{self.depth}")

    @classmethod
    def of(cls, rect: Rect) -> "Footprint":
        return cls(rect.width, rect.depth)


@dataclass(frozen=True)
class Region:
    """A rectilinear union of rects; order is preserved but carries no meaning."""

    rects: Tuple[Rect, ...]

    def __post_init__(self):
        if not self.rects:
            raise GeometryError("empty region")

    @classmethod
    def of(cls, rects: Iterable[Rect]) -> "Region":
        return cls(tuple(rects))

    @property
    def bbox(self) -> Rect:
        return Rect(
            min(r.xmin for r in self.rects),
            min(r.ymin for r in self.rects),
            max(r.xmax for r in self.rects),
            max(r.ymax for r in self.rects),
        )

    def is_connected(self) -> bool:
        return is_connected(self.rects)


@dataclass(frozen=True)
class Placement:
    center: Tuple[float, float]
    rect: Rect  # footprint inflated by the margin
    margin: float

    @property
    def footprint(self) -> Rect:
        return self.rect.shrunk(self.margin)


def rects_connected(a: Rect, b: Rect, tol: float = EPS) -> bool:
    """True for shared area or a shared boundary segment of positive length."""
    dx = min(a.xmax, b.xmax) - max(a.xmin, b.xmin)
    dy = min(a.ymax, b.ymax) - max(a.ymin, b.ymin)
    if dx < -tol or dy < -tol:
        return False
    return dx > tol or dy > tol


def is_connected(rects: Sequence[Rect]) -> bool:
    n = len(rects)
    if n == 0:
        return False
    seen = {0}
    stack = [0]
    while stack:
        i = stack.pop()
        for j in range(n):
            if j not in seen and rects_connected(rects[i], rects[j]):
                seen.add(j)
                stack.append(j)
    return len(seen) == n


def _coverage_grid(rects: Sequence[Rect]):
    xs = sorted({v for r in rects for v in (r.xmin, r.xmax)})
    ys = sorted({v for r in rects for v in (r.ymin, r.ymax)})
    covered = np.zeros((len(xs) - 1, len(ys) - 1), dtype=np.int64)
    for r in rects:
        i0 = bisect.bisect_left(xs, r.xmin)
        i1 = bisect.bisect_left(xs, r.xmax)
        j0 = bisect.bisect_left(ys, r.ymin)
        j1 = bisect.bisect_left(ys, r.ymax)
        covered[i0:i1, j0:j1] = 1
    # summed-area table with a zero border
    sat = np.zeros((covered.shape[0] + 1, covered.shape[1] + 1), dtype=np.int64)
    sat[1:, 1:] = covered.cumsum(0).cumsum(1)
    return xs, ys, sat


def _cell_span(edges: Sequence[float], lo: float, hi: float) -> Optional[Tuple[int, int]]:
    """Cells whose open interval meets (lo, hi); None if the span leaves the grid."""
    if lo < edges[0] - EPS or hi > edges[-1] + EPS:
        return None
    i0 = bisect.bisect_right(edges, lo + EPS) - 1
    i1 = bisect.bisect_left(edges, hi - EPS)
    return max(i0, 0), min(i1, len(edges) - 1)


def _all_covered(sat, i0: int, i1: int, j0: int, j1: int) -> bool:
    want = (i1 - i0) * (j1 - j0)
    if want <= 0:
        return False
    got = sat[i1, j1] - sat[i0, j1] - sat[i1, j0] + sat[i0, j0]
    return int(got) == want


def _candidates(base: Iterable[float], lo: float, hi: float, midpoints: bool) -> list:
    vals = sorted({round(v, 12) for v in base if lo - EPS <= v <= hi + EPS})
    if midpoints:
        mids = [(a + b) / 2 for a, b in zip(vals, vals[1:])]
        vals = sorted(vals + mids)
    return vals


def find_placement(
    footprint: Footprint,
    region: Region,
    margin: float = DEFAULT_MARGIN,
    must_overlap: Sequence[Rect] = (),
) -> Optional[Placement]:
    """Lowest (y, x) placement of the margin-inflated footprint inside the region.

    With ``must_overlap`` the footprint (without margin) must also share positive
    area with every listed rect; those constraints are open sets, so interval
    midpoints join the candidate set.
    """
    if margin < 0:
        raise GeometryError("margin must be non-negative")
    w = footprint.width + 2 * margin
    d = footprint.depth + 2 * margin
    rects = region.rects
    if len(rects) == 1 and all(m == rects[0] for m in must_overlap):
        r = rects[0]
        if w > r.width + EPS or d > r.depth + EPS:
            return None
        rect = Rect(r.xmin, r.ymin, r.xmin + w, r.ymin + d)
        return Placement(center=rect.center, rect=rect, margin=margin)
    xs, ys, sat = _coverage_grid(rects)
    if w > xs[-1] - xs[0] + EPS or d > ys[-1] - ys[0] + EPS:
        return None

    x_base = list(xs) + [x - w for x in xs]
    y_base = list(ys) + [y - d for y in ys]
    for r in must_overlap:
        x_base += [r.xmin - w + margin, r.xmax - margin]
        y_base += [r.ymin - d + margin, r.ymax - margin]
    mids = bool(must_overlap)
    xc = _candidates(x_base, xs[0], xs[-1] - w, mids)
    yc = _candidates(y_base, ys[0], ys[-1] - d, mids)

    for y0 in yc:
        jspan = _cell_span(ys, y0, y0 + d)
        if jspan is None:
            continue
        for x0 in xc:
            ispan = _cell_span(xs, x0, x0 + w)
            if ispan is None or not _all_covered(sat, ispan[0], ispan[1], jspan[0], jspan[1]):
                continue
            rect = Rect(x0, y0, x0 + w, y0 + d)
            if must_overlap:
                fp = rect.shrunk(margin)
                if not all(fp.overlaps(r) for r in must_overlap):
                    continue
            return Placement(center=rect.center, rect=rect, margin=margin)
    return None


def max_inscribed_fit(f: Footprint, r: Region, margin: float = DEFAULT_MARGIN) -> Optional[Placement]:
    """Deterministic fit test; footprints are never rotated."""
    return find_placement(f, r, margin)
