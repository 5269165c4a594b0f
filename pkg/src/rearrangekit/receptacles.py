"""Free-space receptacles on platforms.

Geometry is computed once per platform state in world compass directions
(N = +y, counterclockwise). A heading only relabels the eight regions: the
compass direction the robot faces becomes ``front``. This keeps placement
and judging independent of where the robot happens to stand.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

from .geometry import EPS, Rect, Region, is_connected
from .scene import Heading, SceneError, SceneGraph

MIN_EXTENT = 0.02

# compass index -> unit step; 0 = N (+y), counterclockwise
COMPASS: Tuple[Tuple[int, int], ...] = (
    (0, 1),
    (-1, 1),
    (-1, 0),
    (-1, -1),
    (0, -1),
    (1, -1),
    (1, 0),
    (1, 1),
)
COMPASS_INDEX = {v: i for i, v in enumerate(COMPASS)}


class Direction(Enum):
    FRONT = 1
    FRONT_LEFT = 2
    LEFT = 3
    REAR_LEFT = 4
    REAR = 5
    REAR_RIGHT = 6
    RIGHT = 7
    FRONT_RIGHT = 8

    @property
    def key(self) -> str:
        return self.name.lower()

    @property
    def label(self) -> str:
        return self.name.lower().replace("_", "-")

    @property
    def opposite(self) -> "Direction":
        return Direction((self.value + 3) % 8 + 1)

    @property
    def is_cardinal(self) -> bool:
        return self.value % 2 == 1

    @classmethod
    def parse(cls, text: str) -> "Direction":
        key = text.strip().lower().replace("-", "_").replace(" ", "_")
        key = key.replace("back", "rear")
        try:
            return cls[key.upper()]
        except KeyError:
            raise ValueError(f"unknown direction {text!r}") from None

    def compass(self, heading: Heading) -> int:
        return (self.value - 1 + 2 * heading.quarter_turns) % 8

    @classmethod
    def from_compass(cls, compass: int, heading: Heading) -> "Direction":
        return cls((compass - 2 * heading.quarter_turns) % 8 + 1)


OPPOSITE_PAIRS = frozenset(
    frozenset((d, d.opposite)) for d in Direction
)

# grid index (row-major from the robot's far-left) -> direction; 5 is the center
GRID_LAYOUT: Tuple[Optional[Direction], ...] = (
    Direction.FRONT_LEFT,
    Direction.FRONT,
    Direction.FRONT_RIGHT,
    Direction.LEFT,
    None,
    Direction.RIGHT,
    Direction.REAR_LEFT,
    Direction.REAR,
    Direction.REAR_RIGHT,
)
GRID_INDEX = {d: i + 1 for i, d in enumerate(GRID_LAYOUT)}


class ReceptacleError(SceneError):
    pass


class NotEmpty(ReceptacleError):
    pass


class SamePlatformRequired(ReceptacleError):
    pass


class Disconnected(ReceptacleError):
    pass


class MixedPlatforms(ReceptacleError):
    pass


@dataclass(frozen=True)
class GridCell:
    platform_id: str
    index: int
    rect: Rect
    direction: Optional[Direction]  # None for the center cell

    @property
    def label(self) -> str:
        return self.direction.label if self.direction else "center"


@dataclass(frozen=True)
class Receptacle:
    platform_id: str
    anchor: str
    direction: Direction
    compass: int
    rect: Rect
    kind: str  # "initial" or "refined"


Selectable = Union[Receptacle, GridCell]


def _usable(rect_vals: Tuple[float, float, float, float]) -> Optional[Rect]:
    x0, y0, x1, y1 = rect_vals
    if x1 - x0 < MIN_EXTENT - EPS or y1 - y0 < MIN_EXTENT - EPS:
        return None
    return Rect(x0, y0, x1, y1)


# ---------------------------------------------------------------------------
# pure geometry, world compass keyed


def grid_regions(platform: Rect) -> Dict[Optional[int], Rect]:
    """Nine equal cells keyed by compass index (None = center)."""
    xs = [platform.xmin + platform.width * i / 3 for i in range(4)]
    ys = [platform.ymin + platform.depth * j / 3 for j in range(4)]
    xs[3], ys[3] = platform.xmax, platform.ymax
    out: Dict[Optional[int], Rect] = {}
    for i in range(3):
        for j in range(3):
            step = (i - 1, j - 1)
            key = None if step == (0, 0) else COMPASS_INDEX[step]
            out[key] = Rect(xs[i], ys[j], xs[i + 1], ys[j + 1])
    return out


def _axis_span(lo: float, hi: float, step: int, plo: float, phi: float) -> Tuple[float, float]:
    if step > 0:
        return hi, phi
    if step < 0:
        return plo, lo
    return lo, hi


def initial_regions(platform: Rect, anchor: Rect) -> Dict[int, Rect]:
    """Edge sweeps (cardinals) and vertex traces (diagonals) out to the boundary."""
    a = anchor.intersection(platform) or anchor
    out = {}
    for c, (sx, sy) in enumerate(COMPASS):
        x0, x1 = _axis_span(a.xmin, a.xmax, sx, platform.xmin, platform.xmax)
        y0, y1 = _axis_span(a.ymin, a.ymax, sy, platform.ymin, platform.ymax)
        r = _usable((x0, y0, x1, y1))
        if r is not None:
            out[c] = r
    return out


def refined_regions(platform: Rect, anchor: Rect, others: Sequence[Rect]) -> Dict[int, Rect]:
    """Refined receptacles around one anchor.

    Cardinal edges are projected until a footprint that overlaps the swept
    band blocks them. Diagonal vertices are projected along both adjacent axes
    until the first extension line of any other footprint; a diagonal region
    that still meets a footprint (possible only when that footprint covers the
    whole corner) is dropped.
    """
    a = anchor.intersection(platform) or anchor
    out: Dict[int, Rect] = {}
    for c, (sx, sy) in enumerate(COMPASS):
        if sx == 0 or sy == 0:
            rect = _cardinal(platform, a, others, sx, sy)
        else:
            rect = _diagonal(platform, a, others, sx, sy)
        if rect is not None:
            out[c] = rect
    return out


def _cardinal(platform: Rect, a: Rect, others: Sequence[Rect], sx: int, sy: int) -> Optional[Rect]:
    if sx != 0:
        band_lo, band_hi = a.ymin, a.ymax
        blockers = [o for o in others if min(o.ymax, band_hi) - max(o.ymin, band_lo) > EPS]
        if sx > 0:
            stop = platform.xmax
            for o in blockers:
                if o.xmax > a.xmax + EPS:
                    stop = min(stop, max(o.xmin, a.xmax))
            vals = (a.xmax, a.ymin, stop, a.ymax)
        else:
            stop = platform.xmin
            for o in blockers:
                if o.xmin < a.xmin - EPS:
                    stop = max(stop, min(o.xmax, a.xmin))
            vals = (stop, a.ymin, a.xmin, a.ymax)
    else:
        band_lo, band_hi = a.xmin, a.xmax
        blockers = [o for o in others if min(o.xmax, band_hi) - max(o.xmin, band_lo) > EPS]
        if sy > 0:
            stop = platform.ymax
            for o in blockers:
                if o.ymax > a.ymax + EPS:
                    stop = min(stop, max(o.ymin, a.ymax))
            vals = (a.xmin, a.ymax, a.xmax, stop)
        else:
            stop = platform.ymin
            for o in blockers:
                if o.ymin < a.ymin - EPS:
                    stop = max(stop, min(o.ymax, a.ymin))
            vals = (a.xmin, stop, a.xmax, a.ymin)
    return _usable(vals)


def _first_line(start: float, step: int, lines: Iterable[float], bound: float) -> float:
    if step > 0:
        cand = [v for v in lines if v > start + EPS]
        return min([bound] + cand)
    cand = [v for v in lines if v < start - EPS]
    return max([bound] + cand)


def _diagonal(platform: Rect, a: Rect, others: Sequence[Rect], sx: int, sy: int) -> Optional[Rect]:
    xlines = [v for o in others for v in (o.xmin, o.xmax)]
    ylines = [v for o in others for v in (o.ymin, o.ymax)]
    vx = a.xmax if sx > 0 else a.xmin
    vy = a.ymax if sy > 0 else a.ymin
    ex = _first_line(vx, sx, xlines, platform.xmax if sx > 0 else platform.xmin)
    ey = _first_line(vy, sy, ylines, platform.ymax if sy > 0 else platform.ymin)
    rect = _usable((min(vx, ex), min(vy, ey), max(vx, ex), max(vy, ey)))
    if rect is None or any(rect.overlaps(o) for o in others):
        return None
    return rect


# ---------------------------------------------------------------------------
# graph-facing operations


def _heading(graph: SceneGraph, platform_id: str, heading: Optional[Heading]) -> Heading:
    return heading if heading is not None else graph.canonical_heading(platform_id)


def make_grid_cells(platform_id: str, platform: Rect, heading: Heading) -> List[GridCell]:
    regions = grid_regions(platform)
    cells = []
    for idx, d in enumerate(GRID_LAYOUT, start=1):
        key = None if d is None else d.compass(heading)
        cells.append(GridCell(platform_id, idx, regions[key], d))
    return cells


def segment_empty_platform(graph: SceneGraph, platform_id: str, heading: Optional[Heading] = None) -> List[GridCell]:
    if graph.children(platform_id):
        raise NotEmpty(platform_id)
    h = _heading(graph, platform_id, heading)
    return make_grid_cells(platform_id, graph.platforms[platform_id].rect, h)


def _label(regions: Mapping[int, Rect], platform_id: str, anchor: str, heading: Heading, kind: str) -> List[Receptacle]:
    recs = [
        Receptacle(platform_id, anchor, Direction.from_compass(c, heading), c, r, kind)
        for c, r in regions.items()
    ]
    return sorted(recs, key=lambda r: r.direction.value)


def compute_initial_receptacles(
    graph: SceneGraph, platform_id: str, anchor: str, heading: Optional[Heading] = None
) -> List[Receptacle]:
    if graph.parent.get(anchor) != platform_id:
        raise SamePlatformRequired(f"{anchor} is not on {platform_id}")
    h = _heading(graph, platform_id, heading)
    regions = initial_regions(graph.platforms[platform_id].rect, graph.footprint(anchor))
    return _label(regions, platform_id, anchor, h, "initial")


def relative_directions(
    graph: SceneGraph, anchor: str, other: str, heading: Optional[Heading] = None
) -> set:
    pid = graph.parent.get(anchor)
    if pid is None or graph.parent.get(other) != pid:
        raise SamePlatformRequired(f"{anchor} and {other} are not on one platform")
    fp = graph.footprint(other)
    return {
        r.direction
        for r in compute_initial_receptacles(graph, pid, anchor, heading)
        if r.rect.overlaps(fp)
    }


def platform_footprints(graph: SceneGraph, platform_id: str, exclude: Iterable[str] = ()) -> Dict[str, Rect]:
    skip = set(exclude)
    return {o: graph.footprint(o) for o in graph.children(platform_id) if o not in skip}


def refined_compass_regions(platform: Rect, footprints: Mapping[str, Rect]) -> Dict[str, Dict[int, Rect]]:
    items = sorted(footprints.items())
    out = {}
    for oid, fp in items:
        others = [r for o, r in items if o != oid]
        out[oid] = refined_regions(platform, fp, others)
    return out


def refine_receptacles(
    graph: SceneGraph,
    platform_id: str,
    heading: Optional[Heading] = None,
    exclude: Iterable[str] = (),
) -> Dict[str, List[Receptacle]]:
    """Refined receptacles for every anchor on the platform."""
    fps = platform_footprints(graph, platform_id, exclude)
    h = _heading(graph, platform_id, heading)
    regions = refined_compass_regions(graph.platforms[platform_id].rect, fps)
    return {oid: _label(regs, platform_id, oid, h, "refined") for oid, regs in regions.items()}


def merge_receptacles(selection: Sequence[Selectable], generation: bool = False) -> Region:
    if not selection:
        raise ReceptacleError("empty selection")
    if generation and len(selection) > 4:
        raise ReceptacleError("task generation merges at most four receptacles")
    if len({s.platform_id for s in selection}) > 1:
        raise MixedPlatforms(sorted({s.platform_id for s in selection}))
    rects = [s.rect for s in selection]
    if not is_connected(rects):
        raise Disconnected("selected receptacles do not form one connected region")
    return Region.of(rects)
