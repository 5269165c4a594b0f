"""Scene ingest and the containment tree.

A scene file lists axis-aligned boxes. Objects resting on another object's
platform become its children; everything else stands on the ground. Ground
objects get walkable strips on the sides of their bounding box, which also
fix the heading (the facing direction of a robot standing there).
"""

from __future__ import annotations

import hashlib
import json
import math
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

from .geometry import Rect

NAME_RE = re.compile(r"^[A-Za-z]+(_[A-Za-z0-9]+)+$")
HEIGHT_TOL = 0.02
CONTAIN_SLACK = 0.01
OVERLAP_IOU = 0.25
WALKABLE_CLEARANCE = 0.5
MAX_CLEARANCE = 2.0
HELD = "held"

# (label, outward normal); also the tie-break order for navigation
SIDES: Tuple[Tuple[str, Tuple[int, int]], ...] = (
    ("+y", (0, 1)),
    ("+x", (1, 0)),
    ("-y", (0, -1)),
    ("-x", (-1, 0)),
)
SIDE_ORDER = {label: i for i, (label, _) in enumerate(SIDES)}


class SceneError(Exception):
    pass


class SchemaError(SceneError):
    pass


class MalformedName(SchemaError):
    pass


class UnsupportedPose(SceneError):
    pass


class DuplicateId(SceneError):
    pass


class AmbiguousSupport(SceneError):
    pass


class OverlapError(SceneError):
    pass


@dataclass(frozen=True)
class PlatformDecl:
    rect: Rect
    height: float
    clearance: float
    internal: bool = False


@dataclass(frozen=True)
class SceneObject:
    id: str
    name: str
    position: Tuple[float, float, float]  # bbox center
    half_extents: Tuple[float, float, float]  # object frame
    yaw_degrees: float = 0.0
    declared_platforms: Tuple[PlatformDecl, ...] = ()

    @property
    def category(self) -> str:
        return self.name.split("_", 1)[0]

    @property
    def world_half_extents(self) -> Tuple[float, float, float]:
        hx, hy, hz = self.half_extents
        if int(round(self.yaw_degrees)) % 180 != 0:
            return (hy, hx, hz)
        return (hx, hy, hz)

    @property
    def footprint(self) -> Rect:
        hx, hy, _ = self.world_half_extents
        x, y, _ = self.position
        return Rect(x - hx, y - hy, x + hx, y + hy)

    @property
    def base_z(self) -> float:
        return self.position[2] - self.world_half_extents[2]

    @property
    def top_z(self) -> float:
        return self.position[2] + self.world_half_extents[2]

    @property
    def height(self) -> float:
        return 2 * self.world_half_extents[2]

    def moved_to(self, rect: Rect, base_z: float) -> "SceneObject":
        cx, cy = rect.center
        hz = self.world_half_extents[2]
        return replace(self, position=(cx, cy, base_z + hz))


@dataclass(frozen=True)
class Platform:
    platform_id: str
    owner: str
    index: int
    rect: Rect
    height: float
    clearance: float
    internal: bool = False


@dataclass(frozen=True)
class WalkableSpace:
    ground_id: str
    side: str
    segment: Rect
    facing: Tuple[int, int]

    @property
    def position(self) -> Tuple[float, float]:
        return self.segment.center


@dataclass(frozen=True)
class Heading:
    ground_id: str
    front: Tuple[int, int]

    @property
    def left(self) -> Tuple[int, int]:
        fx, fy = self.front
        return (-fy, fx)

    @property
    def right(self) -> Tuple[int, int]:
        fx, fy = self.front
        return (fy, -fx)

    @property
    def rear(self) -> Tuple[int, int]:
        fx, fy = self.front
        return (-fx, -fy)

    @property
    def quarter_turns(self) -> int:
        """Counterclockwise quarter turns from +y."""
        return {(0, 1): 0, (-1, 0): 1, (0, -1): 2, (1, 0): 3}[self.front]


def heading_for(ground_id: str, space: WalkableSpace) -> Heading:
    if space.ground_id != ground_id:
        raise SceneError(f"walkable space belongs to {space.ground_id}, not {ground_id}")
    return Heading(ground_id, space.facing)


def platform_id_for(object_id: str, k: int) -> str:
    return f"object_{object_id}_platform_{k}"


# ---------------------------------------------------------------------------
# ingest


def _num(v, what: str) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise SchemaError(f"{what}: expected number, got {v!r}")
    if not math.isfinite(v):
        raise SchemaError(f"{what}: non-finite value")
    return float(v)


def _vec(v, n: int, what: str) -> Tuple[float, ...]:
    if not isinstance(v, list) or len(v) != n:
        raise SchemaError(f"{what}: expected list of {n} numbers")
    return tuple(_num(x, what) for x in v)


def _require(d: dict, key: str, where: str):
    if key not in d:
        raise SchemaError(f"{where}: missing field {key!r}")
    return d[key]


def load_scene(document) -> List[SceneObject]:
    """Validate a scene document (dict or JSON text) into SceneObjects."""
    if isinstance(document, (str, bytes)):
        document = json.loads(document)
    if not isinstance(document, dict):
        raise SchemaError("scene document must be an object")
    raw_objects = _require(document, "objects", "scene")
    if not isinstance(raw_objects, list):
        raise SchemaError("scene.objects must be a list")
    seen = set()
    out = []
    for i, raw in enumerate(raw_objects):
        where = f"objects[{i}]"
        if not isinstance(raw, dict):
            raise SchemaError(f"{where}: expected object")
        oid = _require(raw, "id", where)
        name = _require(raw, "name", where)
        if not isinstance(oid, str) or not oid:
            raise SchemaError(f"{where}.id must be a nonempty string")
        if not isinstance(name, str):
            raise SchemaError(f"{where}.name must be a string")
        if not NAME_RE.match(name):
            raise MalformedName(f"{where}: name {name!r} is not '{{category}}_{{specific}}'")
        if oid in seen:
            raise DuplicateId(oid)
        seen.add(oid)
        pos = _vec(_require(raw, "position", where), 3, f"{where}.position")
        half = _vec(_require(raw, "half_extents", where), 3, f"{where}.half_extents")
        if any(h <= 0 for h in half):
            raise SchemaError(f"{where}.half_extents must be positive")
        yaw = _num(raw.get("yaw_degrees", 0.0), f"{where}.yaw_degrees")
        if abs(yaw - 90 * round(yaw / 90)) > 1e-6:
            raise UnsupportedPose(f"{where}: yaw {yaw} is not axis-aligned")
        yaw = float(90 * round(yaw / 90))
        decls = []
        for j, p in enumerate(raw.get("platforms") or []):
            pw = f"{where}.platforms[{j}]"
            if not isinstance(p, dict):
                raise SchemaError(f"{pw}: expected object")
            rect = _vec(_require(p, "rect", pw), 4, f"{pw}.rect")
            try:
                r = Rect.from_seq(rect)
            except ValueError as exc:
                raise SchemaError(f"{pw}.rect: {exc}") from None
            clearance = _num(_require(p, "clearance", pw), f"{pw}.clearance")
            if clearance <= 0:
                raise SchemaError(f"{pw}.clearance must be positive")
            internal = p.get("internal", False)
            if not isinstance(internal, bool):
                raise SchemaError(f"{pw}.internal must be a boolean")
            decls.append(PlatformDecl(r, _num(_require(p, "height", pw), f"{pw}.height"), clearance, internal))
        out.append(SceneObject(oid, name, pos, half, yaw, tuple(decls)))
    return out


def _scene_bounds(document, objects: Sequence[SceneObject]) -> Rect:
    if isinstance(document, dict) and "bounds" in document:
        return Rect.from_seq(_vec(document["bounds"], 4, "scene.bounds"))
    fps = [o.footprint for o in objects]
    return Rect(
        min(r.xmin for r in fps) - 1.0,
        min(r.ymin for r in fps) - 1.0,
        max(r.xmax for r in fps) + 1.0,
        max(r.ymax for r in fps) + 1.0,
    )


# ---------------------------------------------------------------------------
# graph


@dataclass
class SceneGraph:
    name: str
    bounds: Rect
    objects: Dict[str, SceneObject]
    platforms: Dict[str, Platform]
    parent: Dict[str, Optional[str]]  # object -> platform id, None for ground, HELD
    walkable: Dict[str, Tuple[WalkableSpace, ...]] = field(default_factory=dict)

    # -- structure --------------------------------------------------------

    def copy(self) -> "SceneGraph":
        return SceneGraph(
            self.name, self.bounds, dict(self.objects), dict(self.platforms), dict(self.parent), self.walkable
        )

    @property
    def ground_objects(self) -> List[str]:
        return sorted(o for o, p in self.parent.items() if p is None)

    def is_ground(self, oid: str) -> bool:
        return self.parent[oid] is None

    def children(self, platform_id: str) -> List[str]:
        return sorted(o for o, p in self.parent.items() if p == platform_id)

    def platforms_of(self, oid: str) -> List[Platform]:
        return sorted((p for p in self.platforms.values() if p.owner == oid), key=lambda p: p.index)

    def ground_owner(self, platform_id: str) -> str:
        oid = self.platforms[platform_id].owner
        while self.parent.get(oid) not in (None, HELD):
            oid = self.platforms[self.parent[oid]].owner
        return oid

    def containment(self, oid: str) -> Optional[str]:
        return self.parent[oid]

    def footprint(self, oid: str) -> Rect:
        return self.objects[oid].footprint

    def is_reachable(self, ground_id: str) -> bool:
        return bool(self.walkable.get(ground_id))

    def navigable_platforms(self) -> List[str]:
        """Platforms of reachable ground objects: the go_to targets."""
        return sorted(
            pid
            for pid, p in self.platforms.items()
            if self.parent.get(p.owner) is None and self.is_reachable(p.owner)
        )

    def movable_objects(self) -> List[str]:
        """Surface objects on a reachable ground object's platform with nothing on top."""
        out = []
        for oid, pid in self.parent.items():
            if pid in (None, HELD):
                continue
            owner = self.platforms[pid].owner
            if self.parent.get(owner) is not None or not self.is_reachable(owner):
                continue
            if any(self.children(p.platform_id) for p in self.platforms_of(oid)):
                continue
            out.append(oid)
        return sorted(out)

    def canonical_heading(self, platform_id: str) -> Heading:
        ground = self.ground_owner(platform_id)
        spaces = self.walkable.get(ground)
        if not spaces:
            raise SceneError(f"{ground} has no walkable space")
        return heading_for(ground, spaces[0])

    def same_category_count(self, oid: str, platform_id: Optional[str] = None) -> int:
        pid = platform_id if platform_id is not None else self.parent[oid]
        cat = self.objects[oid].category
        return sum(1 for o in self.children(pid) if self.objects[o].category == cat)

    # -- mutation (episode-local copies only) ------------------------------

    def pick(self, oid: str) -> None:
        self.parent[oid] = HELD

    def place(self, oid: str, platform_id: str, footprint: Rect) -> None:
        plat = self.platforms[platform_id]
        old = self.objects[oid]
        new = old.moved_to(footprint, plat.height)
        self.objects[oid] = new
        self.parent[oid] = platform_id
        dx = new.position[0] - old.position[0]
        dy = new.position[1] - old.position[1]
        dz = new.position[2] - old.position[2]
        for p in self.platforms_of(oid):
            self.platforms[p.platform_id] = replace(p, rect=p.rect.translated(dx, dy), height=p.height + dz)

    # -- serialization ------------------------------------------------------

    def to_document(self) -> dict:
        objs = []
        for oid in sorted(self.objects):
            o = self.objects[oid]
            rec = {
                "id": o.id,
                "name": o.name,
                "position": list(o.position),
                "yaw_degrees": o.yaw_degrees,
                "half_extents": list(o.half_extents),
            }
            if o.declared_platforms:
                rec["platforms"] = [
                    {"rect": d.rect.as_list(), "height": d.height, "clearance": d.clearance, "internal": d.internal}
                    for d in o.declared_platforms
                ]
            objs.append(rec)
        return {"name": self.name, "bounds": self.bounds.as_list(), "objects": objs}

    def digest(self) -> str:
        text = json.dumps(self.to_document(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()[:16]


def _object_platforms(obj: SceneObject, all_objects: Sequence[SceneObject]) -> List[Platform]:
    if obj.declared_platforms:
        decls = sorted(obj.declared_platforms, key=lambda d: d.height)
        fp = obj.footprint
        for d in decls:
            if not fp.contains(d.rect, CONTAIN_SLACK):
                raise SchemaError(f"{obj.id}: platform rect {d.rect.as_list()} leaves the object footprint")
        return [
            Platform(platform_id_for(obj.id, k), obj.id, k, d.rect, d.height, d.clearance, d.internal)
            for k, d in enumerate(decls)
        ]
    top = obj.top_z
    fp = obj.footprint
    gap = MAX_CLEARANCE
    for other in all_objects:
        if other.id == obj.id or not other.footprint.overlaps(fp):
            continue
        if other.base_z > top + HEIGHT_TOL:
            gap = min(gap, other.base_z - top)
    return [Platform(platform_id_for(obj.id, 0), obj.id, 0, fp, top, gap, False)]


def build_scene_graph(
    objects: Iterable[SceneObject],
    bounds: Optional[Rect] = None,
    name: str = "scene",
    clearance: float = WALKABLE_CLEARANCE,
) -> SceneGraph:
    objs = sorted(objects, key=lambda o: o.id)
    ids = [o.id for o in objs]
    if len(set(ids)) != len(ids):
        raise DuplicateId("duplicate object id")
    if bounds is None:
        bounds = _scene_bounds(None, objs)
    platforms: Dict[str, Platform] = {}
    for o in objs:
        for p in _object_platforms(o, objs):
            if p.platform_id in platforms:
                raise DuplicateId(p.platform_id)
            platforms[p.platform_id] = p

    parent: Dict[str, Optional[str]] = {}
    for o in objs:
        fp = o.footprint
        supports = [
            p
            for p in platforms.values()
            if p.owner != o.id and abs(o.base_z - p.height) <= HEIGHT_TOL and p.rect.contains(fp, CONTAIN_SLACK)
        ]
        if not supports:
            parent[o.id] = None
            continue
        supports.sort(key=lambda p: (-p.height, p.platform_id))
        if len(supports) > 1 and abs(supports[0].height - supports[1].height) <= HEIGHT_TOL:
            raise AmbiguousSupport(f"{o.id} rests on {supports[0].platform_id} and {supports[1].platform_id}")
        parent[o.id] = supports[0].platform_id

    graph = SceneGraph(name, bounds, {o.id: o for o in objs}, platforms, parent)
    _check_tree(graph)
    _check_overlaps(graph)
    graph.walkable = compute_walkable_spaces(graph, clearance)
    return graph


def _check_tree(graph: SceneGraph) -> None:
    for oid in graph.objects:
        seen = {oid}
        cur = oid
        while graph.parent[cur] is not None:
            cur = graph.platforms[graph.parent[cur]].owner
            if cur in seen:
                raise SceneError(f"containment cycle through {oid}")
            seen.add(cur)


def _check_overlaps(graph: SceneGraph) -> None:
    for pid in graph.platforms:
        kids = graph.children(pid)
        for i, a in enumerate(kids):
            for b in kids[i + 1:]:
                iou = graph.footprint(a).iou(graph.footprint(b))
                if iou > OVERLAP_IOU:
                    raise OverlapError(f"{a} and {b} overlap on {pid} (IoU {iou:.2f})")


def graph_from_document(document) -> SceneGraph:
    if isinstance(document, (str, bytes)):
        document = json.loads(document)
    objects = load_scene(document)
    bounds = _scene_bounds(document, objects)
    return build_scene_graph(objects, bounds, name=str(document.get("name", "scene")))


def load_scene_file(path) -> SceneGraph:
    return graph_from_document(json.loads(Path(path).read_text(encoding="utf-8")))


# ---------------------------------------------------------------------------
# walkable spaces


def _strip(fp: Rect, side: str, width: float) -> Rect:
    if side == "+y":
        return Rect(fp.xmin, fp.ymax, fp.xmax, fp.ymax + width)
    if side == "-y":
        return Rect(fp.xmin, fp.ymin - width, fp.xmax, fp.ymin)
    if side == "+x":
        return Rect(fp.xmax, fp.ymin, fp.xmax + width, fp.ymax)
    return Rect(fp.xmin - width, fp.ymin, fp.xmin, fp.ymax)


def compute_walkable_spaces(graph: SceneGraph, clearance: float = WALKABLE_CLEARANCE) -> Dict[str, Tuple[WalkableSpace, ...]]:
    grounds = graph.ground_objects
    out: Dict[str, Tuple[WalkableSpace, ...]] = {}
    for gid in grounds:
        fp = graph.footprint(gid)
        spaces = []
        for side, normal in SIDES:
            strip = _strip(fp, side, clearance)
            if not graph.bounds.contains(strip):
                continue
            if any(graph.footprint(o).overlaps(strip) for o in grounds if o != gid):
                continue
            spaces.append(WalkableSpace(gid, side, strip, (-normal[0], -normal[1])))
        out[gid] = tuple(spaces)
    return out


def unreachable_objects(graph: SceneGraph) -> List[str]:
    return [g for g in graph.ground_objects if not graph.walkable.get(g)]
