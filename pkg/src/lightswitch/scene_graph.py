"""Scene graph world model learned through interaction.

Vertices carry a pose, a class, a primitive set and a state; edges are
unordered ``controls`` relations between a switch (or door) and the object it
operates. Every operation returns a new graph and leaves its input untouched,
so earlier snapshots stay valid for readers.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .affordance import AffordanceDescriptor, GripperOffsets, MotionPrimitive, primitives_from_descriptor
from .bbox import BoundingBox
from .errors import DuplicateRegistration, NotALamp, NotASwitch, SchemaViolation, UnknownVertex
from .geometry import ElementPose

VERTEX_CLASSES = ("switch", "lamp", "swing_door", "other")
CONTROLLER_CLASSES = ("switch", "swing_door")

OFF_TO_ON = "off_to_on"
ON_TO_OFF = "on_to_off"
NO_CHANGE = "no_change"
STATE_CHANGES = (OFF_TO_ON, ON_TO_OFF, NO_CHANGE)

DEFAULT_RADIUS = 0.15


@dataclass
class Vertex:
    id: str
    cls: str
    pose: ElementPose
    primitives: list[MotionPrimitive] = field(default_factory=list)
    state: object = "none"

    def __post_init__(self):
        if self.cls not in VERTEX_CLASSES:
            raise ValueError(f"unknown vertex class {self.cls!r}")
        if self.cls == "lamp" and self.state not in ("on", "off"):
            raise ValueError("lamp state must be 'on' or 'off'")
        if self.cls == "swing_door":
            if not isinstance(self.state, (int, float)) or not 0 <= self.state <= np.pi / 2:
                raise ValueError("door state must be an angle in [0, pi/2]")
        elif self.cls != "lamp" and self.state not in ("on", "off", "none"):
            raise ValueError(f"bad state {self.state!r}")

    def to_dict(self) -> dict:
        return {"id": self.id, "class": self.cls, "pose": self.pose.to_dict(),
                "primitives": [p.to_dict() for p in self.primitives], "state": self.state}


@dataclass
class SceneGraph:
    vertices: dict[str, Vertex] = field(default_factory=dict)
    edges: dict[frozenset, str] = field(default_factory=dict)

    def copy(self) -> "SceneGraph":
        return copy.deepcopy(self)

    def vertex(self, vid) -> Vertex:
        try:
            return self.vertices[vid]
        except KeyError:
            raise UnknownVertex(f"no vertex {vid!r}") from None

    def of_class(self, cls: str) -> list[Vertex]:
        return [v for v in self.vertices.values() if v.cls == cls]

    def has_edge(self, a, b) -> bool:
        return frozenset((a, b)) in self.edges

    def edge_pairs(self) -> set[tuple[str, str]]:
        """Edges as (controller, controlled) tuples."""
        out = set()
        for e in self.edges:
            a, b = tuple(e)
            if self.vertices[a].cls in CONTROLLER_CLASSES and self.vertices[b].cls not in CONTROLLER_CLASSES:
                out.add((a, b))
            elif self.vertices[b].cls in CONTROLLER_CLASSES and self.vertices[a].cls not in CONTROLLER_CLASSES:
                out.add((b, a))
            else:
                out.add(tuple(sorted((a, b))))
        return out

    def add_vertex(self, v: Vertex) -> None:
        if v.id in self.vertices:
            raise SchemaViolation(f"vertices[{v.id}]", "duplicate vertex id")
        self.vertices[v.id] = v

    def add_edge(self, a, b, relation: str = "controls") -> None:
        va, vb = self.vertex(a), self.vertex(b)
        if (va.cls in CONTROLLER_CLASSES) == (vb.cls in CONTROLLER_CLASSES):
            raise SchemaViolation(f"edges[{a},{b}]", "an edge must join a controller to a controlled object")
        self.edges.setdefault(frozenset((a, b)), relation)

    def __eq__(self, other):
        if not isinstance(other, SceneGraph):
            return NotImplemented
        return serialize_graph(self) == serialize_graph(other)


@dataclass(frozen=True)
class Detection3D:
    position: np.ndarray
    confidence: float
    source_frame: str = ""
    bbox: BoundingBox | None = None
    normal: np.ndarray | None = None

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError("confidence must lie in [0, 1]")
        object.__setattr__(self, "position", np.asarray(self.position, dtype=float).reshape(3))

    @classmethod
    def from_dict(cls, d: dict) -> "Detection3D":
        bbox = BoundingBox(*d["bbox"]) if d.get("bbox") is not None else None
        normal = np.asarray(d["normal"], dtype=float) if d.get("normal") is not None else None
        return cls(np.asarray(d["position"], dtype=float), float(d["confidence"]), str(d.get("frame", "")),
                   bbox, normal)


@dataclass
class Cluster:
    members: list[Detection3D]
    centroid: np.ndarray

    @property
    def representative(self) -> Detection3D:
        # members are inserted in descending confidence order
        return self.members[0]


def cluster_detections(dets: Sequence[Detection3D], radius: float = DEFAULT_RADIUS) -> list[Cluster]:
    """Greedy clustering in descending confidence order.

    A detection joins the first cluster whose centroid lies within ``radius``;
    the centroid is updated on every insertion. Ties in confidence keep input
    order.
    """
    if radius <= 0:
        raise ValueError("radius must be positive")
    order = sorted(range(len(dets)), key=lambda i: -dets[i].confidence)
    clusters: list[Cluster] = []
    for i in order:
        d = dets[i]
        for c in clusters:
            if np.linalg.norm(d.position - c.centroid) <= radius:
                c.members.append(d)
                c.centroid = np.mean([m.position for m in c.members], axis=0)
                break
        else:
            clusters.append(Cluster([d], d.position.copy()))
    return clusters


def _next_id(graph: SceneGraph, prefix: str, start: int) -> tuple[str, int]:
    k = start
    while f"{prefix}_{k:03d}" in graph.vertices:
        k += 1
    return f"{prefix}_{k:03d}", k + 1


def register_switches(graph: SceneGraph, clusters: Iterable[Cluster], radius: float = DEFAULT_RADIUS,
                      default_normal=(0.0, 0.0, 1.0)) -> SceneGraph:
    """Add one switch vertex per cluster, posed at its best detection.

    Detections carry no normal unless one is supplied, so ``default_normal``
    is a placeholder until the vertex is refined close up.
    """
    g = graph.copy()
    existing = [v.pose.center for v in g.of_class("switch")]
    k = 0
    for c in clusters:
        rep = c.representative
        for p in existing:
            if np.linalg.norm(rep.position - p) <= radius:
                raise DuplicateRegistration(f"switch at {rep.position.tolist()} is already registered")
        vid, k = _next_id(g, "switch", k)
        normal = rep.normal if rep.normal is not None else default_normal
        g.add_vertex(Vertex(vid, "switch", ElementPose.from_vectors(rep.position, normal)))
        existing.append(rep.position)
    return g


def apply_interaction_result(graph: SceneGraph, switch_id: str, observations) -> SceneGraph:
    """Add a controls edge and the new lamp state for every observed change."""
    g = graph.copy()
    sw = g.vertex(switch_id)
    if sw.cls not in CONTROLLER_CLASSES:
        raise NotASwitch(f"{switch_id!r} is a {sw.cls}")
    for lamp_id, change in observations:
        lamp = g.vertex(lamp_id)
        if lamp.cls != "lamp":
            raise NotALamp(f"{lamp_id!r} is a {lamp.cls}")
        if change not in STATE_CHANGES:
            raise ValueError(f"unknown state change {change!r}")
    for lamp_id, change in observations:
        if change == NO_CHANGE:
            continue
        g.add_edge(switch_id, lamp_id)
        g.vertices[lamp_id].state = "on" if change == OFF_TO_ON else "off"
    return g


def refine_switch_vertex(graph: SceneGraph, switch_id: str, desc: AffordanceDescriptor, pose: ElementPose,
                         offsets: GripperOffsets | None = None) -> SceneGraph:
    g = graph.copy()
    v = g.vertex(switch_id)
    if v.cls != "switch":
        raise NotASwitch(f"{switch_id!r} is a {v.cls}")
    v.primitives = primitives_from_descriptor(desc, pose, offsets)
    v.pose = pose
    return g


def add_lamps(graph: SceneGraph, lamps) -> SceneGraph:
    """Add lamp vertices from an inventory of ``{"id", "position"}`` records, all off."""
    g = graph.copy()
    for lamp in lamps:
        pose = ElementPose.from_vectors(lamp["position"], lamp.get("normal", (0.0, 0.0, -1.0)))
        g.add_vertex(Vertex(str(lamp["id"]), "lamp", pose, [], lamp.get("state", "off")))
    return g


# -- serialisation -----------------------------------------------------------

def graph_to_dict(graph: SceneGraph) -> dict:
    vertices = [graph.vertices[k].to_dict() for k in sorted(graph.vertices)]
    edges = []
    for e, rel in graph.edges.items():
        a, b = sorted(e)
        edges.append({"a": a, "b": b, "relation": rel})
    edges.sort(key=lambda x: (x["a"], x["b"]))
    return {"vertices": vertices, "edges": edges}


def serialize_graph(graph: SceneGraph) -> str:
    return json.dumps(graph_to_dict(graph), separators=(",", ":"))


def _vec(obj, path: str) -> np.ndarray:
    if not isinstance(obj, list) or len(obj) != 3 or not all(
            isinstance(x, (int, float)) and not isinstance(x, bool) for x in obj):
        raise SchemaViolation(path, "expected a list of 3 numbers")
    return np.asarray(obj, dtype=float)


def graph_from_dict(data) -> SceneGraph:
    if not isinstance(data, dict):
        raise SchemaViolation("$", "expected an object")
    for key in ("vertices", "edges"):
        if not isinstance(data.get(key), list):
            raise SchemaViolation(f"$.{key}", "expected a list")
    g = SceneGraph()
    for i, v in enumerate(data["vertices"]):
        path = f"$.vertices[{i}]"
        if not isinstance(v, dict):
            raise SchemaViolation(path, "expected an object")
        for key in ("id", "class", "pose"):
            if key not in v:
                raise SchemaViolation(f"{path}.{key}", "missing")
        pose_d = v["pose"]
        if not isinstance(pose_d, dict):
            raise SchemaViolation(f"{path}.pose", "expected an object")
        center = _vec(pose_d.get("center"), f"{path}.pose.center")
        normal = _vec(pose_d.get("normal"), f"{path}.pose.normal")
        if abs(np.linalg.norm(normal) - 1.0) > 1e-9:
            raise SchemaViolation(f"{path}.pose.normal", "not a unit vector")
        prims = []
        for j, p in enumerate(v.get("primitives", [])):
            ppath = f"{path}.primitives[{j}]"
            if not isinstance(p, dict) or "type" not in p:
                raise SchemaViolation(ppath, "expected an object with a type")
            try:
                prims.append(MotionPrimitive(p["type"], _vec(p.get("axis"), f"{ppath}.axis"),
                                             _vec(p.get("origin"), f"{ppath}.origin")))
            except ValueError as exc:
                raise SchemaViolation(ppath, str(exc)) from None
        try:
            vertex = Vertex(str(v["id"]), v["class"], ElementPose(center, normal), prims, v.get("state", "none"))
        except ValueError as exc:
            raise SchemaViolation(path, str(exc)) from None
        g.add_vertex(vertex)
    for i, e in enumerate(data["edges"]):
        path = f"$.edges[{i}]"
        if not isinstance(e, dict) or "a" not in e or "b" not in e:
            raise SchemaViolation(path, "expected an object with a and b")
        for key in ("a", "b"):
            if e[key] not in g.vertices:
                raise SchemaViolation(f"{path}.{key}", f"unknown vertex {e[key]!r}")
        if g.has_edge(e["a"], e["b"]):
            raise SchemaViolation(path, "duplicate edge")
        g.add_edge(e["a"], e["b"], e.get("relation", "controls"))
    return g


def deserialize_graph(text: str) -> SceneGraph:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaViolation("$", f"invalid JSON: {exc}") from None
    return graph_from_dict(data)
