"""Deterministic stand-in for the robot, its camera, the detector and the room.

The environment knows the true switch geometry and the hidden wiring from
switch buttons to lamps. Everything random is drawn from named streams that
derive from one root seed, so toggling one noise source never perturbs the
draws of another.
"""

from __future__ import annotations

import copy
import math
import zlib
from dataclasses import dataclass, field

import numpy as np

from ..affordance import AffordanceDescriptor, MotionPrimitive, button_origins, parse_affordance_response, plane_axes
from ..bbox import BoundingBox, LineMap, render_polygon
from ..errors import InvalidSpec, SwitchError, UnknownLamp, UnknownSwitch
from ..geometry import CameraIntrinsics, CameraPose, DepthImage, ElementPose, angle_between, project_point
from ..scene_graph import NO_CHANGE, OFF_TO_ON, ON_TO_OFF, STATE_CHANGES

SUCCESS = "success"
DETECTION_FAILURE = "detection_failure"
REFINEMENT_FAILURE = "refinement_failure"
AFFORDANCE_FAILURE = "affordance_failure"
OUTCOMES = (SUCCESS, DETECTION_FAILURE, REFINEMENT_FAILURE, AFFORDANCE_FAILURE)

REFERENCE_DISTANCE = 1.5
DEFAULT_TOLERANCE = 0.015
AXIS_TOLERANCE_DEG = 15.0

# close-up camera used for every rendered view
DEFAULT_INTRINSICS = CameraIntrinsics(fx=240.0, fy=240.0, cx=119.5, cy=89.5, width=240, height=180)


class Streams:
    """Named, independently seeded RNG streams under one root seed."""

    def __init__(self, seed: int, *path: int):
        self.seed = int(seed)
        self.path = tuple(int(p) for p in path)
        self._gens: dict[str, np.random.Generator] = {}

    def __call__(self, name: str) -> np.random.Generator:
        if name not in self._gens:
            entropy = [self.seed, *self.path, zlib.crc32(name.encode())]
            self._gens[name] = np.random.default_rng(np.random.SeedSequence(entropy))
        return self._gens[name]

    def child(self, *path: int) -> "Streams":
        return Streams(self.seed, *self.path, *path)


@dataclass(frozen=True)
class NoiseConfig:
    detection_miss_rate: float = 0.0
    bbox_jitter_px: float = 0.0
    depth_sigma_m: float = 0.0
    oracle_error_rate: float = 0.0
    state_flip_rate: float = 0.0

    def __post_init__(self):
        for name in ("detection_miss_rate", "oracle_error_rate", "state_flip_rate"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise InvalidSpec(f"noise.{name}", f"must lie in [0, 1], got {v}")
        for name in ("bbox_jitter_px", "depth_sigma_m"):
            v = getattr(self, name)
            if not v >= 0.0:
                raise InvalidSpec(f"noise.{name}", f"must be >= 0, got {v}")

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @classmethod
    def from_dict(cls, d: dict | None) -> "NoiseConfig":
        d = d or {}
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise InvalidSpec(f"noise.{sorted(unknown)[0]}", "unknown field")
        return cls(**{k: float(v) for k, v in d.items()})


@dataclass(frozen=True)
class SimSwitch:
    pose: ElementPose
    descriptor: AffordanceDescriptor
    button_centers: tuple
    half_size: tuple = (0.04, 0.04)  # casing half width / half height, meters

    def casing_corners(self) -> np.ndarray:
        y_hat, z_hat = plane_axes(self.pose.normal)
        hw, hh = self.half_size
        c = self.pose.center
        return np.array([c - hw * y_hat + hh * z_hat, c + hw * y_hat + hh * z_hat,
                         c + hw * y_hat - hh * z_hat, c - hw * y_hat - hh * z_hat])


@dataclass(frozen=True)
class SimLamp:
    id: str
    position: np.ndarray


@dataclass
class SimSceneSpec:
    switches: list[SimSwitch]
    lamps: list[SimLamp]
    wiring: dict = field(default_factory=dict)  # (switch index, button index) -> frozenset of lamp ids
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    seed: int = 0

    def validate(self) -> None:
        lamp_ids = [l.id for l in self.lamps]
        if len(set(lamp_ids)) != len(lamp_ids):
            raise InvalidSpec("lamps", "duplicate lamp id")
        for i, sw in enumerate(self.switches):
            if not sw.button_centers:
                raise InvalidSpec(f"switches[{i}].buttons", "a switch needs at least one button")
            for j, b in enumerate(sw.button_centers):
                off = float(np.dot(np.asarray(b) - sw.pose.center, sw.pose.normal))
                if abs(off) > 1e-6:
                    raise InvalidSpec(f"switches[{i}].buttons[{j}]", "button center is off the switch plane")
        for (si, bi), lamps in self.wiring.items():
            if not 0 <= si < len(self.switches):
                raise InvalidSpec(f"wiring[{si},{bi}].switch", f"no switch {si}")
            if not 0 <= bi < len(self.switches[si].button_centers):
                raise InvalidSpec(f"wiring[{si},{bi}].button", f"switch {si} has no button {bi}")
            for lid in lamps:
                if lid not in lamp_ids:
                    raise InvalidSpec(f"wiring[{si},{bi}].lamps", f"unknown lamp {lid!r}")

    def to_dict(self) -> dict:
        return {
            "switches": [{"center": s.pose.center.tolist(), "normal": s.pose.normal.tolist(),
                          "descriptor": s.descriptor.to_dict(),
                          "buttons": [np.asarray(b).tolist() for b in s.button_centers],
                          "size": [2 * s.half_size[0], 2 * s.half_size[1]]} for s in self.switches],
            "lamps": [{"id": l.id, "position": np.asarray(l.position).tolist()} for l in self.lamps],
            "wiring": [{"switch": si, "button": bi, "lamps": sorted(ls)}
                       for (si, bi), ls in sorted(self.wiring.items())],
            "noise": self.noise.to_dict(),
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SimSceneSpec":
        if not isinstance(d, dict):
            raise InvalidSpec("$", "expected an object")
        switches = []
        for i, s in enumerate(d.get("switches", [])):
            path = f"switches[{i}]"
            try:
                pose = ElementPose.from_vectors(s["center"], s["normal"])
                desc_d = s["descriptor"]
                desc = (AffordanceDescriptor.from_dict(desc_d) if isinstance(desc_d, dict)
                        else _parse_desc(desc_d))
                size = s.get("size", [0.08, 0.08])
                if "buttons" in s:
                    buttons = tuple(np.asarray(b, dtype=float) for b in s["buttons"])
                else:
                    buttons = tuple(button_origins(desc, pose))
                switches.append(SimSwitch(pose, desc, buttons, (size[0] / 2, size[1] / 2)))
            except KeyError as exc:
                raise InvalidSpec(f"{path}.{exc.args[0]}", "missing") from None
            except (ValueError, TypeError, SwitchError) as exc:
                raise InvalidSpec(path, str(exc)) from None
        lamps = []
        for i, l in enumerate(d.get("lamps", [])):
            try:
                lamps.append(SimLamp(str(l["id"]), np.asarray(l["position"], dtype=float)))
            except KeyError as exc:
                raise InvalidSpec(f"lamps[{i}].{exc.args[0]}", "missing") from None
        wiring: dict = {}
        for i, w in enumerate(d.get("wiring", [])):
            try:
                key = (int(w["switch"]), int(w.get("button", 0)))
            except KeyError as exc:
                raise InvalidSpec(f"wiring[{i}].{exc.args[0]}", "missing") from None
            wiring[key] = wiring.get(key, frozenset()) | frozenset(str(x) for x in w.get("lamps", []))
        spec = cls(switches, lamps, wiring, NoiseConfig.from_dict(d.get("noise")), int(d.get("seed", 0)))
        return spec


def _parse_desc(text):
    return parse_affordance_response(str(text))


@dataclass(frozen=True)
class Viewpoint:
    intrinsics: CameraIntrinsics
    camera: CameraPose

    @classmethod
    def looking_at(cls, position, target, intr: CameraIntrinsics = DEFAULT_INTRINSICS) -> "Viewpoint":
        return cls(intr, CameraPose.look_at(position, target))


@dataclass
class InteractionOutcome:
    result: str
    toggled_lamps: frozenset = frozenset()
    details: str = ""

    def to_dict(self) -> dict:
        return {"result": self.result, "toggled_lamps": sorted(self.toggled_lamps), "details": self.details}


@dataclass
class Detection:
    bbox: BoundingBox
    depth: DepthImage
    confidence: float
    true_bbox: BoundingBox


class SimEnvironment:
    def __init__(self, spec: SimSceneSpec, streams: Streams | None = None):
        self.spec = spec
        self.streams = streams or Streams(spec.seed)
        self.lamp_states = {l.id: "off" for l in spec.lamps}

    @property
    def switches(self) -> list[SimSwitch]:
        return self.spec.switches

    @property
    def noise(self) -> NoiseConfig:
        return self.spec.noise

    def lamp_ids(self) -> list[str]:
        return [l.id for l in self.spec.lamps]

    def snapshot(self) -> dict:
        return dict(self.lamp_states)

    def for_attempt(self, *path: int) -> "SimEnvironment":
        """Private copy with its own derived RNG streams and lamp states."""
        env = SimEnvironment(self.spec, self.streams.child(*path))
        env.lamp_states = dict(self.lamp_states)
        return env

    def with_noise(self, noise: NoiseConfig) -> "SimEnvironment":
        spec = copy.copy(self.spec)
        spec.noise = noise
        return SimEnvironment(spec, Streams(self.streams.seed, *self.streams.path))

    def switch(self, index: int) -> SimSwitch:
        if not 0 <= index < len(self.spec.switches):
            raise UnknownSwitch(f"no switch {index}")
        return self.spec.switches[index]

    def nearest_switch(self, point) -> int:
        d = [np.linalg.norm(s.pose.center - np.asarray(point)) for s in self.spec.switches]
        return int(np.argmin(d))

    # -- rendering ---------------------------------------------------------

    def render_depth(self, index: int, view: Viewpoint) -> np.ndarray:
        """Noiseless depth of the switch's wall plane for every pixel."""
        sw = self.switch(index)
        intr, cam = view.intrinsics, view.camera
        vv, uu = np.mgrid[0:intr.height, 0:intr.width].astype(float)
        rays = np.stack([(uu - intr.cx) / intr.fx, (vv - intr.cy) / intr.fy, np.ones_like(uu)], axis=-1)
        n = sw.pose.normal
        denom = rays @ (cam.rotation.T @ n)
        num = float(np.dot(n, sw.pose.center - cam.center))
        with np.errstate(divide="ignore", invalid="ignore"):
            depth = num / denom
        depth[~np.isfinite(depth) | (depth <= 0)] = 0.0
        return depth

    def true_bbox(self, index: int, view: Viewpoint) -> BoundingBox:
        uv = project_point(self.switch(index).casing_corners(), view.intrinsics, view.camera)
        return BoundingBox(uv[:, 0].min(), uv[:, 1].min(), uv[:, 0].max(), uv[:, 1].max())

    def render_lines(self, index: int, view: Viewpoint) -> LineMap:
        uv = project_point(self.switch(index).casing_corners(), view.intrinsics, view.camera)
        return render_polygon(view.intrinsics.width, view.intrinsics.height, uv)

    def closeup_viewpoints(self, index: int, count: int, center_angle_deg: float = 0.0,
                           arc_deg: float = 22.5, distance: float = 0.5) -> list[Viewpoint]:
        """``count`` cameras on a horizontal arc of +/- ``arc_deg`` around the normal."""
        offsets = [0.0] if count == 1 else list(np.linspace(-arc_deg, arc_deg, count))
        return [self.viewpoint_at(index, distance, center_angle_deg + o) for o in offsets]

    def viewpoint_at(self, index: int, distance: float, angle_deg: float,
                     intr: CameraIntrinsics = DEFAULT_INTRINSICS) -> Viewpoint:
        sw = self.switch(index)
        a = math.radians(angle_deg)
        n = sw.pose.normal
        c, s = math.cos(a), math.sin(a)
        # rotate the normal about world up
        d = np.array([c * n[0] - s * n[1], s * n[0] + c * n[1], n[2]])
        return Viewpoint.looking_at(sw.pose.center + distance * d, sw.pose.center, intr)


def render_view(env: SimEnvironment, index: int, view: Viewpoint, rng_det: np.random.Generator,
                rng_depth: np.random.Generator) -> Detection:
    noise = env.noise
    true = env.true_bbox(index, view)
    intr = view.intrinsics
    jitter = rng_det.uniform(-1.0, 1.0, 4) * noise.bbox_jitter_px
    conf = float(rng_det.uniform(0.5, 1.0))
    b = true.as_array() + jitter
    b[[0, 2]] = np.clip(b[[0, 2]], 0, intr.width - 1)
    b[[1, 3]] = np.clip(b[[1, 3]], 0, intr.height - 1)
    if b[2] - b[0] < 1.0:
        b[0], b[2] = max(0.0, b[0] - 0.5), min(intr.width - 1.0, b[2] + 0.5)
    if b[3] - b[1] < 1.0:
        b[1], b[3] = max(0.0, b[1] - 0.5), min(intr.height - 1.0, b[3] + 0.5)
    depth = env.render_depth(index, view)
    if noise.depth_sigma_m > 0:
        valid = depth > 0
        depth = depth + noise.depth_sigma_m * rng_depth.standard_normal(depth.shape)
        depth[~valid] = 0.0
    return Detection(BoundingBox(*b), DepthImage(depth), conf, true)


def build_sim_scene(spec: SimSceneSpec | dict) -> SimEnvironment:
    if isinstance(spec, dict):
        spec = SimSceneSpec.from_dict(spec)
    spec.validate()
    return SimEnvironment(spec)


def miss_probability(noise: NoiseConfig, distance: float) -> float:
    return min(1.0, noise.detection_miss_rate * (distance / REFERENCE_DISTANCE) ** 2)


def simulate_detection(env: SimEnvironment, switch_index: int, viewpoint: Viewpoint, rng_det=None,
                       rng_depth=None):
    """Return ``(bbox, depth, confidence)`` or ``None`` when the detector misses.

    The miss rate grows with the square of the camera distance relative to
    1.5 m. Every call consumes the same number of draws whether or not the
    switch is detected.
    """
    env.switch(switch_index)
    rng_det = rng_det or env.streams("detection")
    rng_depth = rng_depth or env.streams("depth")
    distance = float(np.linalg.norm(viewpoint.camera.center - env.switch(switch_index).pose.center))
    missed = rng_det.random() < miss_probability(env.noise, distance)
    det = render_view(env, switch_index, viewpoint, rng_det, rng_depth)
    if missed:
        return None
    return det.bbox, det.depth, det.confidence


def operate_switch(env: SimEnvironment, switch_index: int, primitive: MotionPrimitive,
                   tolerance: float = DEFAULT_TOLERANCE,
                   axis_tolerance_deg: float = AXIS_TOLERANCE_DEG) -> InteractionOutcome:
    """Press/turn at the primitive's origin and toggle the wired lamps on success."""
    sw = env.switch(switch_index)
    if primitive.motion_type != sw.descriptor.motion_type:
        return InteractionOutcome(AFFORDANCE_FAILURE, frozenset(),
                                  f"{primitive.motion_type} on a {sw.descriptor.switch_type}")
    dists = [float(np.linalg.norm(primitive.origin - b)) for b in sw.button_centers]
    k = int(np.argmin(dists))
    angle = math.degrees(angle_between(primitive.axis, sw.pose.normal))
    if dists[k] > tolerance:
        return InteractionOutcome(REFINEMENT_FAILURE, frozenset(),
                                  f"origin {dists[k] * 1000:.1f} mm from nearest button")
    if angle >= axis_tolerance_deg:
        return InteractionOutcome(REFINEMENT_FAILURE, frozenset(), f"axis off by {angle:.1f} deg")
    toggled = env.spec.wiring.get((switch_index, k), frozenset())
    for lid in toggled:
        env.lamp_states[lid] = "on" if env.lamp_states[lid] == "off" else "off"
    return InteractionOutcome(SUCCESS, frozenset(toggled), f"button {k}")


def true_state_change(before: str, after: str) -> str:
    if before == after:
        return NO_CHANGE
    return OFF_TO_ON if after == "on" else ON_TO_OFF


def observe_state_change(env: SimEnvironment, lamp_id: str, before_snapshot: dict, after_snapshot: dict,
                         flip_rate: float | None = None, rng=None) -> str:
    """Report a lamp's state change; with probability ``flip_rate`` the report is wrong."""
    if lamp_id not in before_snapshot or lamp_id not in after_snapshot:
        raise UnknownLamp(f"no lamp {lamp_id!r}")
    flip_rate = env.noise.state_flip_rate if flip_rate is None else flip_rate
    rng = rng or env.streams("state")
    truth = true_state_change(before_snapshot[lamp_id], after_snapshot[lamp_id])
    corrupt = rng.random() < flip_rate
    pick = int(rng.integers(0, 2))
    if not corrupt:
        return truth
    others = [c for c in STATE_CHANGES if c != truth]
    return others[pick]
