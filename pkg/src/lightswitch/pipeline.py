"""Application config and the single-attempt pipeline.

An attempt runs detect, bbox refinement, pose estimation over close-up
views, affordance query and primitive construction, then operates every
primitive. The first failing stage decides the outcome class.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .affordance import (SWITCH_TYPES, AffordanceDescriptor, AffordanceOracle, GripperOffsets,
                         SubprocessOracle, primitives_from_descriptor, query_affordance)
from .bbox import BoundingBox, refine_bbox_in_image
from .errors import ConfigError, SwitchError
from .geometry import ElementPose, RansacConfig, average_poses, estimate_element_pose
from .sim.env import (AFFORDANCE_FAILURE, AXIS_TOLERANCE_DEG, DETECTION_FAILURE, REFINEMENT_FAILURE, SUCCESS,
                      InteractionOutcome, NoiseConfig, SimEnvironment, operate_switch, render_view,
                      simulate_detection)
from .sim.exploration import VOTES

STAGES = ("detect", "bbox_refinement", "pose_estimation", "affordance", "motion_primitive")
_STAGE_FAILURE = {"detect": DETECTION_FAILURE, "bbox_refinement": REFINEMENT_FAILURE,
                  "pose_estimation": REFINEMENT_FAILURE, "affordance": AFFORDANCE_FAILURE,
                  "motion_primitive": AFFORDANCE_FAILURE}

# JSON key -> attribute, where they differ
_ALIASES = {"lambda": "lam"}


@dataclass(frozen=True)
class AppConfig:
    scene: str | None = None
    graph: str | None = None
    oracle_command: str | None = None
    lam: float = 0.1
    dy: float = 0.03
    dz: float = 0.03
    refinement_count: int = 4
    ransac: RansacConfig = field(default_factory=RansacConfig)
    cluster_radius: float = 0.15
    tolerance: float = 0.015
    axis_tolerance_deg: float = AXIS_TOLERANCE_DEG
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    seed: int = 0
    use_bbox_refine: bool = True
    distance: float = 1.5
    angle_deg: float = 0.0
    closeup_distance: float = 0.5
    closeup_arc_deg: float = 22.5
    n_attempts_per_switch: int = 10
    exploration_passes: int = 1
    vote: str = "majority"

    def __post_init__(self):
        def bad(name, msg):
            raise ConfigError(name, msg)

        if not 0.0 <= self.lam <= 1.0:
            bad("lambda", f"must lie in [0, 1], got {self.lam}")
        for name in ("dy", "dz", "cluster_radius", "tolerance", "distance", "closeup_distance"):
            if not getattr(self, name) > 0:
                bad(name, "must be > 0")
        if not 0 < self.axis_tolerance_deg <= 90:
            bad("axis_tolerance_deg", "must lie in (0, 90]")
        if not 0 <= self.closeup_arc_deg < 90:
            bad("closeup_arc_deg", "must lie in [0, 90)")
        if not -90 < self.angle_deg < 90:
            bad("angle_deg", "must lie in (-90, 90)")
        for name in ("refinement_count", "n_attempts_per_switch", "exploration_passes"):
            v = getattr(self, name)
            if not isinstance(v, int) or isinstance(v, bool) or v < 1:
                bad(name, f"must be an integer >= 1, got {v!r}")
        if self.vote not in VOTES:
            bad("vote", f"must be one of {list(VOTES)}")

    @property
    def offsets(self) -> GripperOffsets:
        return GripperOffsets(self.dy, self.dz)

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, RansacConfig):
                v = {"threshold": v.threshold, "max_iters": v.max_iters, "seed": v.seed}
            elif isinstance(v, NoiseConfig):
                v = v.to_dict()
            out["lambda" if f.name == "lam" else f.name] = v
        return out

    @classmethod
    def from_dict(cls, d: dict, base: "AppConfig | None" = None) -> "AppConfig":
        """Build from JSON-style keys; keys missing from ``d`` keep ``base`` values."""
        if not isinstance(d, dict):
            raise ConfigError("$", "config must be a JSON object")
        known = {f.name: f for f in fields(cls)}
        kw = {}
        for key, value in d.items():
            name = _ALIASES.get(key, key)
            if name not in known or name == "lam" and key != "lambda":
                raise ConfigError(key, "unknown field")
            try:
                kw[name] = _coerce(name, value)
            except SwitchError as exc:
                raise ConfigError(key, str(exc)) from exc
            except (TypeError, ValueError) as exc:
                raise ConfigError(key, str(exc)) from exc
        return replace(base or cls(), **kw)

    @classmethod
    def load(cls, path) -> "AppConfig":
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError("$", f"not valid JSON: {exc}") from exc
        return cls.from_dict(data)


def _coerce(name: str, value):
    if name == "ransac":
        return RansacConfig(**{k: value[k] for k in value})
    if name == "noise":
        return NoiseConfig.from_dict(value)
    if name in ("scene", "graph", "oracle_command"):
        return None if value is None else str(value)
    if name == "use_bbox_refine":
        if not isinstance(value, bool):
            raise TypeError("must be true or false")
        return value
    if name in ("refinement_count", "n_attempts_per_switch", "seed", "exploration_passes"):
        if isinstance(value, bool) or not isinstance(value, int):
            raise TypeError(f"must be an integer, got {value!r}")
        return value
    if name == "vote":
        return str(value)
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise TypeError(f"must be a number, got {value!r}")
    return float(value)


def misclassify(desc: AffordanceDescriptor, rng: np.random.Generator) -> AffordanceDescriptor:
    """A wrong descriptor whose switch type implies a different motion."""
    choices = [t for t in SWITCH_TYPES
               if t == "toggle" or AffordanceDescriptor(t).motion_type != desc.motion_type]
    kind = choices[int(rng.integers(0, len(choices)))]
    hint = desc.symbol_hint if kind in ("push_button", "rocker") else "none"
    return AffordanceDescriptor(kind, desc.button_count, desc.arrangement, hint)


class SimOracle(AffordanceOracle):
    """Answers with the true descriptor, misclassified at ``error_rate``.

    Element refs are switch indices into the environment.
    """

    def __init__(self, env: SimEnvironment, error_rate: float | None = None, rng=None):
        self.env = env
        self.error_rate = env.noise.oracle_error_rate if error_rate is None else error_rate
        self.rng = rng or env.streams("oracle")

    def ask(self, element_ref, image_path=None) -> str:
        desc = self.env.switch(int(element_ref)).descriptor
        wrong = self.rng.random() < self.error_rate
        other = misclassify(desc, self.rng)
        return (other if wrong else desc).serialize()


@dataclass
class PipelineResult:
    outcome: InteractionOutcome
    trace: list = field(default_factory=list)
    bboxes: list = field(default_factory=list)
    pose: ElementPose | None = None
    descriptor: AffordanceDescriptor | None = None
    primitives: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"outcome": self.outcome.to_dict(), "trace": self.trace}


def _box(b: BoundingBox) -> list:
    return [round(float(v), 6) for v in b.as_list()]


def _vec(v) -> list:
    return [round(float(x), 9) for x in v]


def run_pipeline_once(config: AppConfig, env: SimEnvironment, switch_index: int,
                      oracle: AffordanceOracle | None = None) -> PipelineResult:
    """One attempt at one switch, with a stage-by-stage trace.

    Random draws come from ``env.streams``; pass ``env.for_attempt(...)`` to
    give each attempt independent noise.
    """
    env.switch(switch_index)
    res = PipelineResult(InteractionOutcome(SUCCESS))

    def fail(stage, exc_or_msg):
        res.trace.append({"stage": stage, "ok": False, "error": str(exc_or_msg)})
        res.outcome = InteractionOutcome(_STAGE_FAILURE[stage], frozenset(), f"{stage}: {exc_or_msg}")
        return res

    far = env.viewpoint_at(switch_index, config.distance, config.angle_deg)
    det = simulate_detection(env, switch_index, far)
    if det is None:
        return fail("detect", f"switch not detected at {config.distance:.2f} m")
    res.trace.append({"stage": "detect", "ok": True, "bbox": _box(det[0]), "confidence": round(det[2], 6)})

    views = env.closeup_viewpoints(switch_index, config.refinement_count, config.angle_deg,
                                   config.closeup_arc_deg, config.closeup_distance)
    rng_det, rng_depth = env.streams("detection"), env.streams("depth")
    shots = [(v, render_view(env, switch_index, v, rng_det, rng_depth)) for v in views]
    boxes = []
    try:
        for view, shot in shots:
            if config.use_bbox_refine:
                lines = env.render_lines(switch_index, view)
                boxes.append(refine_bbox_in_image(shot.bbox, lines, config.lam))
            else:
                boxes.append(shot.bbox)
    except SwitchError as exc:
        return fail("bbox_refinement", exc)
    res.bboxes = boxes
    res.trace.append({"stage": "bbox_refinement", "ok": True, "enabled": config.use_bbox_refine,
                      "bboxes": [_box(b) for b in boxes]})

    try:
        poses = [estimate_element_pose(b, shot.depth, v.intrinsics, v.camera, config.ransac)
                 for b, (v, shot) in zip(boxes, shots)]
        pose = average_poses(poses)
    except SwitchError as exc:
        return fail("pose_estimation", exc)
    res.pose = pose
    res.trace.append({"stage": "pose_estimation", "ok": True, "views": len(poses),
                      "center": _vec(pose.center), "normal": _vec(pose.normal)})

    oracle = oracle or SimOracle(env)
    try:
        desc = query_affordance(oracle, switch_index)
    except SwitchError as exc:
        return fail("affordance", exc)
    res.descriptor = desc
    res.trace.append({"stage": "affordance", "ok": True, "descriptor": desc.to_dict()})

    try:
        prims = primitives_from_descriptor(desc, pose, config.offsets)
    except SwitchError as exc:
        return fail("motion_primitive", exc)
    res.primitives = prims
    res.trace.append({"stage": "motion_primitive", "ok": True,
                      "primitives": [{"type": p.motion_type, "axis": _vec(p.axis), "origin": _vec(p.origin)}
                                     for p in prims]})

    toggled = set()
    for p in prims:
        out = operate_switch(env, switch_index, p, config.tolerance, config.axis_tolerance_deg)
        if out.result != SUCCESS:
            res.outcome = out
            return res
        toggled |= out.toggled_lamps
    res.outcome = InteractionOutcome(SUCCESS, frozenset(toggled), f"{len(prims)} primitive(s) executed")
    return res


def oracle_for(config: AppConfig, env: SimEnvironment) -> AffordanceOracle:
    """External process when configured, otherwise the simulated oracle."""
    if config.oracle_command:
        return SubprocessOracle(config.oracle_command)
    return SimOracle(env)
