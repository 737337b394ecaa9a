"""Ready-made scene specs: the nine-switch test rig and random wiring scenes."""

from __future__ import annotations

import numpy as np

from ..affordance import AffordanceDescriptor, button_origins, primitives_from_descriptor
from ..geometry import ElementPose
from ..scene_graph import SceneGraph, Vertex, add_lamps
from .env import NoiseConfig, SimLamp, SimSceneSpec, SimSwitch

RIG_NORMAL = np.array([0.0, -1.0, 0.0])  # the rig faces the robot, which stands at y < 0

# one entry per rig cell, row-major from the top left
RIG_SWITCHES = [
    AffordanceDescriptor("push_button"),
    AffordanceDescriptor("push_button", 2, "side_by_side"),
    AffordanceDescriptor("rocker"),
    AffordanceDescriptor("rocker", symbol_hint="top_bottom_push"),
    AffordanceDescriptor("turn_button"),
    AffordanceDescriptor("push_button", 2, "stacked_vertically"),
    AffordanceDescriptor("rocker", 2, "side_by_side"),
    AffordanceDescriptor("turn_button"),
    AffordanceDescriptor("push_button", symbol_hint="top_bottom_push"),
]


def _switch(center, desc, normal=RIG_NORMAL, size=(0.08, 0.08)) -> SimSwitch:
    pose = ElementPose.from_vectors(center, normal)
    return SimSwitch(pose, desc, tuple(button_origins(desc, pose)), (size[0] / 2, size[1] / 2))


def default_rig_spec(noise: NoiseConfig | None = None, seed: int = 0) -> SimSceneSpec:
    """Nine switches on a 3x3 shelf grid, every button wired to one of three lamps."""
    switches = []
    for k, desc in enumerate(RIG_SWITCHES):
        row, col = divmod(k, 3)
        center = np.array([(col - 1) * 0.39, 0.0, 1.4 - row * 0.39])
        switches.append(_switch(center, desc))
    lamps = [SimLamp(f"lamp_{i}", np.array([(i - 1) * 1.5, 1.0, 2.4])) for i in range(3)]
    wiring = {}
    for si, sw in enumerate(switches):
        for bi in range(len(sw.button_centers)):
            wiring[(si, bi)] = frozenset({lamps[(si + bi) % 3].id})
    return SimSceneSpec(switches, lamps, wiring, noise or NoiseConfig(), seed)


def random_scene_spec(rng: np.random.Generator, max_switches: int = 6, max_lamps: int = 6,
                      noise: NoiseConfig | None = None, seed: int = 0) -> SimSceneSpec:
    """Random switches along a wall with arbitrary switch-to-lamp wiring.

    Every switch gets a single-button descriptor so each switch maps to one
    wiring entry; a lamp may be controlled by several switches and a switch
    may control several lamps.
    """
    n_sw = int(rng.integers(1, max_switches + 1))
    n_lamp = int(rng.integers(1, max_lamps + 1))
    kinds = [AffordanceDescriptor("push_button"), AffordanceDescriptor("rocker"),
             AffordanceDescriptor("turn_button")]
    switches = []
    for i in range(n_sw):
        center = np.array([i * 0.6, 0.0, 1.1])
        switches.append(_switch(center, kinds[int(rng.integers(0, len(kinds)))]))
    lamps = [SimLamp(f"lamp_{j}", np.array([j * 0.8, 1.5, 2.4])) for j in range(n_lamp)]
    wiring = {}
    for i in range(n_sw):
        mask = rng.random(n_lamp) < 0.4
        wiring[(i, 0)] = frozenset(lamps[j].id for j in np.flatnonzero(mask))
    return SimSceneSpec(switches, lamps, wiring, noise or NoiseConfig(), seed)


def true_edges(spec: SimSceneSpec, switch_ids: list[str]) -> set[tuple[str, str]]:
    """Switch-level ground-truth wiring as (switch id, lamp id) pairs."""
    out = set()
    for (si, _), lamps in spec.wiring.items():
        for lid in lamps:
            out.add((switch_ids[si], lid))
    return out


def ground_truth_graph(spec: SimSceneSpec) -> tuple[SceneGraph, list[str]]:
    """Lamps plus every switch registered at its true pose with true primitives.

    Returns the graph and the switch ids in scene order.
    """
    g = add_lamps(SceneGraph(), [{"id": l.id, "position": l.position.tolist()} for l in spec.lamps])
    ids = []
    for i, sw in enumerate(spec.switches):
        sid = f"switch_{i:03d}"
        prims = [] if sw.descriptor.switch_type == "toggle" else primitives_from_descriptor(sw.descriptor, sw.pose)
        g.add_vertex(Vertex(sid, "switch", sw.pose, prims))
        ids.append(sid)
    return g, ids
