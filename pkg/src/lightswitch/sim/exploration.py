"""Interactive exploration: operate every switch and watch the lamps."""

from __future__ import annotations

import itertools
from collections import Counter, defaultdict
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..scene_graph import NO_CHANGE, OFF_TO_ON, ON_TO_OFF, SceneGraph, apply_interaction_result
from .env import SUCCESS, SimEnvironment, observe_state_change, operate_switch

VOTES = ("majority", "sequence")
_CODE = {NO_CHANGE: 0, OFF_TO_ON: 1, ON_TO_OFF: 2}
MAX_SEQUENCE_KEYS = 16


@dataclass(frozen=True)
class ExplorationPolicy:
    """How the robot visits switches and how repeated passes are combined.

    ``order`` lists switch ids to visit (default: all switches by id).
    With ``passes > 1`` every primitive is operated once per pass. The
    ``majority`` vote keeps a button/lamp edge when a strict majority of its
    observations report a change. The ``sequence`` vote picks, per lamp, the
    wiring whose predicted on/off sequence agrees with the most reports.
    """

    order: Sequence[str] | None = None
    passes: int = 1
    vote: str = "majority"

    def __post_init__(self):
        if self.passes < 1:
            raise ValueError("passes must be >= 1")
        if self.vote not in VOTES:
            raise ValueError(f"vote must be one of {VOTES}")

    def visit_order(self, graph: SceneGraph) -> list[str]:
        ids = sorted(v.id for v in graph.of_class("switch"))
        if self.order is None:
            return ids
        known = set(ids)
        return [i for i in self.order if i in known]


def decode_lamp_wiring(keys: Sequence, reports: Sequence[str], executed: Sequence[bool],
                       initially_on: bool = False) -> set:
    """Subset of operation keys that best explains one lamp's reports.

    Each hypothesis toggles the lamp on every executed operation of its keys;
    its score is the number of reports equal to the predicted change. Ties
    go to the hypothesis with fewer edges, then to the first enumerated.
    """
    uniq = sorted(set(keys))
    if not uniq:
        return set()
    if len(uniq) > MAX_SEQUENCE_KEYS:
        raise ValueError(f"too many operation keys for exhaustive decoding ({len(uniq)})")
    pos = {k: i for i, k in enumerate(uniq)}
    hyp = np.array(list(itertools.product([False, True], repeat=len(uniq))))
    idx = np.array([pos[k] for k in keys])
    toggles = hyp[:, idx] & np.asarray(executed, dtype=bool)[None, :]
    after = (np.cumsum(toggles, axis=1) + int(initially_on)) % 2
    before = np.concatenate([np.full((len(hyp), 1), int(initially_on)), after[:, :-1]], axis=1)
    predicted = np.where(toggles, np.where(before == 0, 1, 2), 0)
    observed = np.array([_CODE[r] for r in reports])
    score = (predicted == observed[None, :]).sum(axis=1) * (len(uniq) + 1) - hyp.sum(axis=1)
    best = hyp[int(np.argmax(score))]
    return {k for k, b in zip(uniq, best) if b}


def _majority_edges(log, lamps) -> set:
    votes: dict[tuple, Counter] = defaultdict(Counter)
    for e in log:
        for lid in lamps:
            votes[(e["switch"], e["primitive"], lid)][e["observations"][lid]] += 1
    out = set()
    for (sid, k, lid), counts in votes.items():
        if (counts[OFF_TO_ON] + counts[ON_TO_OFF]) * 2 > sum(counts.values()):
            out.add(((sid, k), lid))
    return out


def _sequence_edges(log, lamps, initial) -> set:
    keys = [(e["switch"], e["primitive"]) for e in log]
    executed = [e["outcome"] == SUCCESS for e in log]
    out = set()
    for lid in lamps:
        reports = [e["observations"][lid] for e in log]
        for key in decode_lamp_wiring(keys, reports, executed, initial[lid] == "on"):
            out.add((key, lid))
    return out


def _believed_states(log, edges, initial) -> dict:
    state = dict(initial)
    for e in log:
        if e["outcome"] != SUCCESS:
            continue
        for lid in state:
            if ((e["switch"], e["primitive"]), lid) in edges:
                state[lid] = "off" if state[lid] == "on" else "on"
    return state


def run_exploration(graph: SceneGraph, env: SimEnvironment, policy: ExplorationPolicy | None = None,
                    tolerance: float = 0.015):
    """Operate each registered primitive, compare lamp states, update the graph.

    Returns ``(graph, log)`` where the log holds one JSON-ready entry per
    interaction. Lamp states in the returned graph are the robot's belief,
    never read back from the environment.
    """
    policy = policy or ExplorationPolicy()
    lamps = sorted(v.id for v in graph.of_class("lamp"))
    initial = {lid: graph.vertex(lid).state for lid in lamps}
    rng = env.streams("state")
    order = policy.visit_order(graph)
    log = []
    g = graph
    for p in range(policy.passes):
        for sid in order:
            vertex = g.vertex(sid)
            index = env.nearest_switch(vertex.pose.center)
            for k, prim in enumerate(vertex.primitives):
                before = env.snapshot()
                outcome = operate_switch(env, index, prim, tolerance)
                after = env.snapshot()
                obs = [(lid, observe_state_change(env, lid, before, after, rng=rng)) for lid in lamps]
                log.append({"pass": p, "switch": sid, "primitive": k, "outcome": outcome.result,
                            "observations": dict(obs)})
                if policy.passes == 1:
                    g = apply_interaction_result(g, sid, obs)
    if policy.passes == 1:
        return g, log
    if policy.vote == "majority":
        edges = _majority_edges(log, lamps)
    else:
        edges = _sequence_edges(log, lamps, initial)
    g = graph.copy()
    for (sid, _), lid in sorted(edges):
        g.add_edge(sid, lid)
    for lid, state in _believed_states(log, edges, initial).items():
        g.vertices[lid].state = state
    return g, log
