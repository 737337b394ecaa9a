import json
import math

import numpy as np
import pytest

from lightswitch.affordance import ROTATION, MotionPrimitive, plane_axes
from lightswitch.errors import InvalidSpec, UnknownLamp, UnknownSwitch
from lightswitch.pipeline import AppConfig
from lightswitch.scene_graph import NO_CHANGE, OFF_TO_ON, ON_TO_OFF, serialize_graph
from lightswitch.sim.env import (AFFORDANCE_FAILURE, REFINEMENT_FAILURE, SUCCESS, NoiseConfig, SimSceneSpec, Streams,
                               build_sim_scene, miss_probability, observe_state_change, operate_switch,
                               simulate_detection)
from lightswitch.sim.experiment import run_success_experiment
from lightswitch.sim.exploration import ExplorationPolicy, decode_lamp_wiring, run_exploration
from lightswitch.sim.scenes import default_rig_spec, ground_truth_graph, random_scene_spec, true_edges


def _two_switch_spec(noise=None):
    return SimSceneSpec.from_dict({
        "switches": [{"center": [0, 0, 1.1], "normal": [0, -1, 0], "descriptor": "single push button"},
                     {"center": [0.5, 0, 1.1], "normal": [0, -1, 0], "descriptor": "rocker switch"}],
        "lamps": [{"id": "l1", "position": [0, 1, 2.4]}, {"id": "l2", "position": [1, 1, 2.4]}],
        "wiring": [{"switch": 0, "lamps": ["l1", "l2"]}, {"switch": 1, "lamps": ["l1"]}],
        "noise": (noise or NoiseConfig()).to_dict(),
    })


def _exact_primitive(env, i, k=0):
    sw = env.switch(i)
    return MotionPrimitive(sw.descriptor.motion_type, sw.pose.normal, sw.button_centers[k])


def test_streams_are_named_and_reproducible():
    a, b = Streams(3), Streams(3)
    assert a("detection").random() == b("detection").random()
    assert Streams(3)("detection").random() != Streams(3)("depth").random()
    assert Streams(3, 1)("x").random() != Streams(3, 2)("x").random()
    assert Streams(3).child(1)("x").random() == Streams(3, 1)("x").random()


def test_noise_config_validation():
    with pytest.raises(InvalidSpec):
        NoiseConfig(detection_miss_rate=1.5)
    with pytest.raises(InvalidSpec):
        NoiseConfig(depth_sigma_m=-0.1)
    with pytest.raises(InvalidSpec):
        NoiseConfig.from_dict({"blur": 1})
    n = NoiseConfig(0.1, 2.0, 0.01, 0.05, 0.2)
    assert NoiseConfig.from_dict(n.to_dict()) == n


def test_rig_has_nine_switches():
    env = build_sim_scene(default_rig_spec())
    assert len(env.switches) == 9
    assert set(env.lamp_states.values()) == {"off"}


def test_scene_spec_round_trip_through_json():
    spec = default_rig_spec(NoiseConfig(0.1, 2.0), seed=4)
    back = SimSceneSpec.from_dict(json.loads(json.dumps(spec.to_dict())))
    assert back.to_dict() == spec.to_dict()


def test_missing_lamp_is_invalid():
    d = _two_switch_spec().to_dict()
    d["wiring"][0]["lamps"].append("l9")
    with pytest.raises(InvalidSpec, match="wiring"):
        build_sim_scene(d)
    d = _two_switch_spec().to_dict()
    d["switches"][0]["buttons"] = [[0, 0.2, 1.1]]
    with pytest.raises(InvalidSpec, match="buttons"):
        build_sim_scene(d)
    with pytest.raises(InvalidSpec):
        build_sim_scene({"switches": [{"center": [0, 0, 1]}]})


def test_same_seed_same_draws():
    e1, e2 = build_sim_scene(default_rig_spec(seed=5)), build_sim_scene(default_rig_spec(seed=5))
    assert np.array_equal(e1.streams("depth").random(5), e2.streams("depth").random(5))


def test_noiseless_detection_is_exact():
    env = build_sim_scene(default_rig_spec())
    view = env.viewpoint_at(4, 1.5, 0.0)
    bbox, depth, conf = simulate_detection(env, 4, view)
    assert bbox == env.true_bbox(4, view)
    assert np.array_equal(depth.values, env.render_depth(4, view))
    assert 0.5 <= conf <= 1.0


def test_full_miss_rate_never_detects():
    env = build_sim_scene(default_rig_spec(NoiseConfig(detection_miss_rate=1.0)))
    view = env.viewpoint_at(0, 1.5, 0.0)
    assert all(simulate_detection(env, 0, view) is None for _ in range(20))


def test_miss_rate_grows_with_distance():
    n = NoiseConfig(detection_miss_rate=0.1)
    assert miss_probability(n, 1.5) == pytest.approx(0.1)
    assert miss_probability(n, 3.0) == pytest.approx(0.4)
    assert miss_probability(n, 10.0) == 1.0


def test_jitter_stays_in_bound():
    env = build_sim_scene(default_rig_spec(NoiseConfig(bbox_jitter_px=5.0)))
    view = env.viewpoint_at(4, 1.5, 0.0)
    truth = env.true_bbox(4, view).as_array()
    for _ in range(1000):
        bbox, _, _ = simulate_detection(env, 4, view)
        assert np.all(np.abs(bbox.as_array() - truth) <= 5.0)


def test_unknown_switch():
    env = build_sim_scene(default_rig_spec())
    with pytest.raises(UnknownSwitch):
        simulate_detection(env, 9, env.viewpoint_at(0, 1.5, 0.0))


def test_operate_exact_primitive_toggles_lamps():
    env = build_sim_scene(_two_switch_spec())
    out = operate_switch(env, 0, _exact_primitive(env, 0), 0.015)
    assert out.result == SUCCESS and out.toggled_lamps == {"l1", "l2"}
    assert env.lamp_states == {"l1": "on", "l2": "on"}


def test_operate_offset_is_refinement_failure():
    env = build_sim_scene(_two_switch_spec())
    p = _exact_primitive(env, 0)
    y_hat, _ = plane_axes(p.axis)
    out = operate_switch(env, 0, MotionPrimitive(p.motion_type, p.axis, p.origin + 0.03 * y_hat), 0.015)
    assert out.result == REFINEMENT_FAILURE and not out.toggled_lamps
    assert set(env.lamp_states.values()) == {"off"}


def test_operate_tilted_axis_is_refinement_failure():
    env = build_sim_scene(_two_switch_spec())
    p = _exact_primitive(env, 0)
    t = math.radians(20)
    axis = np.array([math.sin(t), -math.cos(t), 0.0])
    assert operate_switch(env, 0, MotionPrimitive(p.motion_type, axis, p.origin)).result == REFINEMENT_FAILURE


def test_operate_wrong_motion_is_affordance_failure():
    env = build_sim_scene(_two_switch_spec())
    p = _exact_primitive(env, 0)
    assert operate_switch(env, 0, MotionPrimitive(ROTATION, p.axis, p.origin)).result == AFFORDANCE_FAILURE


def test_operating_twice_restores_lamps():
    env = build_sim_scene(default_rig_spec())
    for i in range(9):
        for k in range(len(env.switch(i).button_centers)):
            before = env.snapshot()
            p = _exact_primitive(env, i, k)
            assert operate_switch(env, i, p).result == SUCCESS
            operate_switch(env, i, p)
            assert env.snapshot() == before


def test_observe_state_change():
    env = build_sim_scene(_two_switch_spec())
    rng = np.random.default_rng(0)
    assert observe_state_change(env, "l1", {"l1": "off"}, {"l1": "on"}, 0.0, rng) == OFF_TO_ON
    assert observe_state_change(env, "l1", {"l1": "on"}, {"l1": "off"}, 0.0, rng) == ON_TO_OFF
    assert observe_state_change(env, "l1", {"l1": "on"}, {"l1": "on"}, 0.0, rng) == NO_CHANGE
    reports = {observe_state_change(env, "l1", {"l1": "off"}, {"l1": "on"}, 1.0, rng) for _ in range(200)}
    assert reports == {ON_TO_OFF, NO_CHANGE}
    with pytest.raises(UnknownLamp):
        observe_state_change(env, "l7", {"l1": "off"}, {"l1": "on"}, 0.0, rng)


def test_exploration_learns_shared_and_multi_lamp_wiring():
    spec = _two_switch_spec()
    graph, ids = ground_truth_graph(spec)
    g, log = run_exploration(graph, build_sim_scene(spec))
    assert g.edge_pairs() == {("switch_000", "l1"), ("switch_000", "l2"), ("switch_001", "l1")}
    assert len(log) == 2 and all(e["outcome"] == SUCCESS for e in log)
    # l1 was toggled twice, l2 once
    assert g.vertex("l1").state == "off" and g.vertex("l2").state == "on"


def test_exploration_without_switches_is_noop():
    graph, _ = ground_truth_graph(SimSceneSpec([], _two_switch_spec().lamps))
    g, log = run_exploration(graph, build_sim_scene(SimSceneSpec([], _two_switch_spec().lamps)))
    assert g == graph and log == []


def test_exploration_visit_order_policy():
    spec = _two_switch_spec()
    graph, _ = ground_truth_graph(spec)
    _, log = run_exploration(graph, build_sim_scene(spec), ExplorationPolicy(order=["switch_001", "ghost"]))
    assert [e["switch"] for e in log] == ["switch_001"]
    with pytest.raises(ValueError):
        ExplorationPolicy(passes=0)


@pytest.mark.parametrize("seed", range(10))
def test_noiseless_exploration_is_exact_on_rig_and_random_scenes(seed):
    spec = random_scene_spec(np.random.default_rng(seed), seed=seed)
    graph, ids = ground_truth_graph(spec)
    g, _ = run_exploration(graph, build_sim_scene(spec))
    assert g.edge_pairs() == true_edges(spec, ids)
    rig = default_rig_spec(seed=seed)
    graph, ids = ground_truth_graph(rig)
    g, _ = run_exploration(graph, build_sim_scene(rig), ExplorationPolicy(passes=3))
    assert g.edge_pairs() == true_edges(rig, ids)


def test_exploration_is_deterministic():
    spec = random_scene_spec(np.random.default_rng(1), noise=NoiseConfig(state_flip_rate=0.2), seed=1)
    graph, _ = ground_truth_graph(spec)
    runs = [run_exploration(graph, build_sim_scene(spec), ExplorationPolicy(passes=5)) for _ in range(2)]
    assert serialize_graph(runs[0][0]) == serialize_graph(runs[1][0])
    assert runs[0][1] == runs[1][1]


def test_decode_lamp_wiring_examples():
    keys = ["a", "b", "a", "b"]
    ok = [True] * 4
    # a toggles the lamp, b does not
    assert decode_lamp_wiring(keys, [OFF_TO_ON, NO_CHANGE, ON_TO_OFF, NO_CHANGE], ok) == {"a"}
    # one corrupted report is outvoted by the sequence
    assert decode_lamp_wiring(keys, [OFF_TO_ON, NO_CHANGE, ON_TO_OFF, OFF_TO_ON], ok) == {"a"}
    # failed operations predict no change
    assert decode_lamp_wiring(keys, [NO_CHANGE] * 4, [False] * 4) == set()
    assert decode_lamp_wiring([], [], []) == set()


def test_sequence_vote_beats_majority_under_noise():
    hits = {"majority": 0, "sequence": 0}
    for seed in range(20):
        spec = random_scene_spec(np.random.default_rng(seed), noise=NoiseConfig(state_flip_rate=0.2), seed=seed)
        graph, ids = ground_truth_graph(spec)
        for vote in hits:
            g, _ = run_exploration(graph, build_sim_scene(spec), ExplorationPolicy(passes=5, vote=vote))
            hits[vote] += g.edge_pairs() == true_edges(spec, ids)
    assert hits["sequence"] >= hits["majority"]


def test_experiment_accounting_and_determinism():
    cfg = AppConfig(noise=NoiseConfig(0.2, 6.0, 0.02, 0.1), n_attempts_per_switch=2, refinement_count=2)
    r1 = run_success_experiment(cfg, seed=3)
    r2 = run_success_experiment(cfg, seed=3)
    assert r1 == r2
    assert r1.n_attempt == 18
    assert r1.n_success + r1.n_det_fail + r1.n_ref_fail + r1.n_aff_fail == r1.n_attempt
    assert sum(s[SUCCESS] for s in r1.per_switch) == r1.n_success


def test_noiseless_experiment_always_succeeds():
    r = run_success_experiment(AppConfig(n_attempts_per_switch=1), seed=0)
    assert r.sr == 1.0 and r.n_det_fail == r.n_ref_fail == r.n_aff_fail == 0


def test_experiment_workers_do_not_change_results():
    cfg = AppConfig(noise=NoiseConfig(0.1, 4.0, 0.01, 0.1), n_attempts_per_switch=1, refinement_count=1)
    assert run_success_experiment(cfg, seed=2, workers=2) == run_success_experiment(cfg, seed=2)


MODERATE = NoiseConfig(detection_miss_rate=0.1, bbox_jitter_px=4.0, depth_sigma_m=0.01, oracle_error_rate=0.05)
HARSHER = {"detection_miss_rate": 0.3, "bbox_jitter_px": 10.0, "depth_sigma_m": 0.025, "oracle_error_rate": 0.25}


def _mean_sr(noise, seeds=50):
    cfg = AppConfig(noise=noise, n_attempts_per_switch=1, refinement_count=1)
    return float(np.mean([run_success_experiment(cfg, seed=s).sr for s in range(seeds)]))


@pytest.mark.slow
def test_success_rate_degrades_with_each_noise_source():
    base = _mean_sr(MODERATE)
    for name, value in HARSHER.items():
        worse = _mean_sr(NoiseConfig(**{**MODERATE.to_dict(), name: value}))
        assert worse <= base, (name, worse, base)
