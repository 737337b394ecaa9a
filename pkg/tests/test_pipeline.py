import json
import sys
from pathlib import Path

import numpy as np
import pytest

from lightswitch.affordance import AffordanceDescriptor, MockOracle, SubprocessOracle
from lightswitch.errors import ConfigError
from lightswitch.geometry import RansacConfig
from lightswitch.pipeline import STAGES, AppConfig, SimOracle, misclassify, oracle_for, run_pipeline_once
from lightswitch.sim.env import (AFFORDANCE_FAILURE, DETECTION_FAILURE, REFINEMENT_FAILURE, SUCCESS, NoiseConfig,
                               Streams, build_sim_scene)
from lightswitch.sim.scenes import RIG_SWITCHES, default_rig_spec

FAKE_ORACLE = f"{sys.executable} {Path(__file__).with_name('fake_oracle.py')}"


def _env(noise=None, seed=0, switch=0):
    env = build_sim_scene(default_rig_spec(noise))
    env.streams = Streams(seed, switch, 0)
    return env


@pytest.mark.parametrize("switch", range(9))
def test_noiseless_attempt_passes_every_stage(switch):
    res = run_pipeline_once(AppConfig(), _env(switch=switch), switch)
    assert res.outcome.result == SUCCESS
    assert [t["stage"] for t in res.trace] == list(STAGES)
    assert all(t["ok"] for t in res.trace)
    assert res.descriptor == RIG_SWITCHES[switch]
    assert len(res.bboxes) == 4


def test_noiseless_pose_matches_truth():
    env = _env()
    res = run_pipeline_once(AppConfig(), env, 4)
    truth = env.switch(4).pose
    assert np.linalg.norm(res.pose.center - truth.center) < 2e-3
    assert np.dot(res.pose.normal, truth.normal) > np.cos(np.radians(1.0))


def test_missed_detection_stops_the_trace():
    res = run_pipeline_once(AppConfig(), _env(NoiseConfig(detection_miss_rate=1.0)), 0)
    assert res.outcome.result == DETECTION_FAILURE
    assert [t["stage"] for t in res.trace] == ["detect"] and not res.trace[0]["ok"]


def test_wrong_oracle_is_affordance_failure():
    res = run_pipeline_once(AppConfig(), _env(NoiseConfig(oracle_error_rate=1.0)), 0)
    assert res.outcome.result == AFFORDANCE_FAILURE


def test_toggle_answer_fails_at_primitive_stage():
    res = run_pipeline_once(AppConfig(), _env(), 0, MockOracle({0: "toggle switch"}))
    assert res.outcome.result == AFFORDANCE_FAILURE
    assert res.trace[-1]["stage"] == "motion_primitive" and not res.trace[-1]["ok"]


def test_unparseable_answer_fails_at_affordance_stage():
    res = run_pipeline_once(AppConfig(), _env(), 0, MockOracle({0: "lever crank"}))
    assert res.outcome.result == AFFORDANCE_FAILURE
    assert res.trace[-1]["stage"] == "affordance"


def test_pose_failure_is_refinement_failure():
    # a tiny RANSAC threshold with heavy depth noise leaves no consensus worth keeping
    cfg = AppConfig(ransac=RansacConfig(threshold=1e-6, max_iters=3))
    res = run_pipeline_once(cfg, _env(NoiseConfig(depth_sigma_m=0.05)), 0)
    assert res.outcome.result == REFINEMENT_FAILURE


def test_subprocess_oracle_drives_pipeline():
    cfg = AppConfig(oracle_command=FAKE_ORACLE)
    env = _env()
    oracle = oracle_for(cfg, env)
    assert isinstance(oracle, SubprocessOracle)
    try:
        res = run_pipeline_once(cfg, env, 1, oracle)
    finally:
        oracle.close()
    assert res.outcome.result == SUCCESS
    assert res.descriptor == AffordanceDescriptor("push_button", 2, "side_by_side")


def test_misclassify_changes_motion():
    rng = np.random.default_rng(0)
    for desc in RIG_SWITCHES:
        for _ in range(20):
            wrong = misclassify(desc, rng)
            assert wrong.switch_type == "toggle" or wrong.motion_type != desc.motion_type


def test_sim_oracle_is_truthful_without_noise():
    env = _env()
    oracle = SimOracle(env)
    assert all(oracle.ask(i) == RIG_SWITCHES[i].serialize() for i in range(9))


def test_config_validation():
    with pytest.raises(ConfigError, match="lambda"):
        AppConfig(lam=2.0)
    with pytest.raises(ConfigError, match="refinement_count"):
        AppConfig(refinement_count=0)
    with pytest.raises(ConfigError, match="dy"):
        AppConfig(dy=0.0)
    with pytest.raises(ConfigError, match="vote"):
        AppConfig(vote="plurality")


def test_config_json_round_trip_and_overrides(tmp_path):
    cfg = AppConfig(lam=0.3, refinement_count=2, noise=NoiseConfig(0.1, 3.0), ransac=RansacConfig(0.02, 100, 4))
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg.to_dict()))
    assert AppConfig.load(path) == cfg
    assert AppConfig.from_dict({"lambda": 0.5}, base=cfg) == AppConfig(
        lam=0.5, refinement_count=2, noise=NoiseConfig(0.1, 3.0), ransac=RansacConfig(0.02, 100, 4))


def test_config_rejects_unknown_and_mistyped_fields(tmp_path):
    with pytest.raises(ConfigError, match="colour"):
        AppConfig.from_dict({"colour": "red"})
    with pytest.raises(ConfigError, match="lam"):
        AppConfig.from_dict({"lam": 0.2})
    with pytest.raises(ConfigError, match="refinement_count"):
        AppConfig.from_dict({"refinement_count": 2.5})
    with pytest.raises(ConfigError, match="noise"):
        AppConfig.from_dict({"noise": {"detection_miss_rate": 3}})
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ConfigError):
        AppConfig.load(bad)
