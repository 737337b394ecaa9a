"""Success-rate experiments: repeated pipeline attempts on every switch."""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

from ..errors import ConfigError
from ..metrics import success_rate_ci
from .env import (AFFORDANCE_FAILURE, DETECTION_FAILURE, OUTCOMES, REFINEMENT_FAILURE, SUCCESS, SimSceneSpec,
                  Streams, build_sim_scene)
from .scenes import default_rig_spec


@dataclass(frozen=True)
class ExperimentReport:
    n_attempt: int
    n_success: int
    n_det_fail: int
    n_ref_fail: int
    n_aff_fail: int
    sr: float
    ci95: tuple
    per_switch: tuple = ()

    def to_dict(self) -> dict:
        return {"n_attempt": self.n_attempt, "n_success": self.n_success, "n_det_fail": self.n_det_fail,
                "n_ref_fail": self.n_ref_fail, "n_aff_fail": self.n_aff_fail, "sr": self.sr,
                "ci95": list(self.ci95), "per_switch": [dict(s) for s in self.per_switch]}


def load_scene_spec(config, seed: int) -> SimSceneSpec:
    """The configured scene file, or the nine-switch rig, with the config's noise and seed."""
    import json
    from pathlib import Path

    if config.scene:
        try:
            data = json.loads(Path(config.scene).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError("scene", f"cannot read scene spec: {exc}") from exc
        spec = SimSceneSpec.from_dict(data)
        spec.noise, spec.seed = config.noise, seed
        return spec
    return default_rig_spec(config.noise, seed)


def _attempt(args):
    from ..pipeline import run_pipeline_once

    config, spec, seed, index, attempt = args
    env = build_sim_scene(spec)
    env.streams = Streams(seed, index, attempt)
    return run_pipeline_once(config, env, index).outcome.result


def run_success_experiment(config, seed: int | None = None, workers: int = 1) -> ExperimentReport:
    """Attempt every switch ``n_attempts_per_switch`` times and tally outcomes.

    Each attempt gets a fresh environment and RNG streams derived from
    ``(seed, switch, attempt)``, so results do not depend on ``workers``.
    """
    from ..pipeline import AppConfig

    if not isinstance(config, AppConfig):
        raise ConfigError("$", "expected an AppConfig")
    if config.oracle_command:
        raise ConfigError("oracle_command", "experiments use the simulated oracle")
    seed = config.seed if seed is None else int(seed)
    spec = load_scene_spec(config, seed)
    jobs = [(config, spec, seed, i, a) for i in range(len(spec.switches))
            for a in range(config.n_attempts_per_switch)]
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            results = list(pool.map(_attempt, jobs, chunksize=4))
    else:
        results = [_attempt(j) for j in jobs]
    counts = {k: results.count(k) for k in OUTCOMES}
    per_switch = []
    for i in range(len(spec.switches)):
        mine = results[i * config.n_attempts_per_switch:(i + 1) * config.n_attempts_per_switch]
        per_switch.append({"switch": i, **{k: mine.count(k) for k in OUTCOMES}})
    n = len(results)
    sr, lo, hi = success_rate_ci(counts[SUCCESS], n)
    return ExperimentReport(n, counts[SUCCESS], counts[DETECTION_FAILURE], counts[REFINEMENT_FAILURE],
                            counts[AFFORDANCE_FAILURE], sr, (lo, hi), tuple(per_switch))
