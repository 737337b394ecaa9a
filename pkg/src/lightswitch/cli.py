"""Command-line entry point.

Every subcommand prints one JSON document on stdout. Domain errors exit with
status 1 and a JSON error object on stderr; usage errors exit with status 2.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .bbox import BoundingBox, LineMap, crop_window, detect_line_map, distance_map, objective, refine_bbox
from .errors import SwitchError
from .geometry import CameraIntrinsics, CameraPose, DepthImage, RansacConfig, average_poses, estimate_element_pose
from .metrics import detection_summary, load_records
from .motion import Box3D, build_door_primitive, classify_interaction, sample_trajectory


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True)


def _json_arg(text: str):
    """Inline JSON, or the path of a JSON file."""
    s = text.strip()
    if s.startswith("{") or s.startswith("["):
        return json.loads(s)
    return json.loads(Path(text).read_text())


def load_gray_image(path) -> np.ndarray:
    """8-bit grayscale array from any image Pillow reads; colour is reduced to luminance."""
    from PIL import Image

    with Image.open(path) as im:
        return np.asarray(im.convert("L"), dtype=float)


def _r(v, nd=6):
    return [round(float(x), nd) for x in v]


# -- subcommands -------------------------------------------------------------

def cmd_refine_bbox(args) -> dict:
    img = load_gray_image(args.image)
    lines = LineMap((img > 0).astype(np.uint8)) if args.lines else detect_line_map(img)
    bbox0 = BoundingBox.parse(args.bbox)
    if args.margin < 0:
        u0, v0 = 0, 0
        crop = lines
    else:
        u0, v0, u1, v1 = crop_window(bbox0, lines.width, lines.height, args.margin)
        crop = LineMap(lines.values[v0:v1 + 1, u0:u1 + 1])
    D = distance_map(crop)
    local = BoundingBox(bbox0.x1 - u0, bbox0.y1 - v0, bbox0.x2 - u0, bbox0.y2 - v0)
    out = refine_bbox(local, D, args.lam)
    refined = BoundingBox(out.x1 + u0, out.y1 + v0, out.x2 + u0, out.y2 + v0)
    if args.figure:
        from .plotting import plot_bbox_refinement
        plot_bbox_refinement(D, local, out, args.figure)
    return {"initial": _r(bbox0.as_list()), "refined": _r(refined.as_list()), "lambda": args.lam,
            "objective_initial": round(objective(local, D, args.lam), 9),
            "objective_refined": round(objective(out, D, args.lam), 9),
            "crop": [u0, v0, u0 + crop.width - 1, v0 + crop.height - 1]}


def cmd_estimate_pose(args) -> dict:
    intr = CameraIntrinsics.from_dict(_json_arg(args.intrinsics))
    depths, boxes = args.depth, args.bbox
    cams = args.camera or []
    if len(depths) != len(boxes) or cams and len(cams) != len(depths):
        raise SwitchError("need one --bbox (and optionally one --camera) per --depth")
    cfg = RansacConfig(args.ransac_threshold, args.max_iters, args.seed)
    poses = []
    for k, (dpath, btext) in enumerate(zip(depths, boxes)):
        cam = CameraPose.from_dict(_json_arg(cams[k])) if cams else CameraPose.identity()
        poses.append(estimate_element_pose(BoundingBox.parse(btext), DepthImage.load(dpath), intr, cam, cfg))
    pose = average_poses(poses)
    return {"center": _r(pose.center, 9), "normal": _r(pose.normal, 9), "views": len(poses),
            "per_view": [{"center": _r(p.center, 9), "normal": _r(p.normal, 9)} for p in poses]}


def cmd_door_primitive(args) -> dict:
    handle = Box3D.from_dict(_json_arg(args.handle))
    front = Box3D.from_dict(_json_arg(args.front))
    kind = classify_interaction(handle, front)
    out = {"interaction": kind}
    if kind == "rotation":
        prim = build_door_primitive(handle, front)
        pts = sample_trajectory(prim, args.steps)
        out["primitive"] = prim.to_dict()
        out["trajectory"] = [_r(p, 9) for p in pts]
        if args.figure:
            from .plotting import plot_door_trajectory
            plot_door_trajectory(pts, prim.hinge_axis_point, args.figure)
    return out


def cmd_eval_detections(args) -> dict:
    return detection_summary(load_records(args.preds), load_records(args.gts))


def _config(args):
    from .pipeline import AppConfig

    cfg = AppConfig.load(args.config) if args.config else AppConfig()
    over = {}
    for flag, key in (("lam", "lambda"), ("refinement_count", "refinement_count"),
                      ("n_attempts", "n_attempts_per_switch"), ("scene", "scene"), ("passes", "exploration_passes"),
                      ("vote", "vote"), ("oracle_command", "oracle_command")):
        v = getattr(args, flag, None)
        if v is not None:
            over[key] = v
    if getattr(args, "no_bbox_refine", False):
        over["use_bbox_refine"] = False
    if args.seed is not None:
        over["seed"] = args.seed
    return AppConfig.from_dict(over, base=cfg)


def _figure_path(args, out_path) -> str | None:
    if args.no_figure:
        return None
    if args.figure:
        return args.figure
    if out_path:
        return str(Path(out_path).with_suffix(".png"))
    return None


def cmd_run_experiment(args) -> dict:
    from .sim.experiment import run_success_experiment

    cfg = _config(args)
    report = run_success_experiment(cfg, cfg.seed, workers=args.workers).to_dict()
    report["config"] = cfg.to_dict()
    if args.out:
        Path(args.out).write_text(_dump(report) + "\n")
    fig = _figure_path(args, args.out)
    if fig:
        from .plotting import plot_failure_taxonomy
        plot_failure_taxonomy([(f"N_r={cfg.refinement_count}", report)], fig)
    return report


def cmd_explore(args) -> dict:
    from .scene_graph import deserialize_graph, serialize_graph
    from .sim.env import SimSceneSpec, Streams, build_sim_scene
    from .sim.exploration import ExplorationPolicy, run_exploration
    from .sim.scenes import default_rig_spec, ground_truth_graph

    cfg = _config(args)
    spec = SimSceneSpec.from_dict(_json_arg(args.scene)) if args.scene else default_rig_spec()
    if args.config:
        spec.noise = cfg.noise
    if args.flip_rate is not None:
        spec.noise = replace(spec.noise, state_flip_rate=args.flip_rate)
    spec.seed = cfg.seed
    env = build_sim_scene(spec)
    env.streams = Streams(cfg.seed)
    if args.graph:
        graph = deserialize_graph(Path(args.graph).read_text())
    else:
        graph = ground_truth_graph(spec)[0]
    policy = ExplorationPolicy(passes=cfg.exploration_passes, vote=cfg.vote)
    learned, log = run_exploration(graph, env, policy, cfg.tolerance)
    text = serialize_graph(learned)
    if args.out:
        Path(args.out).write_text(text + "\n")
    if args.log:
        with open(args.log, "w") as fh:
            for entry in log:
                fh.write(json.dumps(entry, sort_keys=True) + "\n")
    fig = _figure_path(args, args.out)
    if fig:
        from .plotting import plot_scene_graph
        plot_scene_graph(learned, fig, title="Learned scene graph")
    return {"edges": [list(e) for e in sorted(learned.edge_pairs())], "interactions": len(log),
            "lamp_states": {v.id: v.state for v in sorted(learned.of_class("lamp"), key=lambda v: v.id)}}


def cmd_pipeline(args) -> dict:
    from .pipeline import oracle_for, run_pipeline_once
    from .sim.env import Streams, build_sim_scene
    from .sim.experiment import load_scene_spec

    cfg = _config(args)
    spec = load_scene_spec(cfg, cfg.seed)
    env = build_sim_scene(spec)
    env.streams = Streams(cfg.seed, args.switch, 0)
    oracle = oracle_for(cfg, env)
    try:
        res = run_pipeline_once(cfg, env, args.switch, oracle)
    finally:
        oracle.close()
    out = res.to_dict()
    out["switch"] = args.switch
    out["seed"] = cfg.seed
    return out


# -- parser ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lightswitch", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, metavar="command")

    s = sub.add_parser("refine-bbox", help="align a detection box with image lines")
    s.add_argument("--image", required=True, help="grayscale or colour image (PGM, PNG, ...)")
    s.add_argument("--bbox", required=True, help="initial box as x1,y1,x2,y2")
    s.add_argument("--lambda", dest="lam", type=float, default=0.1, help="squareness weight in [0, 1]")
    s.add_argument("--margin", type=float, default=0.5,
                   help="crop margin as a fraction of the longer box side; negative uses the whole image")
    s.add_argument("--lines", action="store_true", help="the image already is a line map (nonzero = line)")
    s.add_argument("--figure", help="write a PNG of the distance map and both boxes")
    s.set_defaults(func=cmd_refine_bbox)

    s = sub.add_parser("estimate-pose", help="element pose from depth views, averaged")
    s.add_argument("--depth", action="append", required=True, help="raw float32 depth file with .json sidecar")
    s.add_argument("--bbox", action="append", required=True, help="x1,y1,x2,y2, one per --depth")
    s.add_argument("--camera", action="append", help="camera-to-world pose JSON, one per --depth")
    s.add_argument("--intrinsics", required=True, help="intrinsics JSON (inline or path)")
    s.add_argument("--ransac-threshold", type=float, default=0.01)
    s.add_argument("--max-iters", type=int, default=500)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_estimate_pose)

    s = sub.add_parser("door-primitive", help="hinge, lever and opening arc for a handle on a front")
    s.add_argument("--handle", required=True, help="handle box JSON (inline or path)")
    s.add_argument("--front", required=True, help="front box JSON (inline or path)")
    s.add_argument("--steps", type=int, default=20)
    s.add_argument("--figure", help="write a PNG of the opening arc")
    s.set_defaults(func=cmd_door_primitive)

    s = sub.add_parser("eval-detections", help="mAP50, mAP50-95, precision and recall")
    s.add_argument("--preds", required=True, help="predictions JSONL")
    s.add_argument("--gts", required=True, help="ground truth JSONL")
    s.set_defaults(func=cmd_eval_detections)

    def sim_flags(s, out_help):
        s.add_argument("--config", help="AppConfig JSON file")
        s.add_argument("--seed", type=int)
        s.add_argument("--lambda", dest="lam", type=float)
        s.add_argument("--refinement-count", type=int)
        s.add_argument("--no-bbox-refine", action="store_true")
        s.add_argument("--out", help=out_help)
        s.add_argument("--figure", help="figure path (default: next to --out, .png)")
        s.add_argument("--no-figure", action="store_true")

    s = sub.add_parser("run-experiment", help="success rate and failure taxonomy over the test rig")
    sim_flags(s, "report JSON path")
    s.add_argument("--n-attempts", type=int, help="attempts per switch")
    s.add_argument("--scene", help="scene spec JSON path")
    s.add_argument("--workers", type=int, default=1)
    s.set_defaults(func=cmd_run_experiment)

    s = sub.add_parser("explore", help="learn switch-to-lamp edges by operating switches")
    sim_flags(s, "learned graph JSON path")
    s.add_argument("--scene", help="scene spec JSON (inline or path); default: the nine-switch rig")
    s.add_argument("--graph", help="initial scene graph JSON; default: registered from the scene")
    s.add_argument("--log", help="interaction log JSONL path")
    s.add_argument("--passes", type=int)
    s.add_argument("--vote", choices=["majority", "sequence"])
    s.add_argument("--flip-rate", type=float, help="lamp observation noise")
    s.set_defaults(func=cmd_explore)

    s = sub.add_parser("pipeline", help="one attempt at one switch with a stage trace")
    s.add_argument("--config", help="AppConfig JSON file")
    s.add_argument("--switch", type=int, required=True, help="switch index in the scene")
    s.add_argument("--seed", type=int)
    s.add_argument("--scene", help="scene spec JSON path")
    s.add_argument("--oracle-command", help="external affordance oracle command")
    s.add_argument("--lambda", dest="lam", type=float)
    s.add_argument("--refinement-count", type=int)
    s.add_argument("--no-bbox-refine", action="store_true")
    s.set_defaults(func=cmd_pipeline)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        result = args.func(args)
    except SwitchError as exc:
        print(json.dumps(exc.to_dict(), sort_keys=True), file=sys.stderr)
        return 1
    except (OSError, ValueError, KeyError, TypeError) as exc:
        err = {"error": type(exc).__name__, "message": str(exc)}
        print(json.dumps(err, sort_keys=True), file=sys.stderr)
        return 1
    print(_dump(result))
    return 0


if __name__ == "__main__":
    sys.exit(main())
