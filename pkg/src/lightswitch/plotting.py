"""Report figures, rendered headless to image files."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .bbox import BoundingBox, DistanceMap  # noqa: E402
from .scene_graph import SceneGraph  # noqa: E402

OUTCOME_COLORS = {"success": "#4c956c", "detection_failure": "#d1495b",
                  "refinement_failure": "#edae49", "affordance_failure": "#00798c"}
# fixed metadata keeps PNG bytes stable between runs
_META = {"Software": None}


def _save(fig, path) -> None:
    fig.savefig(path, dpi=120, metadata=_META)
    plt.close(fig)


def plot_failure_taxonomy(rows, path, title: str = "Outcome per attempt") -> None:
    """Stacked outcome bars; ``rows`` is a list of ``(label, report_dict)``."""
    keys = [("n_success", "success"), ("n_det_fail", "detection_failure"),
            ("n_ref_fail", "refinement_failure"), ("n_aff_fail", "affordance_failure")]
    labels = [r[0] for r in rows]
    fig, ax = plt.subplots(figsize=(1.6 + 1.2 * len(rows), 3.6))
    bottom = np.zeros(len(rows))
    for field, name in keys:
        frac = np.array([r[1][field] / r[1]["n_attempt"] for r in rows])
        ax.bar(labels, frac, bottom=bottom, color=OUTCOME_COLORS[name], label=name.replace("_", " "))
        bottom += frac
    for i, (_, rep) in enumerate(rows):
        lo, hi = rep["ci95"]
        ax.errorbar(i, rep["sr"], yerr=[[rep["sr"] - lo], [hi - rep["sr"]]], color="k", capsize=4, lw=1)
    ax.set_ylim(0, 1)
    ax.set_ylabel("fraction of attempts")
    ax.set_title(title)
    ax.legend(fontsize=7, loc="upper left", bbox_to_anchor=(1.0, 1.0))
    fig.tight_layout()
    _save(fig, path)


def plot_bbox_refinement(D: DistanceMap, initial: BoundingBox, refined: BoundingBox, path) -> None:
    fig, ax = plt.subplots(figsize=(5, 5 * D.height / max(D.width, 1)))
    ax.imshow(D.values, cmap="gray")
    for box, color, name in ((initial, "tab:blue", "initial"), (refined, "tab:green", "refined")):
        ax.add_patch(plt.Rectangle((box.x1, box.y1), box.width, box.height, fill=False, ec=color, lw=1.5,
                                   label=name))
    ax.legend(fontsize=7, loc="lower right")
    ax.set_axis_off()
    fig.tight_layout()
    _save(fig, path)


def plot_scene_graph(graph: SceneGraph, path, title: str = "Scene graph") -> None:
    """Front elevation (x, z) of switches and lamps with the learned control edges."""
    fig, ax = plt.subplots(figsize=(5, 4))
    style = {"switch": ("s", "tab:orange"), "swing_door": ("D", "tab:brown"), "lamp": ("*", "gold")}
    for v in sorted(graph.vertices.values(), key=lambda v: v.id):
        marker, color = style.get(v.cls, ("o", "tab:gray"))
        x, y = v.pose.center[0], v.pose.center[2]
        ec = "k" if v.state != "on" else "red"
        ax.scatter([x], [y], marker=marker, s=110, c=color, edgecolors=ec, zorder=3)
        ax.annotate(v.id, (x, y), textcoords="offset points", xytext=(4, 6), fontsize=6)
    for a, b in sorted(graph.edge_pairs()):
        pa, pb = graph.vertex(a).pose.center, graph.vertex(b).pose.center
        ax.annotate("", xy=(pb[0], pb[2]), xytext=(pa[0], pa[2]),
                    arrowprops={"arrowstyle": "->", "color": "tab:blue", "lw": 0.8})
    ax.set_xlabel("x [m]")
    ax.set_ylabel("z [m]")
    ax.set_title(title)
    ax.set_aspect("equal", adjustable="datalim")
    fig.tight_layout()
    _save(fig, path)


def plot_door_trajectory(waypoints, hinge_point, path) -> None:
    pts = np.asarray(waypoints)
    fig, ax = plt.subplots(figsize=(4, 4))
    ax.plot(pts[:, 0], pts[:, 1], "o-", ms=3, label="handle path")
    ax.scatter([hinge_point[0]], [hinge_point[1]], marker="x", c="k", label="hinge")
    ax.set_aspect("equal", adjustable="datalim")
    ax.set_xlabel("x [m]")
    ax.set_ylabel("y [m]")
    ax.legend(fontsize=7)
    fig.tight_layout()
    _save(fig, path)
