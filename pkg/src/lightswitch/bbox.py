"""Bounding-box refinement against image line features.

A detector box is aligned with nearby edges by minimising the mean of a
normalised distance map along the box perimeter plus a squareness penalty.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from skimage.draw import line as draw_line
from skimage.filters import threshold_otsu
from skimage.transform import probabilistic_hough_line

from .errors import DegenerateBox, EmptyImage, NoLinePixels, OutOfDomain


@dataclass(frozen=True)
class BoundingBox:
    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        for name in ("x1", "y1", "x2", "y2"):
            object.__setattr__(self, name, float(getattr(self, name)))

    @property
    def width(self) -> float:
        return self.x2 - self.x1

    @property
    def height(self) -> float:
        return self.y2 - self.y1

    @property
    def center(self) -> tuple[float, float]:
        return (self.x1 + self.x2) / 2.0, (self.y1 + self.y2) / 2.0

    def is_valid(self) -> bool:
        return self.x1 < self.x2 and self.y1 < self.y2

    def within(self, width: int, height: int) -> bool:
        return (0 <= self.x1 and 0 <= self.y1
                and self.x2 <= width - 1 and self.y2 <= height - 1)

    def as_array(self) -> np.ndarray:
        return np.array([self.x1, self.y1, self.x2, self.y2])

    def as_list(self) -> list[float]:
        return [self.x1, self.y1, self.x2, self.y2]

    def scaled(self, s: float) -> "BoundingBox":
        return BoundingBox(self.x1 * s, self.y1 * s, self.x2 * s, self.y2 * s)

    @classmethod
    def parse(cls, text: str) -> "BoundingBox":
        parts = [float(p) for p in text.split(",")]
        if len(parts) != 4:
            raise ValueError(f"expected x1,y1,x2,y2, got {text!r}")
        return cls(*parts)


@dataclass(frozen=True)
class LineMap:
    """Binary (height, width) grid, 1 where a line passes."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.ndim != 2:
            raise ValueError("line map must be 2-D")
        if not np.isin(v, (0, 1)).all():
            raise ValueError("line map values must be 0 or 1")
        object.__setattr__(self, "values", v.astype(np.uint8))

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def height(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class DistanceMap:
    """Distance to the nearest line pixel, normalised to [0, 1]."""

    values: np.ndarray

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def height(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class HoughConfig:
    # vote threshold, min segment length and gap are not fixed by the method
    threshold: int = 10
    line_length: int = 10
    line_gap: int = 3
    seed: int = 0


@dataclass(frozen=True)
class RefineOptions:
    initial_step: float = 4.0
    min_step: float = 0.25
    max_evals_per_param: int = 200


def detect_line_map(image, cfg: HoughConfig | None = None) -> LineMap:
    """Sobel edges with an Otsu threshold, then a probabilistic Hough transform.

    The accepted segments are rasterised back onto the pixel grid.
    """
    cfg = cfg or HoughConfig()
    img = np.asarray(image, dtype=float)
    if img.ndim != 2 or img.size == 0:
        raise EmptyImage("image must be a non-empty 2-D array")
    gx = ndimage.sobel(img, axis=1, mode="nearest")
    gy = ndimage.sobel(img, axis=0, mode="nearest")
    mag = np.hypot(gx, gy)
    out = np.zeros(img.shape, dtype=np.uint8)
    if mag.max() <= 0:
        return LineMap(out)
    edges = mag > threshold_otsu(mag)
    segments = probabilistic_hough_line(edges, threshold=cfg.threshold, line_length=cfg.line_length,
                                        line_gap=cfg.line_gap, rng=cfg.seed)
    for (c0, r0), (c1, r1) in segments:
        rr, cc = draw_line(r0, c0, r1, c1)
        keep = (rr >= 0) & (rr < img.shape[0]) & (cc >= 0) & (cc < img.shape[1])
        out[rr[keep], cc[keep]] = 1
    return LineMap(out)


def euclidean_distance(lines: LineMap) -> np.ndarray:
    """Exact Euclidean distance from every pixel to the nearest line pixel."""
    if not lines.values.any():
        raise NoLinePixels("line map has no line pixels")
    return ndimage.distance_transform_edt(lines.values == 0)


def distance_map(lines: LineMap) -> DistanceMap:
    d = euclidean_distance(lines)
    top = d.max()
    return DistanceMap(d / top if top > 0 else d)


def bilinear(values: np.ndarray, x, y) -> np.ndarray:
    """Sample a grid at continuous (x, y); integer coordinates are pixel centers."""
    h, w = values.shape
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    x0 = np.clip(np.floor(x).astype(int), 0, max(w - 2, 0))
    y0 = np.clip(np.floor(y).astype(int), 0, max(h - 2, 0))
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = x - x0
    fy = y - y0
    top = values[y0, x0] * (1 - fx) + values[y0, x1] * fx
    bot = values[y1, x0] * (1 - fx) + values[y1, x1] * fx
    return top * (1 - fy) + bot * fy


def perimeter_samples(bbox: BoundingBox) -> tuple[np.ndarray, np.ndarray]:
    """About one sample per pixel of arc length, corners counted once."""
    xs, ys = [], []
    corners = [(bbox.x1, bbox.y1), (bbox.x2, bbox.y1), (bbox.x2, bbox.y2), (bbox.x1, bbox.y2)]
    for (ax, ay), (bx, by) in zip(corners, corners[1:] + corners[:1]):
        n = max(1, int(math.ceil(math.hypot(bx - ax, by - ay))))
        t = np.arange(n) / n
        xs.append(ax + (bx - ax) * t)
        ys.append(ay + (by - ay) * t)
    return np.concatenate(xs), np.concatenate(ys)


def perimeter_distance_loss(bbox: BoundingBox, D: DistanceMap) -> float:
    xs, ys = perimeter_samples(bbox)
    if xs.min() < 0 or ys.min() < 0 or xs.max() > D.width - 1 or ys.max() > D.height - 1:
        raise OutOfDomain(f"perimeter of {bbox} leaves the {D.width}x{D.height} image")
    return float(bilinear(D.values, xs, ys).mean())


def rectangularity_loss(bbox: BoundingBox) -> float:
    w, h = bbox.width, bbox.height
    if not (w > 0 and h > 0):
        raise DegenerateBox(f"box {bbox} has zero or negative extent")
    return 1.0 - (w * h) / max(w, h) ** 2


def objective(bbox: BoundingBox, D: DistanceMap, lam: float) -> float:
    return perimeter_distance_loss(bbox, D) + lam * rectangularity_loss(bbox)


def refine_bbox(bbox0: BoundingBox, D: DistanceMap, lam: float = 0.1,
                opts: RefineOptions | None = None) -> BoundingBox:
    """Compass search on (x1, y1, x2, y2) minimising distance + lam * squareness.

    Each iteration polls +/- step on every coordinate and takes the best
    improving move; the step halves when nothing improves. Moves that leave
    the image or invert the box are rejected.
    """
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lambda must lie in [0, 1], got {lam}")
    opts = opts or RefineOptions()
    x = bbox0.as_array()
    best = objective(bbox0, D, lam)
    step = opts.initial_step
    budget = opts.max_evals_per_param * 4
    evals = 1
    while step >= opts.min_step and evals < budget:
        cands = []
        for i in range(4):
            for sign in (1.0, -1.0):
                cand = x.copy()
                cand[i] += sign * step
                box = BoundingBox(*cand)
                if box.is_valid() and box.within(D.width, D.height):
                    cands.append(box)
        cands = cands[:budget - evals]
        evals += len(cands)
        f = _batch_objective(cands, D, lam) if cands else np.empty(0)
        k = int(np.argmin(f)) if len(f) else -1
        if k < 0 or not f[k] < best:
            step /= 2.0
        else:
            x, best = cands[k].as_array(), float(f[k])
    return BoundingBox(*x)


def crop_window(bbox: BoundingBox, width: int, height: int, margin: float = 0.5) -> tuple[int, int, int, int]:
    """Integer window (u0, v0, u1, v1), inclusive, around ``bbox``.

    The box grows by ``margin`` times its longer side on every side and is
    clipped to the image.
    """
    pad = margin * max(bbox.width, bbox.height)
    u0 = max(0, int(math.floor(bbox.x1 - pad)))
    v0 = max(0, int(math.floor(bbox.y1 - pad)))
    u1 = min(width - 1, int(math.ceil(bbox.x2 + pad)))
    v1 = min(height - 1, int(math.ceil(bbox.y2 + pad)))
    return u0, v0, u1, v1


def refine_bbox_in_image(bbox0: BoundingBox, lines: LineMap, lam: float = 0.1, margin: float = 0.5,
                         opts: RefineOptions | None = None) -> BoundingBox:
    """Refine against a distance map built on a crop around the detection.

    Normalising by the grid maximum ties the balance between the two loss
    terms to the grid size; cropping relative to the box keeps it tied to the
    box instead. ``margin=None`` uses the whole line map.
    """
    if margin is None:
        return refine_bbox(bbox0, distance_map(lines), lam, opts)
    u0, v0, u1, v1 = crop_window(bbox0, lines.width, lines.height, margin)
    D = distance_map(LineMap(lines.values[v0:v1 + 1, u0:u1 + 1]))
    local = BoundingBox(bbox0.x1 - u0, bbox0.y1 - v0, bbox0.x2 - u0, bbox0.y2 - v0)
    r = refine_bbox(local, D, lam, opts)
    return BoundingBox(r.x1 + u0, r.y1 + v0, r.x2 + u0, r.y2 + v0)


def _batch_objective(boxes: list[BoundingBox], D: DistanceMap, lam: float) -> np.ndarray:
    """``objective`` for several in-domain boxes with one grid lookup."""
    samples = [perimeter_samples(b) for b in boxes]
    xs = np.concatenate([s[0] for s in samples])
    ys = np.concatenate([s[1] for s in samples])
    starts = np.cumsum([0] + [len(s[0]) for s in samples[:-1]])
    sums = np.add.reduceat(bilinear(D.values, xs, ys), starts)
    means = sums / np.array([len(s[0]) for s in samples])
    return means + lam * np.array([rectangularity_loss(b) for b in boxes])


def render_rectangle(width: int, height: int, box: BoundingBox) -> LineMap:
    """Rasterise an axis-aligned rectangle outline (integer corners)."""
    out = np.zeros((height, width), dtype=np.uint8)
    x1, y1, x2, y2 = (int(round(v)) for v in box.as_list())
    out[y1, x1:x2 + 1] = 1
    out[y2, x1:x2 + 1] = 1
    out[y1:y2 + 1, x1] = 1
    out[y1:y2 + 1, x2] = 1
    return LineMap(out)


def render_polygon(width: int, height: int, corners) -> LineMap:
    """Rasterise a closed polygon outline given (x, y) corners."""
    out = np.zeros((height, width), dtype=np.uint8)
    pts = [(int(round(x)), int(round(y))) for x, y in corners]
    for (c0, r0), (c1, r1) in zip(pts, pts[1:] + pts[:1]):
        rr, cc = draw_line(r0, c0, r1, c1)
        keep = (rr >= 0) & (rr < height) & (cc >= 0) & (cc < width)
        out[rr[keep], cc[keep]] = 1
    return LineMap(out)
