"""Oriented boxes in the ground plane and the overlap math built on them.

Conventions: x forward, y left, z up, all lengths in meters. A box yaw is the
rotation of its +x edge about +z, wrapped to [-pi, pi). BEV footprints are
convex quads traversed counter-clockwise; intersection areas below
``AREA_EPSILON`` square meters are treated as zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

AREA_EPSILON = 1e-12

__all__ = [
    "AREA_EPSILON",
    "Box3D",
    "Rect2D",
    "Proposal",
    "wrap_angle",
    "polygon_area",
    "clip_convex",
    "intersection_area",
    "iou_bev",
    "iou_3d",
    "iou_rect",
    "iou_3d_oracle",
    "nms",
]


def wrap_angle(angle: float) -> float:
    """Wrap an angle in radians to [-pi, pi)."""
    wrapped = (float(angle) + math.pi) % (2.0 * math.pi) - math.pi
    # The modulo can return exactly +pi for inputs a hair below -pi.
    return -math.pi if wrapped == math.pi else wrapped


def _as_triple(value, name: str) -> tuple:
    out = tuple(float(v) for v in value)
    if len(out) != 3:
        raise ValueError(f"{name} must have 3 components, got {len(out)}")
    if not all(math.isfinite(v) for v in out):
        raise ValueError(f"{name} must be finite, got {out}")
    return out


@dataclass(frozen=True)
class Box3D:
    """Oriented 3D box: center (cx, cy, cz), scale (dx, dy, dz), yaw about +z."""

    center: tuple
    scale: tuple
    yaw: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "center", _as_triple(self.center, "center"))
        scale = _as_triple(self.scale, "scale")
        if min(scale) <= 0.0:
            raise ValueError(f"scale must be positive, got {scale}")
        object.__setattr__(self, "scale", scale)
        if not math.isfinite(self.yaw):
            raise ValueError(f"yaw must be finite, got {self.yaw}")
        object.__setattr__(self, "yaw", wrap_angle(self.yaw))

    @property
    def volume(self) -> float:
        dx, dy, dz = self.scale
        return dx * dy * dz

    @property
    def z_interval(self) -> tuple:
        cz, dz = self.center[2], self.scale[2]
        return (cz - 0.5 * dz, cz + 0.5 * dz)

    def bev_corners(self) -> list:
        """Footprint corners in the ground plane, counter-clockwise."""
        cx, cy, _ = self.center
        hx, hy = 0.5 * self.scale[0], 0.5 * self.scale[1]
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        corners = []
        for lx, ly in ((hx, hy), (-hx, hy), (-hx, -hy), (hx, -hy)):
            corners.append((cx + c * lx - s * ly, cy + s * lx + c * ly))
        return corners

    def corners(self) -> np.ndarray:
        """All 8 corners as an (8, 3) array, bottom face first."""
        bev = self.bev_corners()
        z_lo, z_hi = self.z_interval
        out = np.empty((8, 3), dtype=np.float64)
        for i, (x, y) in enumerate(bev):
            out[i] = (x, y, z_lo)
            out[i + 4] = (x, y, z_hi)
        return out

    def contains_points(self, points: np.ndarray) -> np.ndarray:
        """Boolean mask over (n, >=3) points, box boundary inclusive."""
        pts = np.asarray(points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] < 3:
            raise ValueError(f"points must be (n, >=3), got {pts.shape}")
        d = pts[:, :3] - np.asarray(self.center)
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        local_x = c * d[:, 0] + s * d[:, 1]
        local_y = -s * d[:, 0] + c * d[:, 1]
        hx, hy, hz = (0.5 * v for v in self.scale)
        return (
            (np.abs(local_x) <= hx)
            & (np.abs(local_y) <= hy)
            & (np.abs(d[:, 2]) <= hz)
        )

    def contains(self, point) -> bool:
        return bool(self.contains_points(np.asarray(point, dtype=np.float64)[None, :])[0])


@dataclass(frozen=True)
class Rect2D:
    """Oriented rectangle in map coordinates: center (u, v) = (row, col)."""

    center: tuple
    size: tuple
    angle: float = 0.0

    def __post_init__(self):
        center = tuple(float(v) for v in self.center)
        size = tuple(float(v) for v in self.size)
        if len(center) != 2 or len(size) != 2:
            raise ValueError("center and size must each have 2 components")
        if min(size) <= 0.0:
            raise ValueError(f"size must be positive, got {size}")
        if not all(math.isfinite(v) for v in center + size + (self.angle,)):
            raise ValueError("Rect2D fields must be finite")
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "size", size)
        object.__setattr__(self, "angle", wrap_angle(self.angle))

    @property
    def area(self) -> float:
        return self.size[0] * self.size[1]

    def corners(self) -> list:
        cu, cv = self.center
        hu, hv = 0.5 * self.size[0], 0.5 * self.size[1]
        c, s = math.cos(self.angle), math.sin(self.angle)
        return [
            (cu + c * lu - s * lv, cv + s * lu + c * lv)
            for lu, lv in ((hu, hv), (-hu, hv), (-hu, -hv), (hu, -hv))
        ]


@dataclass(frozen=True)
class Proposal:
    """A scored oriented box with class probabilities summing to one."""

    box: Box3D
    score: float
    class_probs: tuple = (1.0,)
    source_anchor: int = -1

    def __post_init__(self):
        score = float(self.score)
        if not (0.0 <= score <= 1.0):
            raise ValueError(f"score must be in [0, 1], got {score}")
        object.__setattr__(self, "score", score)
        probs = tuple(float(p) for p in self.class_probs)
        if not probs or min(probs) < 0.0:
            raise ValueError("class_probs must be non-empty and non-negative")
        if abs(sum(probs) - 1.0) > 1e-6:
            raise ValueError(f"class_probs must sum to 1, got {sum(probs)}")
        object.__setattr__(self, "class_probs", probs)
        object.__setattr__(self, "source_anchor", int(self.source_anchor))


def polygon_area(poly) -> float:
    """Absolute shoelace area of a polygon given as a vertex sequence."""
    n = len(poly)
    if n < 3:
        return 0.0
    acc = 0.0
    px, py = poly[-1]
    for qx, qy in poly:
        acc += px * qy - py * qx
        px, py = qx, qy
    return 0.5 * abs(acc)


def clip_convex(subject, clip) -> list:
    """Sutherland-Hodgman: clip a convex polygon against a CCW convex polygon."""
    output = list(subject)
    ax, ay = clip[-1]
    for bx, by in clip:
        if not output:
            break
        inp = output
        output = []
        ex, ey = bx - ax, by - ay
        sx, sy = inp[-1]
        s_in = ex * (sy - ay) - ey * (sx - ax) >= 0.0
        for px, py in inp:
            p_in = ex * (py - ay) - ey * (px - ax) >= 0.0
            if p_in != s_in:
                dx, dy = px - sx, py - sy
                denom = dx * ey - dy * ex
                if denom != 0.0:
                    t = ((ax - sx) * ey - (ay - sy) * ex) / denom
                    output.append((sx + t * dx, sy + t * dy))
            if p_in:
                output.append((px, py))
            sx, sy, s_in = px, py, p_in
        ax, ay = bx, by
    return output


def intersection_area(poly_a, poly_b) -> float:
    """Overlap area of two convex CCW polygons; tiny slivers count as zero."""
    area = polygon_area(clip_convex(poly_a, poly_b))
    return 0.0 if area < AREA_EPSILON else area


def _bev_reject(a: Box3D, b: Box3D) -> bool:
    dx = a.center[0] - b.center[0]
    dy = a.center[1] - b.center[1]
    ra = 0.5 * math.hypot(a.scale[0], a.scale[1])
    rb = 0.5 * math.hypot(b.scale[0], b.scale[1])
    return dx * dx + dy * dy > (ra + rb) * (ra + rb)


def iou_bev(a: Box3D, b: Box3D) -> float:
    """Bird's-eye-view IoU of two oriented box footprints."""
    if _bev_reject(a, b):
        return 0.0
    inter = intersection_area(a.bev_corners(), b.bev_corners())
    if inter == 0.0:
        return 0.0
    area_a = a.scale[0] * a.scale[1]
    area_b = b.scale[0] * b.scale[1]
    return inter / (area_a + area_b - inter)


def iou_3d(a: Box3D, b: Box3D) -> float:
    """3D IoU: BEV overlap area times vertical interval overlap, over union."""
    if _bev_reject(a, b):
        return 0.0
    a_lo, a_hi = a.z_interval
    b_lo, b_hi = b.z_interval
    dz = min(a_hi, b_hi) - max(a_lo, b_lo)
    if dz <= 0.0:
        return 0.0
    inter_bev = intersection_area(a.bev_corners(), b.bev_corners())
    if inter_bev == 0.0:
        return 0.0
    inter = inter_bev * dz
    return inter / (a.volume + b.volume - inter)


def iou_rect(a: Rect2D, b: Rect2D) -> float:
    """IoU of two oriented rectangles in map coordinates."""
    inter = intersection_area(a.corners(), b.corners())
    if inter == 0.0:
        return 0.0
    return inter / (a.area + b.area - inter)


def iou_3d_oracle(a: Box3D, b: Box3D, n_samples: int = 1_000_000, seed: int = 0) -> float:
    """Monte-Carlo 3D IoU: uniform samples in the union's axis-aligned bounds.

    Estimates IoU as the ratio of samples inside both boxes to samples inside
    either. Independent of the analytic path; used as a cross-check oracle.
    """
    corners = np.vstack([a.corners(), b.corners()])
    lo = corners.min(axis=0)
    hi = corners.max(axis=0)
    rng = np.random.default_rng(seed)
    pts = rng.uniform(lo, hi, size=(int(n_samples), 3))
    in_a = a.contains_points(pts)
    in_b = b.contains_points(pts)
    union = int(np.count_nonzero(in_a | in_b))
    if union == 0:
        return 0.0
    both = int(np.count_nonzero(in_a & in_b))
    return both / union


def nms(
    proposals: list,
    iou_threshold: float,
    mode: str = "bev",
    rects: list | None = None,
) -> list:
    """Greedy non-maximum suppression over scored proposals.

    Proposals are visited in descending score order (ties keep input order); a
    proposal is kept when its overlap with every kept proposal is at most
    ``iou_threshold``, and the survivors come back in that same score order.
    ``mode`` selects the overlap: "bev" or "3d" on the boxes, or "2d" on
    ``rects`` (precomputed map rectangles, one per proposal, None entries
    never suppress or get suppressed by overlap).
    """
    if mode not in ("bev", "3d", "2d"):
        raise ValueError(f"unknown nms mode {mode!r}")
    if mode == "2d":
        if rects is None or len(rects) != len(proposals):
            raise ValueError("mode '2d' needs one rect per proposal")
    if not proposals:
        return []
    thr = float(iou_threshold)
    order = sorted(range(len(proposals)), key=lambda i: (-proposals[i].score, i))
    kept: list = []
    for i in order:
        suppressed = False
        for j in kept:
            if mode == "bev":
                overlap = iou_bev(proposals[i].box, proposals[j].box)
            elif mode == "3d":
                overlap = iou_3d(proposals[i].box, proposals[j].box)
            else:
                if rects[i] is None or rects[j] is None:
                    continue
                overlap = iou_rect(rects[i], rects[j])
            if overlap > thr:
                suppressed = True
                break
        if not suppressed:
            kept.append(i)
    return [proposals[i] for i in kept]
