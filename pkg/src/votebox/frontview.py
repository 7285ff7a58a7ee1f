"""Front-view XYZ-map: spherical projection of a cloud onto a dense 2D grid.

A point maps to column c = floor(azimuth / delta_theta) - c_offset and row
r = floor(elevation / delta_phi) - r_offset, where azimuth = atan2(y, x),
elevation = atan2(z, sqrt(x^2 + y^2)) and the offsets anchor the range minima
at index 0. Cells hold three channels (height z, Euclidean 3D distance,
intensity) plus an occupancy mask; unoccupied cells are zero-filled and the
mask is authoritative. Collisions keep the nearest point (ties: lowest index).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .cloudio import PointCloud
from .geometry import Box3D, Rect2D

# Absorbs float noise in ratio computations like (-pi/18)/(pi/180), which can
# land an ulp below the intended integer and shift the floor by a full bin.
FLOOR_EPS = 1e-9

__all__ = [
    "ProjectionConfig",
    "FrontViewMap",
    "project_point",
    "project_points",
    "build_map",
    "crop_patch",
    "box_to_map_rect",
    "rect_tuple_from_rect2d",
    "render_channel_pgm",
]


def _ifloor(values):
    return np.floor(np.asarray(values, dtype=np.float64) + FLOOR_EPS).astype(np.int64)


@dataclass(frozen=True)
class ProjectionConfig:
    """Angular resolution and field of view of the front-view grid."""

    delta_theta: float = math.radians(0.4)
    delta_phi: float = math.radians(0.4)
    theta_range: tuple = (-math.pi / 4.0, math.pi / 4.0)
    phi_range: tuple = (math.radians(-24.9), math.radians(2.0))

    def __post_init__(self):
        if self.delta_theta <= 0.0 or self.delta_phi <= 0.0:
            raise ValueError("angular resolutions must be positive")
        if self.theta_range[0] >= self.theta_range[1]:
            raise ValueError("theta_range must be non-degenerate")
        if self.phi_range[0] >= self.phi_range[1]:
            raise ValueError("phi_range must be non-degenerate")

    @property
    def c_offset(self) -> int:
        return int(_ifloor(self.theta_range[0] / self.delta_theta))

    @property
    def r_offset(self) -> int:
        return int(_ifloor(self.phi_range[0] / self.delta_phi))

    @property
    def cols(self) -> int:
        return int(_ifloor(self.theta_range[1] / self.delta_theta)) - self.c_offset + 1

    @property
    def rows(self) -> int:
        return int(_ifloor(self.phi_range[1] / self.delta_phi)) - self.r_offset + 1


@dataclass(frozen=True)
class FrontViewMap:
    """Dense (rows, cols, 3) channel grid with a boolean occupancy mask."""

    data: np.ndarray
    occupancy: np.ndarray

    CHANNELS = ("height", "distance", "intensity")

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        occ = np.asarray(self.occupancy, dtype=bool)
        if data.ndim != 3 or data.shape[2] != 3:
            raise ValueError(f"data must be (rows, cols, 3), got {data.shape}")
        if occ.shape != data.shape[:2]:
            raise ValueError("occupancy shape must match data rows/cols")
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "occupancy", occ)

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]

    @property
    def occupied_count(self) -> int:
        return int(np.count_nonzero(self.occupancy))


def project_point(p, cfg: ProjectionConfig):
    """Map one point to (r, c) indices, or None when outside the FOV.

    Raises ValueError at the exact xy-origin, where azimuth is undefined.
    """
    x, y, z = (float(v) for v in p[:3])
    if x == 0.0 and y == 0.0:
        raise ValueError("azimuth undefined at the xy-origin")
    theta = math.atan2(y, x)
    phi = math.atan2(z, math.hypot(x, y))
    if not (cfg.theta_range[0] <= theta <= cfg.theta_range[1]):
        return None
    if not (cfg.phi_range[0] <= phi <= cfg.phi_range[1]):
        return None
    c = int(_ifloor(theta / cfg.delta_theta)) - cfg.c_offset
    r = int(_ifloor(phi / cfg.delta_phi)) - cfg.r_offset
    return (r, c)


def project_points(xyz: np.ndarray, cfg: ProjectionConfig):
    """Vectorized projection: (r, c, in_range) for an (n, >=3) array.

    Points at the exact xy-origin are marked out of range rather than raising,
    so bulk callers need no per-point error handling. Returned r/c are the raw
    floor-formula indices; only entries with in_range True are meaningful.
    """
    pts = np.asarray(xyz, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] < 3:
        raise ValueError(f"expected (n, >=3) array, got {pts.shape}")
    x, y, z = pts[:, 0], pts[:, 1], pts[:, 2]
    rho_xy = np.hypot(x, y)
    defined = rho_xy > 0.0
    theta = np.arctan2(y, x)
    phi = np.arctan2(z, rho_xy)
    in_range = (
        defined
        & (theta >= cfg.theta_range[0])
        & (theta <= cfg.theta_range[1])
        & (phi >= cfg.phi_range[0])
        & (phi <= cfg.phi_range[1])
    )
    c = _ifloor(theta / cfg.delta_theta) - cfg.c_offset
    r = _ifloor(phi / cfg.delta_phi) - cfg.r_offset
    return r, c, in_range


def build_map(cloud: PointCloud, cfg: ProjectionConfig) -> FrontViewMap:
    """Rasterize a cloud; collisions keep the nearest point (ties: lowest index)."""
    data = np.zeros((cfg.rows, cfg.cols, 3), dtype=np.float64)
    occ = np.zeros((cfg.rows, cfg.cols), dtype=bool)
    if len(cloud) == 0:
        return FrontViewMap(data, occ)
    r, c, in_range = project_points(cloud.xyz, cfg)
    idx = np.flatnonzero(in_range)
    if idx.size == 0:
        return FrontViewMap(data, occ)
    r, c = r[idx], c[idx]
    dist = np.linalg.norm(cloud.xyz[idx], axis=1)
    # Write farthest first so the final (last) write per cell is the nearest
    # point; ties ordered so the lowest original index lands last.
    order = np.lexsort((-idx, -dist))
    rr, cc, sel = r[order], c[order], idx[order]
    data[rr, cc, 0] = cloud.data[sel, 2]
    data[rr, cc, 1] = dist[order]
    data[rr, cc, 2] = cloud.data[sel, 3]
    occ[rr, cc] = True
    return FrontViewMap(data, occ)


def rect_tuple_from_rect2d(rect: Rect2D) -> tuple:
    """Axis-aligned (r0, c0, r1, c1) bounds of a zero-angle Rect2D."""
    if abs(rect.angle) > 1e-12:
        raise ValueError("map-space rectangles must be axis-aligned")
    cu, cv = rect.center
    hu, hv = 0.5 * rect.size[0], 0.5 * rect.size[1]
    return (cu - hu, cv - hv, cu + hu, cv + hv)


def crop_patch(fvmap: FrontViewMap, rect, out_size) -> FrontViewMap:
    """Nearest-neighbor resample of a map region to a fixed-size patch.

    ``rect`` is (r0, c0, r1, c1) in map coordinates (half-open, floats) or an
    axis-aligned Rect2D; ``out_size`` is S or (S_r, S_c). Source cells outside
    the map bounds contribute the unoccupied sentinel. Raises ValueError on a
    zero-area rect or one that misses the map entirely.
    """
    if isinstance(rect, Rect2D):
        rect = rect_tuple_from_rect2d(rect)
    r0, c0, r1, c1 = (float(v) for v in rect)
    if not (r1 > r0 and c1 > c0):
        raise ValueError(f"rect must have positive area, got {rect}")
    if r1 <= 0 or c1 <= 0 or r0 >= fvmap.rows or c0 >= fvmap.cols:
        raise ValueError(f"rect {rect} does not intersect the map bounds")
    if np.isscalar(out_size):
        s_r = s_c = int(out_size)
    else:
        s_r, s_c = (int(v) for v in out_size)
    if s_r <= 0 or s_c <= 0:
        raise ValueError("out_size must be positive")
    src_r = np.floor(r0 + (np.arange(s_r) + 0.5) * (r1 - r0) / s_r).astype(np.int64)
    src_c = np.floor(c0 + (np.arange(s_c) + 0.5) * (c1 - c0) / s_c).astype(np.int64)
    valid_r = (src_r >= 0) & (src_r < fvmap.rows)
    valid_c = (src_c >= 0) & (src_c < fvmap.cols)
    rr = np.clip(src_r, 0, fvmap.rows - 1)
    cc = np.clip(src_c, 0, fvmap.cols - 1)
    data = fvmap.data[rr[:, None], cc[None, :], :].copy()
    occ = fvmap.occupancy[rr[:, None], cc[None, :]].copy()
    inside = valid_r[:, None] & valid_c[None, :]
    data[~inside] = 0.0
    occ[~inside] = False
    return FrontViewMap(data, occ)


def box_to_map_rect(box: Box3D, cfg: ProjectionConfig):
    """(r0, c0, r1, c1) bounding rect of the projected box corners, or None.

    Corners use the raw floor-formula indices (no FOV clipping); the rect is
    then clipped to the map bounds. Returns None when the box center's azimuth
    or elevation falls outside the configured ranges, or when the clipped rect
    is empty, i.e. the box does not usefully project onto the map.
    """
    cx, cy, cz = box.center
    if cx == 0.0 and cy == 0.0:
        return None
    theta_c = math.atan2(cy, cx)
    phi_c = math.atan2(cz, math.hypot(cx, cy))
    if not (cfg.theta_range[0] <= theta_c <= cfg.theta_range[1]):
        return None
    if not (cfg.phi_range[0] <= phi_c <= cfg.phi_range[1]):
        return None
    corners = box.corners()
    rho = np.hypot(corners[:, 0], corners[:, 1])
    if np.any(rho <= 0.0):
        return None
    theta = np.arctan2(corners[:, 1], corners[:, 0])
    phi = np.arctan2(corners[:, 2], rho)
    c_idx = _ifloor(theta / cfg.delta_theta) - cfg.c_offset
    r_idx = _ifloor(phi / cfg.delta_phi) - cfg.r_offset
    r0 = max(float(r_idx.min()), 0.0)
    c0 = max(float(c_idx.min()), 0.0)
    r1 = min(float(r_idx.max()) + 1.0, float(cfg.rows))
    c1 = min(float(c_idx.max()) + 1.0, float(cfg.cols))
    if r1 <= r0 or c1 <= c0:
        return None
    return (r0, c0, r1, c1)


def render_channel_pgm(fvmap: FrontViewMap, channel: str) -> bytes:
    """Render one channel as a binary 8-bit PGM (row 0 at the bottom).

    Occupied cells are scaled to 1..255 over the channel's occupied value
    range; unoccupied cells render as 0.
    """
    if channel not in FrontViewMap.CHANNELS:
        raise ValueError(f"unknown channel {channel!r}")
    ch = FrontViewMap.CHANNELS.index(channel)
    values = fvmap.data[:, :, ch]
    occ = fvmap.occupancy
    img = np.zeros(values.shape, dtype=np.uint8)
    if occ.any():
        lo = values[occ].min()
        hi = values[occ].max()
        span = hi - lo
        if span <= 0.0:
            scaled = np.full(values.shape, 255.0)
        else:
            scaled = 1.0 + 254.0 * (values - lo) / span
        img[occ] = np.clip(scaled[occ], 1, 255).astype(np.uint8)
    img = img[::-1]  # row index grows with elevation; render sky-up
    header = f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode("ascii")
    return header + img.tobytes()
