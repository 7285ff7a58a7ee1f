"""Point-cloud ingestion, synthetic labeled scenes, and detection persistence.

Scans are KITTI-style Velodyne ``.bin`` files: consecutive little-endian
float32 records (x, y, z, intensity), 16 bytes per point. Detections persist
as a line-oriented text format with a one-line schema header. The synthetic
generator builds desk-scale labeled scenes (box-shaped point clusters on a
sparse ground plane) so the pipeline can be tested without real data.
"""

from __future__ import annotations

import math
import os
import tempfile
from dataclasses import dataclass

import numpy as np

from .geometry import Box3D, Proposal

DETECTIONS_HEADER = "votebox-detections 1"
DEFAULT_CLASS_NAMES = ("car",)

__all__ = [
    "MalformedFileError",
    "PointCloud",
    "LabeledBox",
    "SceneSpec",
    "SyntheticScene",
    "read_velodyne_bin",
    "write_bytes_atomic",
    "write_text_atomic",
    "write_velodyne_bin",
    "write_detections",
    "read_detections",
    "sample_box_points",
    "generate_scene",
]


class MalformedFileError(ValueError):
    """A file exists but does not decode under the expected layout."""


@dataclass(frozen=True)
class PointCloud:
    """Points as an (n, 4) float64 array of x, y, z, intensity."""

    data: np.ndarray
    frame_id: str = ""

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.size == 0:
            arr = arr.reshape(0, 4)
        if arr.ndim != 2 or arr.shape[1] != 4:
            raise ValueError(f"point cloud must be (n, 4), got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("point cloud contains non-finite values")
        if arr.shape[0] and (arr[:, 3].min() < 0.0 or arr[:, 3].max() > 1.0):
            raise ValueError("intensity must lie in [0, 1]")
        object.__setattr__(self, "data", arr)
        object.__setattr__(self, "frame_id", str(self.frame_id))

    def __len__(self) -> int:
        return self.data.shape[0]

    @property
    def xyz(self) -> np.ndarray:
        return self.data[:, :3]

    @property
    def intensity(self) -> np.ndarray:
        return self.data[:, 3]


@dataclass(frozen=True)
class LabeledBox:
    """A truth box with the image-space annotations evaluation bins on.

    ``height_px``, ``occlusion`` and ``truncation`` may all be None, in which
    case the box is eligible at every difficulty ("all"-style truth).
    """

    box: Box3D
    label: str = "car"
    height_px: float | None = None
    occlusion: int | None = None
    truncation: float | None = None

    @property
    def has_annotations(self) -> bool:
        return (
            self.height_px is not None
            and self.occlusion is not None
            and self.truncation is not None
        )


def read_velodyne_bin(path, frame_id: str | None = None) -> PointCloud:
    """Decode a Velodyne scan: float32 LE records of x, y, z, intensity."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) % 16 != 0:
        raise MalformedFileError(
            f"{path}: length {len(raw)} is not a multiple of 16 bytes"
        )
    pts = np.frombuffer(raw, dtype="<f4").reshape(-1, 4).astype(np.float64)
    if frame_id is None:
        frame_id = os.path.splitext(os.path.basename(str(path)))[0]
    try:
        return PointCloud(pts, frame_id=frame_id)
    except ValueError as exc:
        raise MalformedFileError(f"{path}: {exc}") from exc


def write_velodyne_bin(path, cloud: PointCloud) -> None:
    """Write a scan in the same float32 LE record layout read_velodyne_bin expects."""
    payload = np.ascontiguousarray(cloud.data, dtype="<f4").tobytes()
    write_bytes_atomic(path, payload)


def write_bytes_atomic(path, payload: bytes) -> None:
    # Write-then-rename so a failed run never leaves a truncated file.
    directory = os.path.dirname(os.path.abspath(str(path)))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".votebox-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, str(path))
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_text_atomic(path, text: str) -> None:
    write_bytes_atomic(path, text.encode("utf-8"))


def write_detections(dets: list, path) -> None:
    """Persist proposals one per line; floats via repr for exact round-trips."""
    lines = [DETECTIONS_HEADER]
    for det in dets:
        name = DEFAULT_CLASS_NAMES[
            min(int(np.argmax(det.class_probs)), len(DEFAULT_CLASS_NAMES) - 1)
        ]
        fields = [
            name,
            repr(det.score),
            *(repr(v) for v in det.box.center),
            *(repr(v) for v in det.box.scale),
            repr(det.box.yaw),
            *(repr(p) for p in det.class_probs),
        ]
        lines.append(" ".join(fields))
    write_text_atomic(path, "\n".join(lines) + "\n")


def read_detections(path) -> list:
    """Read proposals written by write_detections; exact field round-trip."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = [line.rstrip("\n") for line in fh]
    lines = [line for line in lines if line.strip()]
    if not lines or lines[0] != DETECTIONS_HEADER:
        got = lines[0] if lines else "<empty>"
        raise MalformedFileError(f"{path}: bad or missing header {got!r}")
    out = []
    for lineno, line in enumerate(lines[1:], start=2):
        tokens = line.split()
        if len(tokens) < 10:
            raise MalformedFileError(f"{path}:{lineno}: expected >= 10 fields")
        try:
            values = [float(t) for t in tokens[1:]]
        except ValueError as exc:
            raise MalformedFileError(f"{path}:{lineno}: {exc}") from exc
        score = values[0]
        center = tuple(values[1:4])
        scale = tuple(values[4:7])
        yaw = values[7]
        probs = tuple(values[8:])
        try:
            out.append(
                Proposal(Box3D(center, scale, yaw), score, class_probs=probs)
            )
        except ValueError as exc:
            raise MalformedFileError(f"{path}:{lineno}: {exc}") from exc
    return out


# Synthetic scenes ------------------------------------------------------------


@dataclass(frozen=True)
class SceneSpec:
    """Parameters for the deterministic synthetic scene generator.

    Objects are car-sized boxes (base footprint jittered +-scale_jitter) whose
    points are volume-sampled with noise truncated at 3 sigma, so every object
    point stays inside its truth box by construction. The default placement
    region sits inside both the anchor extent and the forward field of view.
    """

    rng_seed: int = 0
    n_objects: int = 3
    ground_extent: tuple = ((4.0, 32.0), (0.0, 22.0))
    range_window: tuple = (8.0, 28.0)
    base_scale: tuple = (3.9, 1.6, 1.56)
    scale_jitter: float = 0.1
    points_per_object: int = 2500
    noise_sigma: float = 0.02
    n_ground_points: int = 1500
    ground_z: float = -1.78
    ground_sigma: float = 0.01
    min_separation: float = 6.0
    min_points_per_object: int = 50
    label: str = "car"
    boxes: tuple | None = None
    fov_theta: tuple = (-math.pi / 4.0, math.pi / 4.0)
    fov_phi: tuple = (math.radians(-24.9), math.radians(2.0))
    focal_px: float = 700.0

    def __post_init__(self):
        if self.n_objects < 0:
            raise ValueError("n_objects must be >= 0")
        if self.points_per_object <= 0:
            raise ValueError("points_per_object must be positive")
        (x_lo, x_hi), (y_lo, y_hi) = self.ground_extent
        if not (-35.0 <= x_lo < x_hi <= 35.0 and 0.0 <= y_lo < y_hi <= 70.0):
            raise ValueError("ground_extent must lie within [-35,35]x[0,70]")


@dataclass(frozen=True)
class SyntheticScene:
    cloud: PointCloud
    truth_boxes: tuple  # LabeledBox entries

    @property
    def boxes(self) -> list:
        return [t.box for t in self.truth_boxes]


def sample_box_points(
    box: Box3D, n: int, noise_sigma: float, rng: np.random.Generator
) -> np.ndarray:
    """Volume-sample n points strictly inside the box (noise clipped at 3 sigma)."""
    half = 0.5 * np.asarray(box.scale)
    margin = np.minimum(3.0 * noise_sigma, 0.5 * half)
    local = rng.uniform(-(half - margin), half - margin, size=(int(n), 3))
    if noise_sigma > 0.0:
        noise = rng.normal(0.0, noise_sigma, size=local.shape)
        local += np.clip(noise, -margin, margin)
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    world = np.empty_like(local)
    world[:, 0] = c * local[:, 0] - s * local[:, 1] + box.center[0]
    world[:, 1] = s * local[:, 0] + c * local[:, 1] + box.center[1]
    world[:, 2] = local[:, 2] + box.center[2]
    return world


def _corner_angles(box: Box3D) -> tuple:
    corners = box.corners()
    theta = np.arctan2(corners[:, 1], corners[:, 0])
    phi = np.arctan2(corners[:, 2], np.hypot(corners[:, 0], corners[:, 1]))
    return theta, phi


def _annotate(box: Box3D, others: list, spec: SceneSpec) -> LabeledBox:
    rng_m = math.hypot(box.center[0], box.center[1])
    height_px = spec.focal_px * box.scale[2] / max(rng_m, 1e-9)
    theta, phi = _corner_angles(box)
    t_lo, t_hi = spec.fov_theta
    p_lo, p_hi = spec.fov_phi
    outside = (theta < t_lo) | (theta > t_hi) | (phi < p_lo) | (phi > p_hi)
    truncation = float(np.count_nonzero(outside)) / theta.size
    # Occlusion from azimuth-interval overlap with strictly nearer objects.
    span = (float(theta.min()), float(theta.max()))
    width = max(span[1] - span[0], 1e-9)
    covered = 0.0
    for other in others:
        if math.hypot(other.center[0], other.center[1]) >= rng_m:
            continue
        o_theta, _ = _corner_angles(other)
        lo = max(span[0], float(o_theta.min()))
        hi = min(span[1], float(o_theta.max()))
        if hi > lo:
            covered += (hi - lo) / width
    covered = min(covered, 1.0)
    occlusion = 0 if covered < 0.1 else (1 if covered < 0.5 else 2)
    return LabeledBox(
        box=box,
        label=spec.label,
        height_px=height_px,
        occlusion=occlusion,
        truncation=truncation,
    )


def _place_boxes(spec: SceneSpec, rng: np.random.Generator) -> list:
    (x_lo, x_hi), (y_lo, y_hi) = spec.ground_extent
    r_lo, r_hi = spec.range_window
    margin = 0.02
    boxes = []
    for _ in range(spec.n_objects):
        placed = False
        for _attempt in range(500):
            x = rng.uniform(x_lo, x_hi)
            y = rng.uniform(y_lo, y_hi)
            yaw = rng.uniform(-math.pi, math.pi)
            scale = tuple(
                s * (1.0 + rng.uniform(-spec.scale_jitter, spec.scale_jitter))
                for s in spec.base_scale
            )
            rng_m = math.hypot(x, y)
            if not (r_lo <= rng_m <= r_hi):
                continue
            if any(
                math.hypot(x - b.center[0], y - b.center[1]) < spec.min_separation
                for b in boxes
            ):
                continue
            box = Box3D((x, y, spec.ground_z + 0.5 * scale[2]), scale, yaw)
            theta, phi = _corner_angles(box)
            if theta.min() < spec.fov_theta[0] + margin:
                continue
            if theta.max() >= spec.fov_theta[1] - margin:
                continue
            if phi.min() < spec.fov_phi[0] + margin or phi.max() >= spec.fov_phi[1]:
                continue
            boxes.append(box)
            placed = True
            break
        if not placed:
            raise ValueError(
                "could not place all objects; relax separation or extent"
            )
    return boxes


def generate_scene(spec: SceneSpec) -> SyntheticScene:
    """Deterministically build a labeled scene from its spec."""
    rng = np.random.default_rng(spec.rng_seed)
    boxes = list(spec.boxes) if spec.boxes is not None else _place_boxes(spec, rng)
    chunks = []
    for box in boxes:
        pts = sample_box_points(box, spec.points_per_object, spec.noise_sigma, rng)
        inten = rng.uniform(0.2, 0.9, size=(pts.shape[0], 1))
        chunks.append(np.hstack([pts, inten]))
    if spec.n_ground_points > 0:
        (x_lo, x_hi), (y_lo, y_hi) = spec.ground_extent
        gx = rng.uniform(x_lo, x_hi, size=spec.n_ground_points)
        gy = rng.uniform(y_lo, y_hi, size=spec.n_ground_points)
        gz = spec.ground_z + np.clip(
            rng.normal(0.0, spec.ground_sigma, size=spec.n_ground_points),
            -3.0 * spec.ground_sigma,
            3.0 * spec.ground_sigma,
        )
        gi = rng.uniform(0.05, 0.3, size=spec.n_ground_points)
        chunks.append(np.column_stack([gx, gy, gz, gi]))
    if chunks:
        data = np.vstack(chunks)
    else:
        data = np.zeros((0, 4), dtype=np.float64)
    cloud = PointCloud(data, frame_id=f"scene{spec.rng_seed:05d}")
    labeled = tuple(
        _annotate(box, [b for b in boxes if b is not box], spec) for box in boxes
    )
    return SyntheticScene(cloud=cloud, truth_boxes=labeled)
