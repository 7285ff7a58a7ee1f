"""Voting-based 3D proposal pipeline over a preset ground-plane anchor grid.

Stages: build a dense anchor grid, keep anchors whose front-view patch is
dense enough, verify survivors bound whole objects via a (1 + epsilon)
expansion shell, map survivors to a pseudo point cloud, sample seed points,
let seeds vote for object centers, cluster the votes, refine each cluster
into an oriented box, and non-max suppress. A compatibility mode skips the
voting stages and refines the survivors directly, which floods the output
with proposals wherever the view is dense; the voting path is what prunes
anchors that merely sit behind an object silhouette.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .cloudio import PointCloud
from .frontview import (
    FrontViewMap,
    ProjectionConfig,
    _ifloor,
    box_to_map_rect,
    crop_patch,
)
from .geometry import Box3D, Proposal, Rect2D, nms

__all__ = [
    "UvpmConfig",
    "AnchorGrid",
    "Seed",
    "Vote",
    "VoteCluster",
    "build_anchor_grid",
    "density",
    "filter_anchors",
    "expansion_check",
    "make_pseudo_cloud",
    "GeometricSeedBackbone",
    "LearnedSeedBackbone",
    "generate_seeds",
    "vote",
    "cluster_votes",
    "refine",
    "propose",
    "project_to_2d",
]

# Absorbs float noise in extent/spacing ratios (e.g. 70/0.2 -> 349.99...94).
_COUNT_EPS = 1e-9

# Yaw-scan candidate sets shed their lowest z-slice: ground returns hug the
# cylinder floor, surround the object isotropically, and would otherwise make
# the bounding-rectangle area nearly yaw-independent. Flat sets (z-span below
# the guard) are left alone so planar inputs keep all their points.
GROUND_TRIM = 0.15
TRIM_MIN_SPAN = 0.5


@dataclass(frozen=True)
class UvpmConfig:
    """Pipeline thresholds and sizes; defaults match the documented values."""

    spacing: float = 0.2
    extent: tuple = ((-35.0, 35.0), (0.0, 70.0))
    prior_scale: tuple = (3.9, 1.6, 1.56)
    template_z: float = -1.0
    patch_size: int = 16
    delta: float = 0.3
    epsilon: float = 0.1
    shell_tolerance: int = 5
    n_seeds: int = 256
    k_clusters: int = 32
    vote_radius: float = 1.0
    min_vote_points: int = 5
    cluster_radius: float = 2.0
    yaw_steps: int = 32
    nms_threshold: float | None = 0.5
    nms_mode: str = "bev"
    voting: bool = True
    vote_backbone: str = "geometric"
    backbone_seed: int = 0

    def __post_init__(self):
        if self.spacing <= 0.0:
            raise ValueError("spacing must be positive")
        if not 0.0 <= self.delta <= 1.0:
            raise ValueError("density threshold must lie in [0, 1]")
        if self.epsilon <= 0.0:
            raise ValueError("expansion factor must be positive")
        if self.n_seeds < 1 or self.k_clusters < 1:
            raise ValueError("n_seeds and k_clusters must be >= 1")
        if self.yaw_steps < 1:
            raise ValueError("yaw_steps must be >= 1")
        if self.vote_backbone not in ("geometric", "learned"):
            raise ValueError(f"unknown vote backbone {self.vote_backbone!r}")
        if self.nms_mode not in ("bev", "3d", "2d"):
            raise ValueError(f"unknown nms mode {self.nms_mode!r}")
        (x_lo, x_hi), (y_lo, y_hi) = self.extent
        if x_lo >= x_hi or y_lo >= y_hi:
            raise ValueError("extent must be non-degenerate")


@dataclass(frozen=True)
class AnchorGrid:
    """Anchor centers on a regular ground-plane grid with a shared template."""

    spacing: float
    extent: tuple
    centers: np.ndarray  # (n, 2) x, y
    template_scale: tuple
    template_z: float

    def __len__(self) -> int:
        return self.centers.shape[0]

    def center3(self, index: int) -> tuple:
        x, y = self.centers[index]
        return (float(x), float(y), self.template_z)

    def anchor_box(self, index: int, scale_factor: float = 1.0) -> Box3D:
        scale = tuple(s * scale_factor for s in self.template_scale)
        return Box3D(self.center3(index), scale, 0.0)


@dataclass(frozen=True)
class Seed:
    """A sampled pseudo point with its feature vector and optional vote output."""

    xyz: tuple
    feature: np.ndarray
    vote_offset: tuple | None = None
    vote_logit: float | None = None


@dataclass(frozen=True)
class Vote:
    target_xyz: tuple
    weight: float


@dataclass(frozen=True)
class VoteCluster:
    center: tuple
    member_idx: tuple
    weight: float  # summed member weights


def _axis_count(lo: float, hi: float, spacing: float) -> int:
    return max(1, int(math.floor((hi - lo) / spacing + _COUNT_EPS)))


def build_anchor_grid(cfg: UvpmConfig) -> AnchorGrid:
    """Anchors at (x_min + i s, y_min + j s), half-open upper edges."""
    (x_lo, x_hi), (y_lo, y_hi) = cfg.extent
    nx = _axis_count(x_lo, x_hi, cfg.spacing)
    ny = _axis_count(y_lo, y_hi, cfg.spacing)
    xs = x_lo + np.arange(nx) * cfg.spacing
    ys = y_lo + np.arange(ny) * cfg.spacing
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    centers = np.column_stack([gx.reshape(-1), gy.reshape(-1)])
    return AnchorGrid(
        spacing=cfg.spacing,
        extent=cfg.extent,
        centers=centers,
        template_scale=cfg.prior_scale,
        template_z=cfg.template_z,
    )


def density(anchor_box: Box3D, fvmap: FrontViewMap, patch_size: int,
            projection: ProjectionConfig | None = None) -> float:
    """Occupied fraction of the anchor's fixed-size front-view patch.

    The box corners project to a (row, col) bounding rectangle which is
    resampled to patch_size x patch_size; the score is the occupied-cell
    fraction of that patch. Anchors whose center is outside the angular
    ranges, or whose projected rect misses the map, score 0.
    """
    projection = ProjectionConfig() if projection is None else projection
    rect = box_to_map_rect(anchor_box, projection)
    if rect is None:
        return 0.0
    patch = crop_patch(fvmap, rect, patch_size)
    return float(np.count_nonzero(patch.occupancy)) / patch.occupancy.size


def _batch_densities(
    grid: AnchorGrid,
    fvmap: FrontViewMap,
    cfg: UvpmConfig,
    projection: ProjectionConfig,
) -> tuple:
    """(densities, projectable) over all anchors, vectorized over the grid.

    Equivalent to calling ``density`` per anchor: anchors are filtered by the
    angular range of their center, then each survivor's corner rect is
    resampled and scored. The corner projections are computed in one batch.
    """
    n = len(grid)
    densities = np.zeros(n, dtype=np.float64)
    projectable = np.zeros(n, dtype=bool)
    if n == 0:
        return densities, projectable
    centers = np.column_stack(
        [grid.centers, np.full(n, grid.template_z, dtype=np.float64)]
    )
    theta_c = np.arctan2(centers[:, 1], centers[:, 0])
    rho_c = np.hypot(centers[:, 0], centers[:, 1])
    phi_c = np.arctan2(centers[:, 2], rho_c)
    in_fov = (
        (rho_c > 0.0)
        & (theta_c >= projection.theta_range[0])
        & (theta_c <= projection.theta_range[1])
        & (phi_c >= projection.phi_range[0])
        & (phi_c <= projection.phi_range[1])
    )
    candidates = np.flatnonzero(in_fov)
    if candidates.size == 0:
        return densities, projectable
    # All 8 template corners per candidate anchor in one array.
    hx, hy = 0.5 * grid.template_scale[0], 0.5 * grid.template_scale[1]
    corner_xy = np.array(
        [(hx, hy), (-hx, hy), (-hx, -hy), (hx, -hy)], dtype=np.float64
    )
    z_lo = grid.template_z - 0.5 * grid.template_scale[2]
    z_hi = grid.template_z + 0.5 * grid.template_scale[2]
    cx = centers[candidates, 0][:, None] + corner_xy[:, 0][None, :]
    cy = centers[candidates, 1][:, None] + corner_xy[:, 1][None, :]
    corner_x = np.repeat(cx, 2, axis=1)
    corner_y = np.repeat(cy, 2, axis=1)
    corner_z = np.tile(np.array([z_lo, z_hi]), (candidates.size, 4))
    rho = np.hypot(corner_x, corner_y)
    ok = np.all(rho > 0.0, axis=1)
    theta = np.arctan2(corner_y, corner_x)
    phi = np.arctan2(corner_z, rho)
    c_idx = _ifloor(theta / projection.delta_theta) - projection.c_offset
    r_idx = _ifloor(phi / projection.delta_phi) - projection.r_offset
    r0 = np.maximum(r_idx.min(axis=1).astype(np.float64), 0.0)
    c0 = np.maximum(c_idx.min(axis=1).astype(np.float64), 0.0)
    r1 = np.minimum(r_idx.max(axis=1) + 1.0, float(projection.rows))
    c1 = np.minimum(c_idx.max(axis=1) + 1.0, float(projection.cols))
    ok &= (r1 > r0) & (c1 > c0)
    s = cfg.patch_size
    occ = fvmap.occupancy
    offsets = (np.arange(s) + 0.5) / s
    for pos, anchor in enumerate(candidates):
        if not ok[pos]:
            continue
        rr = np.floor(r0[pos] + offsets * (r1[pos] - r0[pos])).astype(np.int64)
        cc = np.floor(c0[pos] + offsets * (c1[pos] - c0[pos])).astype(np.int64)
        rr = np.clip(rr, 0, fvmap.rows - 1)
        cc = np.clip(cc, 0, fvmap.cols - 1)
        patch = occ[rr[:, None], cc[None, :]]
        projectable[anchor] = True
        densities[anchor] = float(np.count_nonzero(patch)) / patch.size
    return densities, projectable


def filter_anchors(
    grid: AnchorGrid,
    fvmap: FrontViewMap,
    cfg: UvpmConfig,
    projection: ProjectionConfig | None = None,
) -> tuple:
    """(surviving anchor indices, their densities), original order preserved.

    Survivors are the anchors with an in-range projection and density >= the
    threshold; requiring projectability keeps a zero threshold from passing
    anchors that never touch the map.
    """
    projection = ProjectionConfig() if projection is None else projection
    densities, projectable = _batch_densities(grid, fvmap, cfg, projection)
    keep = projectable & (densities >= cfg.delta)
    idx = np.flatnonzero(keep)
    return idx, densities[idx]


def expansion_check(
    anchor_box: Box3D,
    cloud: PointCloud,
    cfg: UvpmConfig,
    _precounted: tuple | None = None,
) -> bool:
    """True iff the (1 + epsilon)-expanded box adds at most tau extra points.

    A surviving anchor should bound a whole object: scaling it about its
    center must not pull in more than ``shell_tolerance`` additional points,
    otherwise it straddles a fragment of something larger.
    """
    if _precounted is not None:
        inner, outer = _precounted
    else:
        pts = cloud.xyz
        inner = int(np.count_nonzero(anchor_box.contains_points(pts)))
        expanded = Box3D(
            anchor_box.center,
            tuple(s * (1.0 + cfg.epsilon) for s in anchor_box.scale),
            anchor_box.yaw,
        )
        outer = int(np.count_nonzero(expanded.contains_points(pts)))
    return (outer - inner) <= cfg.shell_tolerance


def _expansion_survivors(
    grid: AnchorGrid, indices: np.ndarray, cloud: PointCloud, cfg: UvpmConfig
) -> np.ndarray:
    """Vectorized expansion check over many anchors (template yaw 0)."""
    if indices.size == 0 or len(cloud) == 0:
        return indices
    pts = cloud.xyz
    tree = cKDTree(pts[:, :2])
    half_diag = 0.5 * math.hypot(
        grid.template_scale[0] * (1.0 + cfg.epsilon),
        grid.template_scale[1] * (1.0 + cfg.epsilon),
    )
    near = tree.query_ball_point(grid.centers[indices], r=half_diag + 1e-9)
    keep = np.zeros(indices.size, dtype=bool)
    hx, hy, hz = (0.5 * s for s in grid.template_scale)
    fx, fy, fz = (
        0.5 * s * (1.0 + cfg.epsilon) for s in grid.template_scale
    )
    for pos, anchor in enumerate(indices):
        local = near[pos]
        if not local:
            keep[pos] = True  # empty shell trivially within tolerance
            continue
        sub = pts[local]
        dx = np.abs(sub[:, 0] - grid.centers[anchor, 0])
        dy = np.abs(sub[:, 1] - grid.centers[anchor, 1])
        dz = np.abs(sub[:, 2] - grid.template_z)
        inner = np.count_nonzero((dx <= hx) & (dy <= hy) & (dz <= hz))
        outer = np.count_nonzero((dx <= fx) & (dy <= fy) & (dz <= fz))
        keep[pos] = (outer - inner) <= cfg.shell_tolerance
    return indices[keep]


def make_pseudo_cloud(
    grid: AnchorGrid, indices: np.ndarray, densities: np.ndarray
) -> PointCloud:
    """One pseudo point per surviving anchor; intensity carries its density."""
    indices = np.asarray(indices, dtype=np.int64)
    if indices.size == 0:
        return PointCloud(np.zeros((0, 4)), frame_id="pseudo")
    data = np.column_stack(
        [
            grid.centers[indices],
            np.full(indices.size, grid.template_z),
            np.asarray(densities, dtype=np.float64),
        ]
    )
    return PointCloud(data, frame_id="pseudo")


class GeometricSeedBackbone:
    """Training-free seed features: local statistics of the real cloud.

    Per pseudo point: [neighbor count, centroid offset xyz, covariance
    eigenvalues] over real points within the vote radius (7 features).
    """

    def __init__(self, cloud: PointCloud, cfg: UvpmConfig):
        self.cloud = cloud
        self.cfg = cfg
        self._tree = cKDTree(cloud.xyz) if len(cloud) else None

    def __call__(self, pseudo: PointCloud) -> dict:
        n = len(pseudo)
        feats = np.zeros((n, 7), dtype=np.float64)
        if self._tree is None or n == 0:
            return {"features": feats}
        neighbor_lists = self._tree.query_ball_point(
            pseudo.xyz, r=self.cfg.vote_radius
        )
        for i, neighbors in enumerate(neighbor_lists):
            if not neighbors:
                continue
            local = self.cloud.xyz[neighbors]
            feats[i, 0] = len(neighbors)
            offset = local.mean(axis=0) - pseudo.xyz[i]
            feats[i, 1:4] = offset
            if len(neighbors) >= 2:
                centered = local - local.mean(axis=0)
                cov = centered.T @ centered / len(neighbors)
                feats[i, 4:7] = np.linalg.eigvalsh(cov)
        return {"features": feats}


class LearnedSeedBackbone:
    """Forward-only network features plus per-point vote offsets and logits.

    The pseudo cloud feeds the SA/FP stack as (n, 3 + 58) rows: extra channel
    0 is the anchor density and the remaining 57 are zero-filled, matching the
    stack's 58-feature input width.
    """

    N_FEATURE_CHANNELS = 58

    def __init__(self, seed: int = 0):
        from .micronet.pointnet import VoteBackbone

        self.net = VoteBackbone(in_channels=self.N_FEATURE_CHANNELS, seed=seed)

    def __call__(self, pseudo: PointCloud) -> dict:
        n = len(pseudo)
        if n == 0:
            return {"features": np.zeros((0, 256))}
        points = np.zeros((n, 3 + self.N_FEATURE_CHANNELS), dtype=np.float64)
        points[:, :3] = pseudo.xyz
        points[:, 3] = pseudo.intensity
        feats = self.net.features(points)
        votes = self.net.vote_head(feats)
        out = votes.data
        return {
            "features": feats.data,
            "vote_offsets": out[:, :3],
            "vote_logits": out[:, 3],
        }


def generate_seeds(pseudo: PointCloud, backbone, m: int) -> list:
    """Farthest-point-sample m seeds (or all) with backbone features."""
    if len(pseudo) == 0:
        raise ValueError("cannot generate seeds from an empty pseudo cloud")
    if m < 1:
        raise ValueError("seed count must be >= 1")
    from .micronet.pointnet import farthest_point_sample

    output = backbone(pseudo)
    feats = np.asarray(output["features"], dtype=np.float64)
    offsets = output.get("vote_offsets")
    logits = output.get("vote_logits")
    picks = farthest_point_sample(pseudo.xyz, min(m, len(pseudo)), start=0)
    seeds = []
    for i in picks:
        seeds.append(
            Seed(
                xyz=tuple(float(v) for v in pseudo.xyz[i]),
                feature=feats[i],
                vote_offset=None if offsets is None else tuple(offsets[i]),
                vote_logit=None if logits is None else float(logits[i]),
            )
        )
    return seeds


def vote(seeds: list, cloud: PointCloud, cfg: UvpmConfig) -> list:
    """One vote per non-abstaining seed.

    Geometric mode: a seed votes for the centroid of the real points within
    the vote radius, weighted by neighbor count (normalized so the strongest
    vote has weight 1); seeds with fewer than ``min_vote_points`` neighbors
    abstain. Learned mode: the seed's network offset and sigmoid logit.
    """
    if not seeds:
        return []
    if cfg.vote_backbone == "learned" and seeds[0].vote_offset is not None:
        votes = []
        for seed in seeds:
            target = tuple(
                s + o for s, o in zip(seed.xyz, seed.vote_offset)
            )
            weight = 1.0 / (1.0 + math.exp(-seed.vote_logit))
            votes.append(Vote(target_xyz=target, weight=weight))
        top = max(v.weight for v in votes)
        if top > 0.0:
            votes = [
                Vote(v.target_xyz, v.weight / top) for v in votes
            ]
        return votes
    if len(cloud) == 0:
        return []
    tree = cKDTree(cloud.xyz)
    counts = []
    targets = []
    for seed in seeds:
        neighbors = tree.query_ball_point(np.asarray(seed.xyz), r=cfg.vote_radius)
        if len(neighbors) < cfg.min_vote_points:
            continue
        local = cloud.xyz[neighbors]
        counts.append(len(neighbors))
        targets.append(local.mean(axis=0))
    if not counts:
        return []
    top = max(counts)
    return [
        Vote(target_xyz=tuple(float(v) for v in t), weight=c / top)
        for t, c in zip(targets, counts)
    ]


def cluster_votes(votes: list, k: int, cfg: UvpmConfig) -> list:
    """FPS-initialized radius-limited clustering of votes.

    K candidate centers come from FPS over vote positions; each vote joins
    the nearest candidate within ``cluster_radius`` (otherwise it is
    dropped); cluster centers are the weight-weighted member means and empty
    clusters vanish.
    """
    if k < 1:
        raise ValueError("cluster count must be >= 1")
    if not votes:
        return []
    from .micronet.pointnet import farthest_point_sample

    positions = np.array([v.target_xyz for v in votes], dtype=np.float64)
    weights = np.array([v.weight for v in votes], dtype=np.float64)
    picks = farthest_point_sample(positions, min(k, len(votes)), start=0)
    candidates = positions[picks]
    dists = np.linalg.norm(
        positions[:, None, :] - candidates[None, :, :], axis=2
    )
    nearest = np.argmin(dists, axis=1)
    in_range = dists[np.arange(len(votes)), nearest] <= cfg.cluster_radius
    clusters = []
    for c in range(len(picks)):
        members = np.flatnonzero((nearest == c) & in_range)
        if members.size == 0:
            continue
        w = weights[members]
        total = float(w.sum())
        center = (positions[members] * w[:, None]).sum(axis=0) / total
        clusters.append(
            VoteCluster(
                center=tuple(float(v) for v in center),
                member_idx=tuple(int(i) for i in members),
                weight=total,
            )
        )
    return clusters


def refine(
    cluster: VoteCluster,
    cloud: PointCloud,
    cfg: UvpmConfig,
    weight_norm: float | None = None,
    source_anchor: int = -1,
) -> Proposal:
    """Fit the prior box at a cluster center by scanning yaw candidates.

    The candidate point set is fixed: points inside the cylinder that
    circumscribes every yaw placement of the prior box at the cluster center
    (BEV circumradius, prior half-height), minus the lowest z-slice when the
    set is tall enough (see GROUND_TRIM). Yaw candidates j * pi / yaw_steps
    for j in [0, yaw_steps) are scored by the area of the candidate set's
    axis-aligned bounding rectangle in the rotated frame; the smallest area
    wins (ties keep the smallest j), then the prior's long axis is aligned
    with the point set's long extent (a quarter-turn leaves the rectangle
    area unchanged, so the scan alone cannot tell the two apart). The center
    re-aligns once to the centroid of the points the final box contains. The
    objectness score is the cluster weight over ``weight_norm`` (the max
    cluster weight).
    """
    prior = cfg.prior_scale
    center = np.asarray(cluster.center, dtype=np.float64)
    best_yaw = 0.0
    pts = cloud.xyz
    if len(cloud):
        rel = pts - center
        circum = 0.5 * math.hypot(prior[0], prior[1])
        cand = rel[
            (np.abs(rel[:, 2]) <= 0.5 * prior[2])
            & (np.hypot(rel[:, 0], rel[:, 1]) <= circum + 1e-9)
        ]
        if len(cand):
            z = cand[:, 2]
            if float(z.max() - z.min()) > TRIM_MIN_SPAN:
                cand = cand[z >= z.min() + GROUND_TRIM]
            best_area = math.inf
            best_ext = (0.0, 0.0)
            for j in range(cfg.yaw_steps):
                yaw = j * math.pi / cfg.yaw_steps
                c, s = math.cos(yaw), math.sin(yaw)
                lx = c * cand[:, 0] + s * cand[:, 1]
                ly = -s * cand[:, 0] + c * cand[:, 1]
                ex = float(lx.max() - lx.min())
                ey = float(ly.max() - ly.min())
                if ex * ey < best_area - 1e-12:
                    best_area = ex * ey
                    best_yaw = yaw
                    best_ext = (ex, ey)
            if (prior[0] - prior[1]) * (best_ext[0] - best_ext[1]) < 0.0:
                best_yaw = (best_yaw + 0.5 * math.pi) % math.pi
            box = Box3D(tuple(center), prior, best_yaw)
            contained = box.contains_points(pts)
            if contained.any():
                center = pts[contained].mean(axis=0)
    norm = cluster.weight if weight_norm is None else float(weight_norm)
    score = min(cluster.weight / norm, 1.0) if norm > 0.0 else 0.0
    return Proposal(
        box=Box3D(tuple(float(v) for v in center), prior, best_yaw),
        score=score,
        class_probs=(1.0,),
        source_anchor=source_anchor,
    )


def project_to_2d(
    proposal: Proposal, projection: ProjectionConfig
) -> Rect2D | None:
    """Axis-aligned map rectangle covering the proposal's projected corners."""
    rect = box_to_map_rect(proposal.box, projection)
    if rect is None:
        return None
    r0, c0, r1, c1 = rect
    return Rect2D(
        center=(0.5 * (r0 + r1), 0.5 * (c0 + c1)),
        size=(r1 - r0, c1 - c0),
        angle=0.0,
    )


def propose(
    cloud: PointCloud,
    fvmap: FrontViewMap,
    cfg: UvpmConfig,
    projection: ProjectionConfig | None = None,
    learned_backbone: LearnedSeedBackbone | None = None,
) -> list:
    """End-to-end proposal generation for one cloud and its front-view map."""
    projection = ProjectionConfig() if projection is None else projection
    grid = build_anchor_grid(cfg)
    indices, densities = filter_anchors(grid, fvmap, cfg, projection)
    survivors = _expansion_survivors(grid, indices, cloud, cfg)
    if survivors.size == 0:
        return []
    dens_by_idx = dict(zip(indices.tolist(), densities.tolist()))
    surv_dens = np.array([dens_by_idx[i] for i in survivors.tolist()])
    if cfg.voting:
        pseudo = make_pseudo_cloud(grid, survivors, surv_dens)
        if cfg.vote_backbone == "learned":
            backbone = learned_backbone or LearnedSeedBackbone(cfg.backbone_seed)
        else:
            backbone = GeometricSeedBackbone(cloud, cfg)
        seeds = generate_seeds(pseudo, backbone, cfg.n_seeds)
        votes = vote(seeds, cloud, cfg)
        clusters = cluster_votes(votes, cfg.k_clusters, cfg)
        anchors = [-1] * len(clusters)
    else:
        # Compatibility mode: each survivor refines directly, no voting.
        clusters = [
            VoteCluster(
                center=grid.center3(int(i)),
                member_idx=(int(i),),
                weight=float(d),
            )
            for i, d in zip(survivors, surv_dens)
        ]
        anchors = [int(i) for i in survivors]
    if not clusters:
        return []
    top = max(c.weight for c in clusters)
    proposals = [
        refine(c, cloud, cfg, weight_norm=top, source_anchor=a)
        for c, a in zip(clusters, anchors)
    ]
    if cfg.nms_threshold is not None:
        rects = None
        if cfg.nms_mode == "2d":
            rects = [project_to_2d(p, projection) for p in proposals]
        proposals = nms(
            proposals, cfg.nms_threshold, mode=cfg.nms_mode, rects=rects
        )
    return proposals
