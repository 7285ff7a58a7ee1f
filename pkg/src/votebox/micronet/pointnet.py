"""Set-abstraction / feature-propagation layers and the seed-vote backbone.

Set abstraction samples centers by farthest-point sampling, groups neighbors
within a radius (groups padded by repetition to a fixed size), runs a shared
per-point MLP over relative coordinates concatenated with features, and
max-pools per group. Feature propagation interpolates coarse features back to
fine positions by inverse-distance weighting over the 3 nearest coarse points
(exact matches copy the coarse feature), concatenates skip features, and
applies an MLP. The backbone stacks four SA and two FP layers and ends in a
vote head emitting 4 values per point: 3 center offsets and an objectness
logit.
"""

from __future__ import annotations

import numpy as np
from scipy.spatial import cKDTree

from .layers import MLP
from .tensor import Tensor, concat

__all__ = [
    "farthest_point_sample",
    "interpolate_matrix",
    "interpolate_features",
    "SetAbstraction",
    "FeaturePropagation",
    "VoteBackbone",
]


def farthest_point_sample(xyz: np.ndarray, m: int, start: int = 0) -> np.ndarray:
    """Greedy max-min selection of m indices, deterministic from ``start``."""
    pts = np.asarray(xyz, dtype=np.float64)
    n = pts.shape[0]
    if n == 0:
        raise ValueError("cannot sample from an empty point set")
    m = min(int(m), n)
    chosen = np.empty(m, dtype=np.int64)
    chosen[0] = start
    dist = np.linalg.norm(pts - pts[start], axis=1)
    for i in range(1, m):
        nxt = int(np.argmax(dist))
        chosen[i] = nxt
        dist = np.minimum(dist, np.linalg.norm(pts - pts[nxt], axis=1))
    return chosen


def _group_indices(
    xyz: np.ndarray, centers: np.ndarray, radius: float, nsample: int
) -> np.ndarray:
    """(m, nsample) neighbor indices; short groups pad with their first entry."""
    tree = cKDTree(xyz)
    lists = tree.query_ball_point(centers, r=radius)
    out = np.empty((centers.shape[0], nsample), dtype=np.int64)
    for i, neighbors in enumerate(lists):
        neighbors = sorted(neighbors)
        if not neighbors:
            # Radius missed everything; fall back to the nearest point so the
            # group is never empty.
            _, nearest = tree.query(centers[i])
            neighbors = [int(nearest)]
        if len(neighbors) >= nsample:
            picked = neighbors[:nsample]
        else:
            picked = neighbors + [neighbors[0]] * (nsample - len(neighbors))
        out[i] = picked
    return out


class SetAbstraction:
    """FPS sample + radius grouping + shared MLP + per-group max pool."""

    def __init__(
        self,
        ratio: int,
        radius: float,
        nsample: int,
        in_channels: int,
        mlp_widths: list,
        rng: np.random.Generator,
    ):
        if not mlp_widths:
            raise ValueError("mlp_widths must be non-empty")
        self.ratio = int(ratio)
        self.radius = float(radius)
        self.nsample = int(nsample)
        self.mlp = MLP([3 + in_channels, *mlp_widths], rng, final_relu=True)
        self.out_channels = mlp_widths[-1]

    def __call__(self, xyz: np.ndarray, feats: Tensor) -> tuple:
        n = xyz.shape[0]
        if n == 0:
            raise ValueError("set abstraction on an empty point set")
        m = max(1, n // self.ratio)
        centers_idx = farthest_point_sample(xyz, m, start=0)
        centers = xyz[centers_idx]
        group = _group_indices(xyz, centers, self.radius, self.nsample)
        flat = group.reshape(-1)
        rel = xyz[flat] - np.repeat(centers, self.nsample, axis=0)
        gathered = feats.gather_rows(flat)
        h = concat([Tensor(rel), gathered], axis=1)
        h = self.mlp(h)
        h = h.reshape(m, self.nsample, self.out_channels)
        return centers, h.max(axis=1)

    def parameters(self) -> list:
        return self.mlp.parameters()


def interpolate_matrix(fine_xyz: np.ndarray, coarse_xyz: np.ndarray) -> np.ndarray:
    """(n_fine, n_coarse) inverse-distance weights over 3 nearest neighbors.

    A fine point within 1e-12 of a coarse point copies that coarse feature
    exactly (one-hot row) instead of mixing it with farther neighbors.
    """
    fine = np.asarray(fine_xyz, dtype=np.float64)
    coarse = np.asarray(coarse_xyz, dtype=np.float64)
    if coarse.shape[0] == 0:
        raise ValueError("cannot interpolate from zero coarse points")
    k = min(3, coarse.shape[0])
    tree = cKDTree(coarse)
    dist, idx = tree.query(fine, k=k)
    dist = np.atleast_2d(dist.reshape(fine.shape[0], k))
    idx = np.atleast_2d(idx.reshape(fine.shape[0], k))
    matrix = np.zeros((fine.shape[0], coarse.shape[0]), dtype=np.float64)
    for i in range(fine.shape[0]):
        if dist[i, 0] < 1e-12:
            matrix[i, idx[i, 0]] = 1.0
            continue
        weights = 1.0 / dist[i]
        weights /= weights.sum()
        for j in range(k):
            matrix[i, idx[i, j]] += weights[j]
    return matrix


def interpolate_features(
    fine_xyz: np.ndarray, coarse_xyz: np.ndarray, coarse_feats
):
    """Inverse-distance interpolation of coarse features onto fine positions."""
    matrix = interpolate_matrix(fine_xyz, coarse_xyz)
    if isinstance(coarse_feats, Tensor):
        return Tensor(matrix) @ coarse_feats
    return matrix @ np.asarray(coarse_feats, dtype=np.float64)


class FeaturePropagation:
    """Interpolate + skip-concat + MLP from a coarse level to a fine level."""

    def __init__(
        self,
        in_channels: int,
        skip_channels: int,
        mlp_widths: list,
        rng: np.random.Generator,
    ):
        if not mlp_widths:
            raise ValueError("mlp_widths must be non-empty")
        self.mlp = MLP(
            [in_channels + skip_channels, *mlp_widths], rng, final_relu=True
        )
        self.out_channels = mlp_widths[-1]

    def __call__(
        self,
        fine_xyz: np.ndarray,
        coarse_xyz: np.ndarray,
        coarse_feats: Tensor,
        skip_feats: Tensor | None = None,
    ) -> Tensor:
        interp = interpolate_features(fine_xyz, coarse_xyz, coarse_feats)
        if skip_feats is not None:
            interp = concat([interp, skip_feats], axis=1)
        return self.mlp(interp)

    def parameters(self) -> list:
        return self.mlp.parameters()


class VoteBackbone:
    """Four SA levels, two FP hops back to input resolution, and a vote head.

    Input is (n, 3 + in_channels): xyz plus per-point features. ``votes``
    returns an (n, 4) tensor: 3 predicted center offsets and one objectness
    logit per point.
    """

    SA_RATIOS = (2, 4, 8, 16)
    SA_RADII = (0.2, 0.4, 0.8, 1.2)
    SA_NSAMPLE = 16
    SA_WIDTHS = (64, 64, 128)

    def __init__(self, in_channels: int = 58, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.in_channels = int(in_channels)
        self.sa_layers = []
        channels = self.in_channels
        for ratio, radius in zip(self.SA_RATIOS, self.SA_RADII):
            layer = SetAbstraction(
                ratio=ratio,
                radius=radius,
                nsample=self.SA_NSAMPLE,
                in_channels=channels,
                mlp_widths=list(self.SA_WIDTHS),
                rng=rng,
            )
            self.sa_layers.append(layer)
            channels = layer.out_channels
        # Hop level 4 -> level 2 with the level-2 skip, then level 2 -> input.
        self.fp_mid = FeaturePropagation(
            in_channels=channels,
            skip_channels=self.sa_layers[1].out_channels,
            mlp_widths=[128, 128],
            rng=rng,
        )
        self.fp_out = FeaturePropagation(
            in_channels=self.fp_mid.out_channels,
            skip_channels=self.in_channels,
            mlp_widths=[256, 256],
            rng=rng,
        )
        self.vote_head = MLP(
            [self.fp_out.out_channels, 128, 4], rng, final_relu=False
        )

    def features(self, points: np.ndarray) -> Tensor:
        """Per-point feature tensor (n, 256) at input resolution."""
        pts = np.asarray(points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 3 + self.in_channels:
            raise ValueError(
                f"expected (n, {3 + self.in_channels}) input, got {pts.shape}"
            )
        if pts.shape[0] == 0:
            raise ValueError("empty input point set")
        xyz = [pts[:, :3]]
        feats = [Tensor(pts[:, 3:])]
        for layer in self.sa_layers:
            new_xyz, new_feats = layer(xyz[-1], feats[-1])
            xyz.append(new_xyz)
            feats.append(new_feats)
        mid = self.fp_mid(xyz[2], xyz[4], feats[4], feats[2])
        return self.fp_out(xyz[0], xyz[2], mid, feats[0])

    def votes(self, points: np.ndarray) -> Tensor:
        """(n, 4) vote tensor: xyz offsets plus an objectness logit."""
        return self.vote_head(self.features(points))

    def parameters(self) -> list:
        params = []
        for layer in self.sa_layers:
            params.extend(layer.parameters())
        params.extend(self.fp_mid.parameters())
        params.extend(self.fp_out.parameters())
        params.extend(self.vote_head.parameters())
        return params
