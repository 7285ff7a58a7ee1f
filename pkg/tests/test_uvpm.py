"""Tests for the anchor-voting proposal pipeline."""

import math

import numpy as np
import pytest

from votebox.cloudio import PointCloud, SceneSpec, generate_scene, sample_box_points
from votebox.frontview import ProjectionConfig, build_map
from votebox.geometry import Box3D, iou_bev
from votebox.uvpm import (
    GeometricSeedBackbone,
    UvpmConfig,
    Vote,
    VoteCluster,
    build_anchor_grid,
    cluster_votes,
    density,
    expansion_check,
    filter_anchors,
    generate_seeds,
    make_pseudo_cloud,
    project_to_2d,
    propose,
    refine,
    vote,
)
from votebox.uvpm import _batch_densities, _expansion_survivors


def box_cloud(box, n, seed, frame="crop"):
    pts = sample_box_points(box, n, 0.0, np.random.default_rng(seed))
    data = np.column_stack([pts, np.full(len(pts), 0.5)])
    return PointCloud(data, frame_id=frame)


class TestConfig:
    def test_validation(self):
        with pytest.raises(ValueError):
            UvpmConfig(spacing=0.0)
        with pytest.raises(ValueError):
            UvpmConfig(delta=1.5)
        with pytest.raises(ValueError):
            UvpmConfig(epsilon=0.0)
        with pytest.raises(ValueError):
            UvpmConfig(n_seeds=0)
        with pytest.raises(ValueError):
            UvpmConfig(yaw_steps=0)
        with pytest.raises(ValueError):
            UvpmConfig(vote_backbone="mlp")
        with pytest.raises(ValueError):
            UvpmConfig(nms_mode="iou")
        with pytest.raises(ValueError):
            UvpmConfig(extent=((3.0, 3.0), (0.0, 10.0)))


class TestAnchorGrid:
    def test_counts_and_order(self):
        cfg = UvpmConfig(spacing=0.5, extent=((0.0, 1.0), (0.0, 2.0)))
        grid = build_anchor_grid(cfg)
        # Half-open edges: 2 x positions, 4 y positions, x-major order.
        assert len(grid) == 8
        np.testing.assert_allclose(grid.centers[0], (0.0, 0.0))
        np.testing.assert_allclose(grid.centers[1], (0.0, 0.5))
        np.testing.assert_allclose(grid.centers[4], (0.5, 0.0))
        assert grid.centers[:, 0].max() == pytest.approx(0.5)
        assert grid.centers[:, 1].max() == pytest.approx(1.5)

    def test_count_survives_float_ratio_noise(self):
        # 70 / 0.2 is 349.99...94 in floats; the grid must still be 350 wide.
        grid = build_anchor_grid(UvpmConfig())
        assert len(grid) == 350 * 350

    def test_anchor_box_and_center(self):
        grid = build_anchor_grid(UvpmConfig(spacing=1.0, extent=((2.0, 4.0), (3.0, 5.0))))
        assert grid.center3(0) == (2.0, 3.0, -1.0)
        box = grid.anchor_box(0, scale_factor=1.1)
        np.testing.assert_allclose(box.scale, (3.9 * 1.1, 1.6 * 1.1, 1.56 * 1.1))
        assert box.yaw == 0.0
        assert box.center == (2.0, 3.0, -1.0)


class TestDensity:
    def test_batch_matches_per_anchor(self):
        scene = generate_scene(SceneSpec(rng_seed=3))
        projection = ProjectionConfig()
        fvmap = build_map(scene.cloud, projection)
        cfg = UvpmConfig(spacing=2.0, extent=((-10.0, 10.0), (5.0, 25.0)))
        grid = build_anchor_grid(cfg)
        batch, projectable = _batch_densities(grid, fvmap, cfg, projection)
        for i in range(len(grid)):
            single = density(grid.anchor_box(i), fvmap, cfg.patch_size, projection)
            if projectable[i]:
                assert single == batch[i]
            else:
                assert single == 0.0 and batch[i] == 0.0
        assert projectable.any()
        assert (batch > 0).any()

    def test_behind_sensor_scores_zero(self):
        scene = generate_scene(SceneSpec(rng_seed=3))
        fvmap = build_map(scene.cloud, ProjectionConfig())
        box = Box3D((-20.0, 0.0, -1.0), (3.9, 1.6, 1.56), 0.0)
        assert density(box, fvmap, 16) == 0.0


class TestFilterAnchors:
    def test_thresholds_nest(self):
        scene = generate_scene(SceneSpec(rng_seed=4))
        fvmap = build_map(scene.cloud, ProjectionConfig())
        extent = ((-15.0, 15.0), (3.0, 30.0))
        survivors = {}
        for delta in (0.1, 0.4, 0.8):
            cfg = UvpmConfig(spacing=1.0, extent=extent, delta=delta)
            idx, dens = filter_anchors(build_anchor_grid(cfg), fvmap, cfg)
            assert (dens >= delta).all()
            assert (np.diff(idx) > 0).all()  # original order
            survivors[delta] = set(idx.tolist())
        assert survivors[0.8] <= survivors[0.4] <= survivors[0.1]
        assert survivors[0.1]

    def test_empty_map_needs_zero_threshold(self):
        empty = build_map(PointCloud(np.zeros((0, 4)), frame_id="x"), ProjectionConfig())
        cfg = UvpmConfig(spacing=2.0, extent=((-8.0, 8.0), (4.0, 20.0)), delta=0.3)
        grid = build_anchor_grid(cfg)
        idx, _ = filter_anchors(grid, empty, cfg)
        assert idx.size == 0
        zero = UvpmConfig(spacing=2.0, extent=((-8.0, 8.0), (4.0, 20.0)), delta=0.0)
        idx, dens = filter_anchors(grid, empty, zero)
        assert idx.size > 0
        assert (dens == 0.0).all()


class TestExpansionCheck:
    BOX = Box3D((10.0, 0.0, -1.0), (3.9, 1.6, 1.56), 0.0)

    def shell_points(self, n):
        # On the +x face midline, outside the box but inside the 1.1x shell.
        x = self.BOX.center[0] + 0.5 * 3.9 * 1.05
        return np.column_stack(
            [
                np.full(n, x),
                np.linspace(-0.5, 0.5, n),
                np.full(n, -1.0),
                np.full(n, 0.5),
            ]
        )

    def test_whole_object_passes(self):
        cloud = box_cloud(self.BOX, 500, seed=0)
        assert expansion_check(self.BOX, cloud, UvpmConfig(shell_tolerance=5))

    def test_tolerance_boundary_is_inclusive(self):
        inside = box_cloud(self.BOX, 500, seed=0).data
        for extra, want in ((5, True), (6, False)):
            data = np.vstack([inside, self.shell_points(extra)])
            cloud = PointCloud(data, frame_id="x")
            cfg = UvpmConfig(shell_tolerance=5)
            assert expansion_check(self.BOX, cloud, cfg) is want

    def test_fragment_of_larger_structure_fails(self):
        wall = Box3D((10.0, 0.0, -1.0), (12.0, 1.0, 1.5), 0.0)
        cloud = box_cloud(wall, 3000, seed=1)
        anchor = Box3D((10.0, 0.0, -1.0), (3.9, 1.6, 1.56), 0.0)
        assert not expansion_check(anchor, cloud, UvpmConfig(shell_tolerance=5))

    def test_batch_survivors_match_scalar_check(self):
        scene = generate_scene(SceneSpec(rng_seed=5))
        cfg = UvpmConfig(spacing=1.5, extent=((-12.0, 12.0), (4.0, 28.0)))
        grid = build_anchor_grid(cfg)
        indices = np.arange(len(grid))
        fast = set(_expansion_survivors(grid, indices, scene.cloud, cfg).tolist())
        slow = {
            int(i)
            for i in indices
            if expansion_check(grid.anchor_box(int(i)), scene.cloud, cfg)
        }
        assert fast == slow


class TestPseudoCloud:
    def test_carries_density_as_intensity(self):
        grid = build_anchor_grid(
            UvpmConfig(spacing=1.0, extent=((0.0, 3.0), (0.0, 3.0)))
        )
        idx = np.array([0, 4, 8])
        dens = np.array([0.2, 0.9, 0.5])
        pseudo = make_pseudo_cloud(grid, idx, dens)
        assert len(pseudo) == 3
        np.testing.assert_array_equal(pseudo.xyz[:, :2], grid.centers[idx])
        assert (pseudo.xyz[:, 2] == grid.template_z).all()
        np.testing.assert_array_equal(pseudo.intensity, dens)

    def test_empty(self):
        grid = build_anchor_grid(UvpmConfig())
        assert len(make_pseudo_cloud(grid, np.array([], dtype=int), np.array([]))) == 0


class TestSeedsAndVotes:
    def test_generate_seeds_starts_at_index_zero(self):
        grid = build_anchor_grid(
            UvpmConfig(spacing=1.0, extent=((0.0, 5.0), (0.0, 5.0)))
        )
        idx = np.arange(len(grid))
        pseudo = make_pseudo_cloud(grid, idx, np.full(idx.size, 0.5))
        cloud = box_cloud(Box3D((2.0, 2.0, -1.0), (2.0, 2.0, 1.0), 0.0), 50, seed=2)
        backbone = GeometricSeedBackbone(cloud, UvpmConfig())
        seeds = generate_seeds(pseudo, backbone, 4)
        assert len(seeds) == 4
        assert seeds[0].xyz == tuple(pseudo.xyz[0])
        assert seeds[0].feature.shape == (7,)
        assert seeds[0].vote_offset is None
        # m larger than the pseudo cloud clamps instead of failing.
        assert len(generate_seeds(pseudo, backbone, 10_000)) == len(pseudo)

    def test_generate_seeds_validation(self):
        empty = PointCloud(np.zeros((0, 4)), frame_id="p")
        backbone = GeometricSeedBackbone(empty, UvpmConfig())
        with pytest.raises(ValueError):
            generate_seeds(empty, backbone, 4)
        grid = build_anchor_grid(UvpmConfig(spacing=1.0, extent=((0.0, 2.0), (0.0, 2.0))))
        pseudo = make_pseudo_cloud(grid, np.array([0]), np.array([0.5]))
        with pytest.raises(ValueError):
            generate_seeds(pseudo, backbone, 0)

    def test_vote_targets_local_centroid(self):
        blob = box_cloud(Box3D((5.0, 0.0, -1.0), (0.6, 0.6, 0.6), 0.0), 40, seed=3)
        cfg = UvpmConfig(vote_radius=1.0, min_vote_points=5)
        near = [_seed((5.2, 0.1, -1.0))]
        votes = vote(near, blob, cfg)
        assert len(votes) == 1
        assert votes[0].weight == 1.0
        np.testing.assert_allclose(votes[0].target_xyz, blob.xyz.mean(axis=0), atol=1e-12)

    def test_sparse_seeds_abstain(self):
        blob = box_cloud(Box3D((5.0, 0.0, -1.0), (0.6, 0.6, 0.6), 0.0), 40, seed=3)
        cfg = UvpmConfig(vote_radius=1.0, min_vote_points=5)
        far = [_seed((30.0, 20.0, -1.0)), _seed((5.0, 0.0, -1.0))]
        votes = vote(far, blob, cfg)
        assert len(votes) == 1  # the far seed has no neighbors and abstains
        assert vote([], blob, cfg) == []
        empty = PointCloud(np.zeros((0, 4)), frame_id="e")
        assert vote(far, empty, cfg) == []

    def test_vote_weights_normalized_by_strongest(self):
        a = sample_box_points(
            Box3D((5.0, 0.0, -1.0), (0.6, 0.6, 0.6), 0.0), 40, 0.0, np.random.default_rng(0)
        )
        b = sample_box_points(
            Box3D((12.0, 4.0, -1.0), (0.6, 0.6, 0.6), 0.0), 10, 0.0, np.random.default_rng(1)
        )
        cloud = PointCloud(
            np.column_stack([np.vstack([a, b]), np.full(50, 0.5)]), frame_id="x"
        )
        cfg = UvpmConfig(vote_radius=1.0, min_vote_points=5)
        votes = vote([_seed((5.0, 0.0, -1.0)), _seed((12.0, 4.0, -1.0))], cloud, cfg)
        weights = sorted(v.weight for v in votes)
        assert weights == [pytest.approx(10 / 40), 1.0]


class TestClusterVotes:
    def test_weighted_centers_and_membership(self):
        votes = [
            Vote((0.0, 0.0, 0.0), 1.0),
            Vote((1.0, 0.0, 0.0), 3.0),
            Vote((10.0, 0.0, 0.0), 2.0),
        ]
        clusters = cluster_votes(votes, k=2, cfg=UvpmConfig(cluster_radius=2.0))
        by_weight = {c.weight: c for c in clusters}
        assert set(by_weight) == {4.0, 2.0}
        near = by_weight[4.0]
        assert near.member_idx == (0, 1)
        np.testing.assert_allclose(near.center, (0.75, 0.0, 0.0))
        assert by_weight[2.0].member_idx == (2,)

    def test_out_of_radius_votes_drop(self):
        votes = [
            Vote((0.0, 0.0, 0.0), 1.0),
            Vote((0.1, 0.0, 0.0), 1.0),
            Vote((10.0, 0.0, 0.0), 1.0),
        ]
        clusters = cluster_votes(votes, k=1, cfg=UvpmConfig(cluster_radius=2.0))
        assert len(clusters) == 1
        assert clusters[0].member_idx == (0, 1)

    def test_validation_and_empty(self):
        assert cluster_votes([], 4, UvpmConfig()) == []
        with pytest.raises(ValueError):
            cluster_votes([Vote((0.0, 0.0, 0.0), 1.0)], 0, UvpmConfig())


def _seed(xyz):
    from votebox.uvpm import Seed

    return Seed(xyz=xyz, feature=np.zeros(7))


class TestRefine:
    def cluster_at(self, center, weight=1.0):
        return VoteCluster(center=center, member_idx=(0,), weight=weight)

    @pytest.mark.parametrize("deg", [15.0, 30.0, 45.0])
    def test_yaw_recovery_is_rotation_equivariant(self, deg):
        yaw = math.radians(deg)
        box = Box3D((8.0, 2.0, -1.0), (3.9, 1.6, 1.56), yaw)
        cloud = box_cloud(box, 4000, seed=7)
        cfg = UvpmConfig()
        prop = refine(self.cluster_at(box.center), cloud, cfg)
        quantum = math.pi / cfg.yaw_steps
        gap = abs(prop.box.yaw - yaw) % math.pi
        assert min(gap, math.pi - gap) <= quantum / 2 + 1e-9
        np.testing.assert_allclose(prop.box.center, box.center, atol=0.1)
        np.testing.assert_allclose(prop.box.scale, cfg.prior_scale)

    def test_score_normalization(self):
        cloud = PointCloud(np.zeros((0, 4)), frame_id="e")
        cfg = UvpmConfig()
        assert refine(self.cluster_at((0, 0, 0), 1.0), cloud, cfg, weight_norm=2.0).score == 0.5
        assert refine(self.cluster_at((0, 0, 0), 1.0), cloud, cfg).score == 1.0
        assert refine(self.cluster_at((0, 0, 0), 3.0), cloud, cfg, weight_norm=2.0).score == 1.0
        assert refine(self.cluster_at((0, 0, 0), 1.0), cloud, cfg, weight_norm=0.0).score == 0.0

    def test_empty_cloud_keeps_cluster_center(self):
        prop = refine(self.cluster_at((3.0, 4.0, -1.0)), PointCloud(np.zeros((0, 4)), frame_id="e"), UvpmConfig())
        assert prop.box.center == (3.0, 4.0, -1.0)
        assert prop.box.yaw == 0.0
        assert prop.source_anchor == -1


class TestProjectTo2D:
    def test_axis_aligned_cover(self):
        from votebox.frontview import box_to_map_rect
        from votebox.geometry import Proposal

        projection = ProjectionConfig()
        box = Box3D((15.0, 0.0, -1.0), (3.9, 1.6, 1.56), 0.3)
        prop = Proposal(box=box, score=0.5, class_probs=(1.0,), source_anchor=-1)
        rect = project_to_2d(prop, projection)
        r0, c0, r1, c1 = box_to_map_rect(box, projection)
        assert rect.angle == 0.0
        np.testing.assert_allclose(rect.center, (0.5 * (r0 + r1), 0.5 * (c0 + c1)))
        np.testing.assert_allclose(rect.size, (r1 - r0, c1 - c0))

    def test_behind_sensor_is_none(self):
        from votebox.geometry import Proposal

        box = Box3D((-15.0, 0.0, -1.0), (3.9, 1.6, 1.56), 0.0)
        prop = Proposal(box=box, score=0.5, class_probs=(1.0,), source_anchor=-1)
        assert project_to_2d(prop, ProjectionConfig()) is None


def small_scene_cfg(**overrides):
    # Covers the synthetic placement region with the default anchor pitch.
    base = dict(
        extent=((0.0, 35.0), (0.0, 24.0)),
        shell_tolerance=400,
    )
    base.update(overrides)
    return UvpmConfig(**base)


class TestPropose:
    def test_deterministic_and_recalls_truths(self):
        scene = generate_scene(SceneSpec(rng_seed=2))
        fvmap = build_map(scene.cloud, ProjectionConfig())
        cfg = small_scene_cfg()
        first = propose(scene.cloud, fvmap, cfg)
        second = propose(scene.cloud, fvmap, cfg)
        assert len(first) == len(second)
        for a, b in zip(first, second):
            assert a.box.center == b.box.center
            assert a.box.yaw == b.box.yaw
            assert a.score == b.score
        assert first
        for prop in first:
            assert 0.0 < prop.score <= 1.0
        for truth in scene.truth_boxes:
            best = max(iou_bev(p.box, truth.box) for p in first)
            assert best >= 0.3

    def test_compat_mode_floods_output(self):
        scene = generate_scene(SceneSpec(rng_seed=2))
        fvmap = build_map(scene.cloud, ProjectionConfig())
        voting = propose(scene.cloud, fvmap, small_scene_cfg())
        compat = propose(scene.cloud, fvmap, small_scene_cfg(voting=False))
        assert len(compat) > len(voting)
        assert all(p.source_anchor >= 0 for p in compat)
        assert all(p.source_anchor == -1 for p in voting)

    def test_full_occupancy_threshold_kills_output(self):
        # Saturated patches only appear on dense silhouettes, and those
        # anchors straddle object fragments the tight shell check rejects.
        scene = generate_scene(SceneSpec(rng_seed=2))
        fvmap = build_map(scene.cloud, ProjectionConfig())
        cfg = small_scene_cfg(delta=1.0, shell_tolerance=5)
        assert propose(scene.cloud, fvmap, cfg) == []

    def test_nms_off_keeps_more(self):
        scene = generate_scene(SceneSpec(rng_seed=2))
        fvmap = build_map(scene.cloud, ProjectionConfig())
        kept = propose(scene.cloud, fvmap, small_scene_cfg())
        raw = propose(scene.cloud, fvmap, small_scene_cfg(nms_threshold=None))
        assert len(raw) >= len(kept)
