import math

import numpy as np
import pytest

from votebox.cloudio import (
    LabeledBox,
    MalformedFileError,
    PointCloud,
    SceneSpec,
    generate_scene,
    read_detections,
    read_velodyne_bin,
    sample_box_points,
    write_detections,
    write_velodyne_bin,
)
from votebox.geometry import Box3D, Proposal


def test_point_cloud_validation():
    with pytest.raises(ValueError):
        PointCloud(np.zeros((3, 3)))
    with pytest.raises(ValueError):
        PointCloud(np.array([[0.0, 0.0, 0.0, 1.5]]))
    with pytest.raises(ValueError):
        PointCloud(np.array([[np.inf, 0.0, 0.0, 0.5]]))
    empty = PointCloud(np.zeros((0, 4)))
    assert len(empty) == 0 and empty.xyz.shape == (0, 3)


def test_velodyne_bin_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    data = np.column_stack(
        [rng.normal(size=(50, 3)), rng.uniform(0.0, 1.0, size=50)]
    )
    cloud = PointCloud(data, frame_id="000007")
    path = tmp_path / "000007.bin"
    write_velodyne_bin(path, cloud)
    back = read_velodyne_bin(path)
    assert back.frame_id == "000007"
    # float32 quantization is the only loss
    np.testing.assert_allclose(back.data, data, atol=1e-6, rtol=1e-6)


def test_velodyne_bin_rejects_truncated_payload(tmp_path):
    path = tmp_path / "bad.bin"
    path.write_bytes(b"\x00" * 21)
    with pytest.raises(MalformedFileError):
        read_velodyne_bin(path)


def test_empty_bin_is_a_valid_empty_scan(tmp_path):
    path = tmp_path / "empty.bin"
    path.write_bytes(b"")
    assert len(read_velodyne_bin(path)) == 0


def test_detections_round_trip_is_exact(tmp_path):
    dets = [
        Proposal(Box3D((1.1, 2.2, -0.3), (3.9, 1.6, 1.56), 0.7), 0.875),
        Proposal(Box3D((0.1, 9.0, 0.0), (4.1, 1.7, 1.5), -1.2), 1.0 / 3.0),
    ]
    path = tmp_path / "dets.txt"
    write_detections(dets, path)
    back = read_detections(path)
    assert len(back) == 2
    for a, b in zip(dets, back):
        assert a.score == b.score
        assert a.box.center == b.box.center
        assert a.box.scale == b.box.scale
        assert a.box.yaw == b.box.yaw
        assert a.class_probs == b.class_probs


def test_detections_reject_bad_header_and_short_lines(tmp_path):
    path = tmp_path / "dets.txt"
    path.write_text("not-a-header\n")
    with pytest.raises(MalformedFileError):
        read_detections(path)
    path.write_text("votebox-detections 1\ncar 0.5 1 2\n")
    with pytest.raises(MalformedFileError):
        read_detections(path)


def test_sample_box_points_stay_inside():
    box = Box3D((5.0, 12.0, -1.0), (3.9, 1.6, 1.56), yaw=0.9)
    pts = sample_box_points(box, 500, noise_sigma=0.05, rng=np.random.default_rng(3))
    assert pts.shape == (500, 3)
    assert box.contains_points(pts).all()


def test_generate_scene_is_deterministic():
    a = generate_scene(SceneSpec(rng_seed=9))
    b = generate_scene(SceneSpec(rng_seed=9))
    np.testing.assert_array_equal(a.cloud.data, b.cloud.data)
    assert a.cloud.frame_id == "scene00009"
    assert [t.box for t in a.truth_boxes] == [t.box for t in b.truth_boxes]


def test_generate_scene_invariants():
    scene = generate_scene(SceneSpec(rng_seed=4, n_objects=3))
    assert len(scene.truth_boxes) == 3
    boxes = scene.boxes
    # pairwise center separation respects the generator's placement minimum
    for i in range(3):
        for j in range(i + 1, 3):
            d = math.dist(boxes[i].center[:2], boxes[j].center[:2])
            assert d >= 6.0
    # every object point lies inside exactly its own box region; ground sits low
    xyz = scene.cloud.xyz
    inside_any = np.zeros(len(scene.cloud), dtype=bool)
    for box in boxes:
        inside_any |= box.contains_points(xyz)
    n_obj_expected = 3 * 2500
    assert inside_any[:n_obj_expected].all()
    ground = xyz[n_obj_expected:]
    assert np.abs(ground[:, 2] + 1.78).max() <= 0.04
    for truth in scene.truth_boxes:
        assert truth.has_annotations
        assert truth.occlusion in (0, 1, 2)
        assert 0.0 <= truth.truncation <= 1.0
        assert truth.height_px > 0.0


def test_generate_scene_empty():
    scene = generate_scene(SceneSpec(rng_seed=3, n_objects=0, n_ground_points=0))
    assert len(scene.cloud) == 0
    assert scene.truth_boxes == ()


def test_labeled_box_annotation_flag():
    box = Box3D((0, 5, 0), (2, 1, 1))
    assert not LabeledBox(box).has_annotations
    assert LabeledBox(box, height_px=30.0, occlusion=0, truncation=0.0).has_annotations
