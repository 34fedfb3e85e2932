"""Pose distance tests: hand examples, axioms and a direct-formula oracle"""

import math

import numpy as np
import pytest

from conftest import make_pose

from app.models import MatchConfig, Pose, RootUndetected
from app.services.pose_core import (
    MAX_DIST,
    common_indices,
    mirror_array,
    mirror_pose,
    pose_distance_matrix,
    pose_distance_p,
    pose_distance_q,
    root_normalize,
    swap_sides,
)
from app.utils.body25 import MIRROR_PAIRS, NECK, NUM_KEYPOINTS

R_WRIST, L_WRIST, MID_HIP = 4, 7, 8


def sparse_pose(points, pose_id=0):
    """Pose with only the given {slot: (x, y)} keypoints detected"""
    array = np.zeros((NUM_KEYPOINTS, 3))
    for slot, (x, y) in points.items():
        array[slot] = (x, y, 0.9)
    return Pose.from_array(array, pose_id=pose_id)


def oracle_p(r, s, threshold=0.0):
    """Cosine distance written out term by term"""
    ra, sa = r.to_array(), s.to_array()
    if not (ra[NECK, 2] > threshold and sa[NECK, 2] > threshold):
        return MAX_DIST
    idx = [i for i in range(NUM_KEYPOINTS) if ra[i, 2] > threshold and sa[i, 2] > threshold]
    if len(idx) < 2:
        return MAX_DIST
    dot = nr = ns = 0.0
    for i in idx:
        rx, ry = ra[i, 0] - ra[NECK, 0], ra[i, 1] - ra[NECK, 1]
        sx, sy = sa[i, 0] - sa[NECK, 0], sa[i, 1] - sa[NECK, 1]
        dot += rx * sx + ry * sy
        nr += rx * rx + ry * ry
        ns += sx * sx + sy * sy
    if nr == 0.0 or ns == 0.0:
        return MAX_DIST
    return min(max(1.0 - dot / (math.sqrt(nr) * math.sqrt(ns)), 0.0), MAX_DIST)


def oracle_mirror(s):
    array = s.to_array()
    out = array.copy()
    for i in range(NUM_KEYPOINTS):
        if out[i, 2] > 0:
            out[i, 0] = -out[i, 0]
    swapped = out.copy()
    for right, left in MIRROR_PAIRS:
        swapped[right], swapped[left] = out[left], out[right]
    return Pose.from_array(swapped, pose_id=s.pose_id)


def usable_poses(rng, count, dropout):
    """Random poses with the neck and at least one other keypoint detected"""
    poses = []
    while len(poses) < count:
        pose = make_pose(rng, pose_id=len(poses), dropout=dropout)
        if (pose.confidences() > 0).sum() >= 2:
            poses.append(pose)
    return poses


@pytest.mark.parametrize("r_points, s_points, expected", [
    ({i: (i, i) for i in range(25)}, {i: (2 * i, i) for i in range(25)}, set(range(25))),
    ({0: (1, 1), 1: (2, 2), 2: (3, 3)}, {1: (0, 0), 2: (1, 1), 3: (2, 2)}, {1, 2}),
    ({0: (1, 1)}, {1: (2, 2)}, set()),
])
def test_common_indices(cfg, r_points, s_points, expected):
    assert common_indices(sparse_pose(r_points), sparse_pose(s_points), cfg) == expected


def test_root_normalize_subtracts_neck(cfg):
    r = sparse_pose({NECK: (10, 10), R_WRIST: (13, 14)})
    out = root_normalize(r, {NECK, R_WRIST}, cfg).reshape(NUM_KEYPOINTS, 2)
    assert out[NECK].tolist() == [0.0, 0.0]
    assert out[R_WRIST].tolist() == [3.0, 4.0]

    shifted = sparse_pose({NECK: (110, 60), R_WRIST: (113, 64)})
    assert np.array_equal(root_normalize(shifted, {NECK, R_WRIST}, cfg), root_normalize(r, {NECK, R_WRIST}, cfg))

    masked = root_normalize(r, {NECK}, cfg).reshape(NUM_KEYPOINTS, 2)
    assert masked[R_WRIST].tolist() == [0.0, 0.0]


def test_root_normalize_requires_neck(cfg):
    r = sparse_pose({R_WRIST: (1, 2), MID_HIP: (3, 4)})
    with pytest.raises(RootUndetected):
        root_normalize(r, {R_WRIST, MID_HIP}, cfg)


@pytest.mark.parametrize("wrist_r, wrist_s, expected", [
    ((1, 0), (0, 1), 1.0),
    ((1, 0), (-1, 0), 2.0),
    ((1, 0), (3, 0), 0.0),
])
def test_pose_distance_p_hand_examples(cfg, wrist_r, wrist_s, expected):
    r = sparse_pose({NECK: (0, 0), R_WRIST: wrist_r})
    s = sparse_pose({NECK: (0, 0), R_WRIST: wrist_s})
    assert pose_distance_p(r, s, cfg) == pytest.approx(expected, abs=1e-12)


@pytest.mark.parametrize("r_points, s_points", [
    ({R_WRIST: (1, 0), MID_HIP: (0, 5)}, {NECK: (0, 0), R_WRIST: (1, 0)}),  # no neck
    ({NECK: (0, 0), R_WRIST: (1, 0)}, {NECK: (0, 0), L_WRIST: (1, 0)}),  # only the neck shared
    ({NECK: (0, 0), R_WRIST: (0, 0)}, {NECK: (0, 0), R_WRIST: (1, 0)}),  # zero-length vector
])
def test_degenerate_pairs_get_sentinel(cfg, r_points, s_points):
    assert pose_distance_p(sparse_pose(r_points), sparse_pose(s_points), cfg) == MAX_DIST


def test_distance_axioms(rng, cfg):
    poses = usable_poses(rng, 1000, dropout=0.3)
    for r, s in zip(poses[::2], poses[1::2]):
        p_rs = pose_distance_p(r, s, cfg)
        assert 0.0 <= p_rs <= 2.0
        assert p_rs == pytest.approx(pose_distance_p(s, r, cfg), abs=1e-12)
        assert pose_distance_p(r, r, cfg) == pytest.approx(0.0, abs=1e-9)
        assert pose_distance_q(r, s, cfg).value <= p_rs
        mirrored = pose_distance_q(r, mirror_pose(r), cfg)
        assert mirrored.value == pytest.approx(0.0, abs=1e-9)
        assert pose_distance_q(r, mirror_pose(s), cfg).value == pytest.approx(
            pose_distance_q(r, s, cfg).value, abs=1e-12
        )


def test_similarity_invariance(rng, cfg):
    for r in usable_poses(rng, 200, dropout=0.3):
        array = r.to_array()
        detected = array[:, 2] > 0
        scale = rng.uniform(0.2, 5.0)
        center = rng.uniform(-300, 300, 2)
        moved = array.copy()
        moved[detected, :2] = scale * (array[detected, :2] - center) + center + rng.uniform(-500, 500, 2)
        s = Pose.from_array(moved)
        assert pose_distance_p(r, s, cfg) == pytest.approx(0.0, abs=1e-9)


def test_undetected_keypoints_do_not_change_distance(rng, cfg):
    for r, s in zip(usable_poses(rng, 50, 0.3), usable_poses(rng, 50, 0.3)):
        array = s.to_array()
        lost = np.flatnonzero(array[:, 2] == 0)
        if not len(lost):
            continue
        array[lost, :2] = rng.uniform(-1000, 1000, (len(lost), 2))
        noisy = Pose.from_array(array)
        assert pose_distance_p(r, noisy, cfg) == pose_distance_p(r, s, cfg)


def test_mirror_pose_examples():
    s = sparse_pose({L_WRIST: (5, 7), NECK: (1, 2), MID_HIP: (1, 9)})
    m = mirror_pose(s).to_array()
    assert m[R_WRIST, :2].tolist() == [-5.0, 7.0]
    assert m[L_WRIST, 2] == 0.0
    assert m[NECK, :2].tolist() == [-1.0, 2.0]
    assert m[MID_HIP, :2].tolist() == [-1.0, 9.0]


def test_mirror_uses_detection_threshold():
    array = np.zeros((NUM_KEYPOINTS, 3))
    array[NECK] = (10.0, 20.0, 0.9)
    array[L_WRIST] = (5.0, 7.0, 0.3)
    loose = mirror_array(array)
    strict = mirror_array(array, detection_threshold=0.5)
    assert loose[R_WRIST, :2].tolist() == [-5.0, 7.0]
    assert strict[R_WRIST, :2].tolist() == [5.0, 7.0]
    assert strict[NECK, :2].tolist() == [-10.0, 20.0]
    cfg = MatchConfig(detection_threshold=0.5)
    assert mirror_pose(Pose.from_array(array), cfg).to_array().tolist() == strict.tolist()


def test_mirror_is_an_involution(rng):
    for _ in range(50):
        s = make_pose(rng, dropout=0.3)
        assert mirror_pose(mirror_pose(s)) == s


def test_swap_sides_keeps_coordinates():
    s = sparse_pose({L_WRIST: (5, 7)})
    swapped = swap_sides(s).to_array()
    assert swapped[R_WRIST].tolist() == [5.0, 7.0, 0.9]


def test_q_tie_breaks_to_unflipped(rng, cfg):
    r = make_pose(rng)
    same = pose_distance_q(r, r, cfg)
    assert same.value == pytest.approx(0.0, abs=1e-9) and same.flipped is False
    mirrored = pose_distance_q(r, mirror_pose(r), cfg)
    assert mirrored.flipped is True


def test_q_without_flip_equals_p(rng):
    cfg = MatchConfig(flip_enabled=False)
    r, s = make_pose(rng), make_pose(rng)
    q = pose_distance_q(r, mirror_pose(s), cfg)
    assert q.flipped is False
    assert q.value == pose_distance_p(r, mirror_pose(s), cfg)


def test_oracle_equivalence(rng, cfg):
    query = usable_poses(rng, 30, dropout=0.3)
    database = usable_poses(rng, 40, dropout=0.3)
    values, flips = pose_distance_matrix(query, database, cfg)
    for i, r in enumerate(query):
        for j, s in enumerate(database):
            direct = oracle_p(r, s)
            mirrored = oracle_p(r, oracle_mirror(s))
            assert pose_distance_p(r, s, cfg) == pytest.approx(direct, abs=1e-12)
            assert values[i, j] == pytest.approx(min(direct, mirrored), abs=1e-12)
            assert pose_distance_q(r, s, cfg).value == pytest.approx(values[i, j], abs=1e-12)
            assert bool(flips[i, j]) == (mirrored < direct)


def test_detection_threshold_hides_low_confidence(rng):
    r = make_pose(rng)
    array = r.to_array()
    array[:, 2] = 0.3
    array[NECK, 2] = 0.9
    weak = Pose.from_array(array)
    assert pose_distance_p(weak, r, MatchConfig(detection_threshold=0.5)) == MAX_DIST
