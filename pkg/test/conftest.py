import os
import sys

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

import numpy as np
import pytest

from app.models import MatchConfig, Pose
from app.services.geom_verify import load_canonical_skeleton
from app.services.synthetic import generate_synthetic_benchmark
from app.utils.body25 import MIRROR_PERMUTATION, NECK, NUM_KEYPOINTS


def make_pose(rng, pose_id=0, dropout=0.0, spread=100.0, keep_neck=True):
    """Random pose in general position; dropped keypoints read (0, 0, 0)"""
    coords = rng.normal(0.0, spread, (NUM_KEYPOINTS, 2)) + rng.uniform(100.0, 600.0, 2)
    conf = rng.uniform(0.2, 1.0, NUM_KEYPOINTS)
    lost = rng.random(NUM_KEYPOINTS) < dropout
    if keep_neck:
        lost[NECK] = False
    coords[lost] = 0.0
    conf[lost] = 0.0
    return Pose.from_array(np.column_stack([coords, conf]), pose_id=pose_id)


def planted(pose, scale, translation, flipped=False, keep=None):
    """Database pose that maps onto pose under x_q = scale * flip(x_d) + t"""
    array = pose.to_array()
    detected = array[:, 2] > 0
    out = np.zeros_like(array)
    out[:, 0] = (array[:, 0] - translation[0]) / scale
    out[:, 1] = (array[:, 1] - translation[1]) / scale
    if flipped:
        out[:, 0] = -out[:, 0]
    out[:, 2] = array[:, 2]
    out[~detected] = 0.0
    if keep is not None:
        dropped = np.ones(NUM_KEYPOINTS, dtype=bool)
        dropped[list(keep)] = False
        out[dropped] = 0.0
    if flipped:
        out = out[MIRROR_PERMUTATION]
    return Pose.from_array(out, pose_id=pose.pose_id)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def cfg():
    return MatchConfig()


@pytest.fixture(scope="session")
def skeleton():
    return load_canonical_skeleton()


@pytest.fixture(scope="session")
def small_bench():
    spec = {
        "n_scenes": 40,
        "n_families": 4,
        "n_copies": 8,
        "n_transfers": 4,
    }
    return generate_synthetic_benchmark(spec, seed=7)
