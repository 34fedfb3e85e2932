"""
Pose distances
==============

Keypoint intersection, neck-rooted normalization, the cosine pose distance p
and its mirror-invariant minimum q. All functions are pure.
"""

from typing import Optional, Sequence, Set, Tuple

import numpy as np

from app.models import MatchConfig, Pose, PoseDistance, RootUndetected
from app.utils.body25 import MIRROR_PERMUTATION, NECK, NUM_KEYPOINTS

# Returned for pairs the distance is undefined on (missing neck, fewer than two
# shared keypoints, zero-length normalized vector).
MAX_DIST = 2.0

_DEFAULT_CONFIG = MatchConfig()


def detected_mask(pose: Pose, cfg: MatchConfig) -> np.ndarray:
    return pose.confidences() > cfg.detection_threshold


def is_eligible(pose: Pose, cfg: MatchConfig) -> bool:
    """Only poses with a detected neck take part in fast matching"""
    return bool(detected_mask(pose, cfg)[NECK])


def common_indices(r: Pose, s: Pose, cfg: MatchConfig) -> Set[int]:
    both = detected_mask(r, cfg) & detected_mask(s, cfg)
    return {int(i) for i in np.flatnonzero(both)}


def root_normalize(r: Pose, idx: Set[int], cfg: Optional[MatchConfig] = None) -> np.ndarray:
    """
    Subtract the neck from the keypoints listed in idx.

    Returns a flat vector of length 2K; every slot outside idx is (0, 0).
    """
    cfg = cfg or _DEFAULT_CONFIG
    if not is_eligible(r, cfg):
        raise RootUndetected(r.pose_id)
    coords = r.coords()
    out = np.zeros((NUM_KEYPOINTS, 2), dtype=np.float64)
    for i in idx:
        out[i] = coords[i] - coords[NECK]
    return out.ravel()


def pose_distance_p(r: Pose, s: Pose, cfg: MatchConfig) -> float:
    """1 - cosine similarity of the root-normalized poses, in [0, 2]"""
    if not (is_eligible(r, cfg) and is_eligible(s, cfg)):
        return MAX_DIST
    idx = common_indices(r, s, cfg)
    if len(idx) < 2:
        return MAX_DIST
    rv = root_normalize(r, idx, cfg)
    sv = root_normalize(s, idx, cfg)
    denom = np.linalg.norm(rv) * np.linalg.norm(sv)
    if denom == 0.0:
        return MAX_DIST
    value = 1.0 - float(np.dot(rv, sv)) / denom
    return min(max(value, 0.0), MAX_DIST)


def swap_sides(s: Pose) -> Pose:
    """Exchange left/right part slots without touching coordinates"""
    array = s.to_array()[MIRROR_PERMUTATION]
    return Pose.from_array(array, pose_id=s.pose_id, eligible=s.eligible)


def mirror_array(array: np.ndarray, detection_threshold: float = 0.0) -> np.ndarray:
    """Mirror a (25, 3) keypoint array: negate x of detected parts, then swap sides"""
    out = np.array(array, dtype=np.float64, copy=True)
    detected = out[:, 2] > detection_threshold
    out[detected, 0] = -out[detected, 0]
    return out[MIRROR_PERMUTATION]


def mirror_pose(s: Pose, cfg: Optional[MatchConfig] = None) -> Pose:
    threshold = (cfg or _DEFAULT_CONFIG).detection_threshold
    return Pose.from_array(mirror_array(s.to_array(), threshold), pose_id=s.pose_id, eligible=s.eligible)


def pose_distance_q(r: Pose, s: Pose, cfg: MatchConfig) -> PoseDistance:
    direct = pose_distance_p(r, s, cfg)
    if not cfg.flip_enabled:
        return PoseDistance(value=direct, flipped=False)
    mirrored = pose_distance_p(r, mirror_pose(s, cfg), cfg)
    if mirrored < direct:
        return PoseDistance(value=mirrored, flipped=True)
    return PoseDistance(value=direct, flipped=False)


def pose_distance_block(
    r_coords: np.ndarray,
    r_mask: np.ndarray,
    s_coords: np.ndarray,
    s_mask: np.ndarray,
) -> np.ndarray:
    """
    Vectorised p of one query pose against a block of database poses.

    r_coords (25, 2), r_mask (25,), s_coords (P, 25, 2), s_mask (P, 25).
    Returns (P,) distances with MAX_DIST for degenerate pairs.
    """
    count = s_coords.shape[0]
    if count == 0:
        return np.zeros(0, dtype=np.float64)
    both = r_mask[None, :] & s_mask
    valid = both[:, NECK] & (both.sum(axis=1) >= 2)

    rc = r_coords - r_coords[NECK]
    sc = s_coords - s_coords[:, NECK:NECK + 1, :]
    rv = np.where(both[..., None], rc[None, :, :], 0.0).reshape(count, -1)
    sv = np.where(both[..., None], sc, 0.0).reshape(count, -1)

    dot = (rv * sv).sum(axis=1)
    denom = np.sqrt((rv * rv).sum(axis=1)) * np.sqrt((sv * sv).sum(axis=1))
    valid &= denom > 0.0

    with np.errstate(divide="ignore", invalid="ignore"):
        value = 1.0 - dot / np.where(valid, denom, 1.0)
    return np.where(valid, np.clip(value, 0.0, MAX_DIST), MAX_DIST)


def q_distance_block(
    r_coords: Sequence[np.ndarray],
    r_masks: Sequence[np.ndarray],
    s_coords: np.ndarray,
    s_mask: np.ndarray,
    s_mirrored: np.ndarray,
    s_mirrored_mask: np.ndarray,
    flip_enabled: bool = True,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    q of several query poses against a packed block, (N, P) values and flip flags.

    s_mirrored / s_mirrored_mask hold the mirrored database poses slot-aligned
    with s_coords / s_mask.
    """
    count = s_coords.shape[0]
    values = np.zeros((len(r_coords), count), dtype=np.float64)
    flipped = np.zeros((len(r_coords), count), dtype=bool)
    for i, (rc, rm) in enumerate(zip(r_coords, r_masks)):
        direct = pose_distance_block(rc, rm, s_coords, s_mask)
        if flip_enabled:
            mirrored = pose_distance_block(rc, rm, s_mirrored, s_mirrored_mask)
            flipped[i] = mirrored < direct
            values[i] = np.where(flipped[i], mirrored, direct)
        else:
            values[i] = direct
    return values, flipped


def pose_distance_matrix(
    query: Sequence[Pose],
    database: Sequence[Pose],
    cfg: MatchConfig,
) -> Tuple[np.ndarray, np.ndarray]:
    """q between every query and database pose as (len(query), len(database)) arrays"""
    shape = (len(database), NUM_KEYPOINTS)
    mirrored = [mirror_array(s.to_array(), cfg.detection_threshold) for s in database]
    return q_distance_block(
        [r.coords() for r in query],
        [detected_mask(r, cfg) for r in query],
        np.array([s.coords() for s in database], dtype=np.float64).reshape(shape + (2,)),
        np.array([detected_mask(s, cfg) for s in database], dtype=bool).reshape(shape),
        np.array([m[:, :2] for m in mirrored], dtype=np.float64).reshape(shape + (2,)),
        np.array([m[:, 2] > cfg.detection_threshold for m in mirrored], dtype=bool).reshape(shape),
        cfg.flip_enabled,
    )
