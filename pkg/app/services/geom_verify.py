"""
Geometric verification
======================

Torso prefilter, least-squares scale+translation(+flip) estimation,
exhaustive two-point RANSAC with a pose-size-relative inlier radius,
inlier re-estimation and cross-figure image scoring.
"""

import logging
import math
import os
import time
from typing import Dict, List, Mapping, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from app.models import (
    CandidatePair,
    CanonicalSkeleton,
    DegenerateSample,
    ImageRecord,
    MalformedFile,
    MatchConfig,
    Pose,
    RankedHit,
    ShortlistEntry,
    SimilarityTransform,
    SKELETON_FORMAT_VERSION,
    ValidatedPair,
    VerifiedLink,
)
from app.utils.body25 import MID_HIP, MIRROR_PERMUTATION, NECK, NUM_KEYPOINTS

DEFAULT_SKELETON_PATH = os.path.join(os.path.dirname(os.path.dirname(__file__)), "data", "canonical_skeleton.txt")

# Every 2-subset of keypoint slots, in lexicographic order; the position in
# this list is the hypothesis index used for tie-breaking.
_PAIR_A, _PAIR_B = np.triu_indices(NUM_KEYPOINTS, k=1)

_logger = logging.getLogger("verify")


def load_canonical_skeleton(path: Optional[str] = None) -> CanonicalSkeleton:
    """
    Read the versioned bone table.

    Format: '#' comments, then a 'format_version N' line, then one
    '<part a> <part b> <length>' row per bone. Lengths are rescaled so that
    the Neck-MidHip bone has length 1.
    """
    path = path or DEFAULT_SKELETON_PATH
    try:
        with open(path, "r", encoding="utf-8") as f:
            lines = f.read().splitlines()
    except OSError as e:
        raise MalformedFile(path, f"cannot read skeleton table: {e}")

    version = None
    bones: List[Tuple[int, int]] = []
    lengths: List[float] = []
    for lineno, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        fields = line.split()
        if version is None:
            if len(fields) != 2 or fields[0] != "format_version":
                raise MalformedFile(path, f"line {lineno}: expected 'format_version N'")
            try:
                version = int(fields[1])
            except ValueError:
                raise MalformedFile(path, f"line {lineno}: bad format_version {fields[1]!r}")
            if version != SKELETON_FORMAT_VERSION:
                raise MalformedFile(path, f"unsupported skeleton format_version {version}")
            continue
        if len(fields) != 3:
            raise MalformedFile(path, f"line {lineno}: expected '<a> <b> <length>'")
        try:
            bones.append((int(fields[0]), int(fields[1])))
            lengths.append(float(fields[2]))
        except ValueError:
            raise MalformedFile(path, f"line {lineno}: non-numeric field")

    if version is None:
        raise MalformedFile(path, "missing format_version line")
    torso = [length for bone, length in zip(bones, lengths) if set(bone) == {NECK, MID_HIP}]
    if not torso or torso[0] <= 0:
        raise MalformedFile(path, "table must contain a positive Neck-MidHip bone")
    try:
        return CanonicalSkeleton(
            bones=bones,
            canonical_lengths=[length / torso[0] for length in lengths],
            format_version=version,
        )
    except ValueError as e:
        raise MalformedFile(path, str(e))


class _PoseArrays(NamedTuple):
    """A pose as plain arrays, with the side-swapped view used by flipped hypotheses"""
    coords: np.ndarray
    mask: np.ndarray
    swapped: np.ndarray
    swapped_mask: np.ndarray

    def branch(self, flipped: bool) -> Tuple[np.ndarray, np.ndarray]:
        if flipped:
            return self.swapped, self.swapped_mask
        return self.coords, self.mask


def _pose_arrays(pose: Pose, cfg: MatchConfig) -> _PoseArrays:
    array = pose.to_array()
    mask = array[:, 2] > cfg.detection_threshold
    return _PoseArrays(array[:, :2], mask, array[MIRROR_PERMUTATION, :2], mask[MIRROR_PERMUTATION])


def _torso_angle_of(coords: np.ndarray, mask: np.ndarray) -> Optional[float]:
    if not (mask[NECK] and mask[MID_HIP]):
        return None
    dx, dy = coords[MID_HIP] - coords[NECK]
    if dx == 0.0 and dy == 0.0:
        return None
    return math.atan2(dx, dy)


def _angles_compatible(a: Optional[float], b: Optional[float], flipped: bool, limit: float) -> bool:
    if a is None or b is None:
        return True
    if flipped:
        b = -b
    return abs(math.remainder(a - b, 2.0 * math.pi)) <= limit


def torso_angle(r: Pose, cfg: Optional[MatchConfig] = None) -> Optional[float]:
    """
    Angle of (mid-hip - neck) against the downward image axis, in (-pi, pi].

    None when either torso keypoint is undetected.
    """
    arrays = _pose_arrays(r, cfg or MatchConfig())
    return _torso_angle_of(arrays.coords, arrays.mask)


def torso_prefilter(qr: Pose, ds: Pose, flipped: bool, cfg: MatchConfig) -> bool:
    return _angles_compatible(torso_angle(qr, cfg), torso_angle(ds, cfg), flipped, cfg.torso_angle_max)


def estimate_transform_ls(corr: Sequence[Tuple[Sequence[float], Sequence[float]]], flipped: bool) -> SimilarityTransform:
    """
    Least-squares scale and translation mapping database points onto query points.

    corr holds (query_point, db_point) pairs; with flipped the database x
    coordinates are negated before fitting.
    """
    if len(corr) < 2:
        raise DegenerateSample(f"need at least 2 correspondences, got {len(corr)}")
    query = np.array([c[0] for c in corr], dtype=np.float64).reshape(-1, 2)
    db = np.array([c[1] for c in corr], dtype=np.float64).reshape(-1, 2)
    if flipped:
        db[:, 0] = -db[:, 0]

    q_mean = query.mean(axis=0)
    d_mean = db.mean(axis=0)
    d_centered = db - d_mean
    denom = float((d_centered * d_centered).sum())
    if denom == 0.0:
        raise DegenerateSample("database points coincide")
    scale = float((d_centered * (query - q_mean)).sum()) / denom
    if not scale > 0.0:
        raise DegenerateSample(f"non-positive scale {scale:.6g}")
    tx, ty = q_mean - scale * d_mean
    return SimilarityTransform(scale=scale, translation=(float(tx), float(ty)), flipped=flipped)


def _size_of(coords: np.ndarray, mask: np.ndarray, skel: CanonicalSkeleton) -> Optional[float]:
    bones = np.asarray(skel.bones, dtype=np.int64)
    a, b = bones[:, 0], bones[:, 1]
    observed = mask[a] & mask[b]
    if not observed.any():
        return None
    lengths = np.asarray(skel.canonical_lengths, dtype=np.float64)[observed]
    ratios = np.sort(np.linalg.norm(coords[a[observed]] - coords[b[observed]], axis=1) / lengths)
    size = float(ratios[(len(ratios) - 1) // 2])
    return size if size > 0.0 else None


def relative_pose_size(r: Pose, skel: CanonicalSkeleton, cfg: Optional[MatchConfig] = None) -> Optional[float]:
    """Lower median of observed/canonical bone length ratios over fully detected bones"""
    arrays = _pose_arrays(r, cfg or MatchConfig())
    return _size_of(arrays.coords, arrays.mask, skel)


def _inliers(
    transform: SimilarityTransform,
    q: _PoseArrays,
    d: _PoseArrays,
    radius: float,
) -> Tuple[np.ndarray, float]:
    d_coords, d_mask = d.branch(transform.flipped)
    residual = np.linalg.norm(transform.apply(d_coords) - q.coords, axis=1)
    inliers = q.mask & d_mask & (residual <= radius)
    return np.flatnonzero(inliers), float(residual[inliers].sum())


def count_inliers(
    transform: SimilarityTransform,
    qr: Pose,
    ds: Pose,
    radius: float,
    cfg: MatchConfig,
) -> Tuple[List[int], float]:
    """Keypoint slots whose projected database position lies within radius, and their residual sum"""
    slots, residual = _inliers(transform, _pose_arrays(qr, cfg), _pose_arrays(ds, cfg), radius)
    return [int(i) for i in slots], residual


def _hypotheses(q: np.ndarray, q_mask: np.ndarray, d_raw: np.ndarray, d_mask: np.ndarray, flipped: bool, radius: float):
    """Fit and score all two-point hypotheses of one flip branch at once"""
    d = d_raw.copy()
    if flipped:
        d[:, 0] = -d[:, 0]
    both = q_mask & d_mask
    a, b = _PAIR_A, _PAIR_B
    usable = both[a] & both[b]

    dd = d[a] - d[b]
    dq = q[a] - q[b]
    denom = (dd * dd).sum(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        scale = np.where(denom > 0.0, (dd * dq).sum(axis=1) / np.where(denom > 0.0, denom, 1.0), 0.0)
    usable &= (denom > 0.0) & (scale > 0.0)
    translation = 0.5 * (q[a] + q[b]) - scale[:, None] * 0.5 * (d[a] + d[b])

    err = (((scale[:, None] * d[a] + translation - q[a]) ** 2).sum(axis=1)
           + ((scale[:, None] * d[b] + translation - q[b]) ** 2).sum(axis=1))

    projected = scale[:, None, None] * d[None, :, :] + translation[:, None, :]
    residual = np.linalg.norm(projected - q[None, :, :], axis=2)
    inliers = (residual <= radius) & both[None, :]
    counts = inliers.sum(axis=1)
    residual_sum = np.where(inliers, residual, 0.0).sum(axis=1)
    return usable, scale, translation, err, counts, residual_sum


def _ransac(
    q: _PoseArrays,
    d: _PoseArrays,
    radius: float,
    cfg: MatchConfig,
) -> Optional[Tuple[SimilarityTransform, List[int]]]:
    branches = [False, True] if cfg.flip_enabled else [False]
    fits = {}
    for flipped in branches:
        d_raw, d_mask = d.branch(flipped)
        fits[flipped] = _hypotheses(q.coords, q.mask, d_raw, d_mask, flipped, radius)

    usable0, scale0, trans0, err0, counts0, resid0 = fits[False]
    usable1, scale1, trans1, err1, counts1, resid1 = fits.get(True, fits[False])
    if cfg.flip_enabled:
        # the flip option with the smaller error on its two correspondences wins
        use_flip = usable1 & (~usable0 | (err1 < err0))
    else:
        use_flip = np.zeros(usable0.shape, dtype=bool)

    valid = usable0 | use_flip
    if not valid.any():
        return None
    counts = np.where(use_flip, counts1, counts0)
    residual_sum = np.where(use_flip, resid1, resid0)

    candidates = np.flatnonzero(valid)
    order = np.lexsort((candidates, residual_sum[candidates], -counts[candidates]))
    best = int(candidates[order[0]])
    flipped = bool(use_flip[best])
    scale = scale1[best] if flipped else scale0[best]
    trans = trans1[best] if flipped else trans0[best]
    transform = SimilarityTransform(
        scale=float(scale), translation=(float(trans[0]), float(trans[1])), flipped=flipped
    )
    inliers, _ = _inliers(transform, q, d, radius)

    if len(inliers) >= 2:
        d_raw, _ = d.branch(flipped)
        try:
            refit = estimate_transform_ls([(q.coords[i], d_raw[i]) for i in inliers], flipped)
        except DegenerateSample:
            refit = None
        if refit is not None:
            refit_inliers, _ = _inliers(refit, q, d, radius)
            if len(refit_inliers) >= len(inliers):
                transform, inliers = refit, refit_inliers

    if len(inliers) < cfg.min_inliers:
        return None
    return transform, [int(i) for i in inliers]


def ransac_verify_pair(
    qr: Pose,
    ds: Pose,
    skel: CanonicalSkeleton,
    cfg: MatchConfig,
) -> Optional[Tuple[SimilarityTransform, List[int]]]:
    """
    Best transform over every two-keypoint hypothesis, refit on its inliers.

    Returns (transform, inlier slots) or None when the pair does not reach
    the inlier quota.
    """
    q = _pose_arrays(qr, cfg)
    size = _size_of(q.coords, q.mask, skel)
    if size is None:
        return None
    return _ransac(q, _pose_arrays(ds, cfg), cfg.inlier_dist_factor * size, cfg)


def verify_image_pair(
    q_img: ImageRecord,
    d_img: ImageRecord,
    candidates: Sequence[CandidatePair],
    skel: CanonicalSkeleton,
    cfg: MatchConfig,
) -> Optional[VerifiedLink]:
    """
    Validate candidate pose pairs, then score each validated transform by
    the query keypoints it explains across all validated pairs.

    A query figure counts once per transform, through whichever of its
    validated database partners agrees with the transform best.
    """
    start = time.perf_counter()
    q_poses = {p.pose_id: p for p in q_img.poses}
    d_poses = {p.pose_id: p for p in d_img.poses}
    arrays: Dict[Tuple[str, int], _PoseArrays] = {}
    radii: Dict[int, Optional[float]] = {}

    def arrays_of(side: str, pose: Pose) -> _PoseArrays:
        key = (side, pose.pose_id)
        if key not in arrays:
            arrays[key] = _pose_arrays(pose, cfg)
        return arrays[key]

    def radius_of(pose_id: int) -> Optional[float]:
        if pose_id not in radii:
            q = arrays_of("q", q_poses[pose_id])
            size = _size_of(q.coords, q.mask, skel)
            radii[pose_id] = None if size is None else cfg.inlier_dist_factor * size
        return radii[pose_id]

    validated: List[ValidatedPair] = []
    for cand in sorted(candidates, key=lambda c: (c.query_pose_id, c.db_pose_id)):
        if cand.q_value > cfg.pose_dist_max:
            continue
        qr, ds = q_poses.get(cand.query_pose_id), d_poses.get(cand.db_pose_id)
        if qr is None or ds is None:
            continue
        q, d = arrays_of("q", qr), arrays_of("d", ds)
        if not _angles_compatible(
            _torso_angle_of(q.coords, q.mask), _torso_angle_of(d.coords, d.mask), cand.flipped, cfg.torso_angle_max
        ):
            continue
        radius = radius_of(cand.query_pose_id)
        if radius is None:
            continue
        result = _ransac(q, d, radius, cfg)
        if result is None:
            continue
        transform, inliers = result
        validated.append(ValidatedPair(
            query_pose_id=cand.query_pose_id,
            db_pose_id=cand.db_pose_id,
            inlier_count=len(inliers),
            transform=transform,
        ))

    if not validated:
        if _logger:
            _logger.debug(
                "verify query=%s db=%s candidates=%d validated=0 duration_ms=%.1f",
                q_img.image_id, d_img.image_id, len(candidates), (time.perf_counter() - start) * 1000,
            )
        return None

    best_score, best_transform = -1, None
    for pair in validated:
        per_figure: Dict[int, int] = {}
        for other in validated:
            slots, _ = _inliers(
                pair.transform,
                arrays[("q", other.query_pose_id)],
                arrays[("d", other.db_pose_id)],
                radii[other.query_pose_id],
            )
            per_figure[other.query_pose_id] = max(per_figure.get(other.query_pose_id, 0), len(slots))
        total = sum(per_figure.values())
        if total > best_score:
            best_score, best_transform = total, pair.transform

    if _logger:
        _logger.debug(
            "verify query=%s db=%s candidates=%d validated=%d score=%d duration_ms=%.1f",
            q_img.image_id, d_img.image_id, len(candidates), len(validated), best_score,
            (time.perf_counter() - start) * 1000,
        )
    return VerifiedLink(
        query_image_id=q_img.image_id,
        db_image_id=d_img.image_id,
        score=best_score,
        best_transform=best_transform,
        validated_pairs=validated,
    )


def rerank(shortlist: Sequence[ShortlistEntry], verified: Mapping[str, VerifiedLink]) -> List[RankedHit]:
    """Verified images by descending score, then the unverified rest in fast-match order"""

    def distance(entry: ShortlistEntry) -> Optional[float]:
        return entry.image_distance if math.isfinite(entry.image_distance) else None

    passed = [e for e in shortlist if e.image_id in verified]
    passed.sort(key=lambda e: (-verified[e.image_id].score, e.image_distance, e.image_id))
    hits = [
        RankedHit(
            image_id=e.image_id,
            image_distance=distance(e),
            score=verified[e.image_id].score,
            transform=verified[e.image_id].best_transform,
            validated_pairs=verified[e.image_id].validated_pairs,
        )
        for e in passed
    ]
    hits.extend(
        RankedHit(image_id=e.image_id, image_distance=distance(e))
        for e in shortlist
        if e.image_id not in verified
    )
    return hits
