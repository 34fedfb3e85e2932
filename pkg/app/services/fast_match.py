"""
Fast matching
=============

Image-level distances built from the mirror-invariant pose distance, an
exhaustive scan of the index and shortlist construction with tentative pose
correspondences.
"""

import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from typing import List, Optional, Sequence, Tuple

import numpy as np

from app.models import (
    CandidatePair,
    ImageMetric,
    ImageRecord,
    MatchConfig,
    PoseIndex,
    ShortlistEntry,
)
from app.services.pose_core import (
    detected_mask,
    is_eligible,
    mirror_array,
    pose_distance_q,
    q_distance_block,
)
from app.utils.body25 import NUM_KEYPOINTS


def image_distance_min(q_img: ImageRecord, d_img: ImageRecord, cfg: MatchConfig) -> float:
    """Smallest q over all cross pose pairs; +inf when either side has no eligible pose"""
    q_poses = [p for p in q_img.poses if is_eligible(p, cfg)]
    d_poses = [p for p in d_img.poses if is_eligible(p, cfg)]
    if not q_poses or not d_poses:
        return math.inf
    return min(pose_distance_q(r, s, cfg).value for r in q_poses for s in d_poses)


def image_distance_t(q_img: ImageRecord, d_img: ImageRecord, cfg: MatchConfig) -> float:
    """
    Sum over query poses of min(t, best q against the database image).

    Asymmetric: the first argument is always the query.
    """
    q_poses = [p for p in q_img.poses if is_eligible(p, cfg)]
    if not q_poses:
        return math.inf
    d_poses = [p for p in d_img.poses if is_eligible(p, cfg)]
    total = 0.0
    for r in q_poses:
        best = min((pose_distance_q(r, s, cfg).value for s in d_poses), default=cfg.t)
        total += min(cfg.t, best)
    return total


class PackedPoses:
    """Eligible database poses as contiguous arrays, grouped per record"""

    def __init__(self, records: Sequence[ImageRecord], cfg: MatchConfig):
        coords, masks, mirrored, mirrored_masks, pose_ids = [], [], [], [], []
        offsets = [0]
        for record in records:
            for pose in record.poses:
                if not is_eligible(pose, cfg):
                    continue
                array = pose.to_array()
                coords.append(array[:, :2])
                masks.append(detected_mask(pose, cfg))
                flipped = mirror_array(array, cfg.detection_threshold)
                mirrored.append(flipped[:, :2])
                mirrored_masks.append(flipped[:, 2] > cfg.detection_threshold)
                pose_ids.append(pose.pose_id)
            offsets.append(len(pose_ids))

        shape = (len(pose_ids), NUM_KEYPOINTS)
        self.coords = np.array(coords, dtype=np.float64).reshape(shape + (2,))
        self.masks = np.array(masks, dtype=bool).reshape(shape)
        self.mirrored = np.array(mirrored, dtype=np.float64).reshape(shape + (2,))
        self.mirrored_masks = np.array(mirrored_masks, dtype=bool).reshape(shape)
        self.pose_ids = np.array(pose_ids, dtype=np.int64)
        self.offsets = np.array(offsets, dtype=np.int64)

    @property
    def pose_count(self) -> int:
        return int(self.pose_ids.shape[0])


class FastMatcher:
    """Exhaustive pose-distance scan over an immutable index"""

    def __init__(self, index: PoseIndex, cfg: MatchConfig):
        self.index = index
        self.cfg = cfg
        self._records = index.records
        self._packed = PackedPoses(index.records, cfg)
        size = cfg.scan_block_size
        self._blocks = [
            (start, min(start + size, len(self._records)))
            for start in range(0, len(self._records), size)
        ]
        self._logger = logging.getLogger("scan")

    def rank_all(self, q_img: ImageRecord, metric: Optional[ImageMetric] = None) -> List[ShortlistEntry]:
        """Every database image except the query, ascending by image distance then image_id"""
        metric = ImageMetric(metric or self.cfg.metric)
        start = time.perf_counter()

        query = [p for p in q_img.poses if is_eligible(p, self.cfg)]
        q_coords = [p.coords() for p in query]
        q_masks = [detected_mask(p, self.cfg) for p in query]
        q_ids = [p.pose_id for p in query]
        job = (q_img.image_id, q_coords, q_masks, q_ids, metric)

        if self.cfg.workers > 1 and len(self._blocks) > 1:
            with ThreadPoolExecutor(max_workers=self.cfg.workers) as executor:
                parts = list(executor.map(lambda block: self._scan_block(job, block), self._blocks))
        else:
            parts = [self._scan_block(job, block) for block in self._blocks]

        entries = [entry for part in parts for entry in part]
        entries.sort(key=lambda e: (e.image_distance, e.image_id))

        if self._logger:
            self._logger.debug(
                "scan query=%s metric=%s images=%d poses=%d duration_ms=%.1f",
                q_img.image_id,
                metric.value,
                len(entries),
                self._packed.pose_count,
                (time.perf_counter() - start) * 1000,
            )
        return entries

    def shortlist(self, q_img: ImageRecord, metric: Optional[ImageMetric] = None) -> List[ShortlistEntry]:
        return self.rank_all(q_img, metric)[: self.cfg.shortlist_len]

    def _scan_block(self, job, block: Tuple[int, int]) -> List[ShortlistEntry]:
        query_id, q_coords, q_masks, q_ids, metric = job
        first, last = block
        packed = self._packed
        lo, hi = int(packed.offsets[first]), int(packed.offsets[last])

        q_matrix, f_matrix = q_distance_block(
            q_coords,
            q_masks,
            packed.coords[lo:hi],
            packed.masks[lo:hi],
            packed.mirrored[lo:hi],
            packed.mirrored_masks[lo:hi],
            self.cfg.flip_enabled,
        )

        entries = []
        for position in range(first, last):
            record = self._records[position]
            if record.image_id == query_id:
                continue
            a = int(packed.offsets[position]) - lo
            b = int(packed.offsets[position + 1]) - lo
            block_q = q_matrix[:, a:b]
            distance = self._image_distance(block_q, metric)

            candidates = []
            for i, j in np.argwhere(block_q <= self.cfg.pose_dist_max):
                candidates.append(CandidatePair(
                    query_pose_id=q_ids[i],
                    db_pose_id=int(packed.pose_ids[lo + a + j]),
                    q_value=float(block_q[i, j]),
                    flipped=bool(f_matrix[i, a + j]),
                ))
            entries.append(ShortlistEntry(
                image_id=record.image_id,
                image_distance=distance,
                candidates=candidates,
            ))
        return entries

    def _image_distance(self, block_q: np.ndarray, metric: ImageMetric) -> float:
        n_query, n_db = block_q.shape
        if n_query == 0:
            return math.inf
        if metric == ImageMetric.MIN:
            return float(block_q.min()) if n_db else math.inf
        if n_db == 0:
            return float(n_query * self.cfg.t)
        return float(np.minimum(self.cfg.t, block_q.min(axis=1)).sum())


def scan_and_shortlist(
    q_img: ImageRecord,
    index: PoseIndex,
    cfg: MatchConfig,
    metric: Optional[ImageMetric] = None,
) -> List[ShortlistEntry]:
    """Rank the index against one query image and keep the best l entries"""
    return FastMatcher(index, cfg).shortlist(q_img, metric)
