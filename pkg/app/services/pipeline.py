import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from typing import Dict, List, Optional, Tuple

from app.models import (
    CanonicalSkeleton,
    Edge,
    ImageMetric,
    ImageRecord,
    MatchConfig,
    PoseIndex,
    RankedHit,
    ShortlistEntry,
    VerifiedLink,
)
from app.services.fast_match import FastMatcher
from app.services.geom_verify import load_canonical_skeleton, rerank, verify_image_pair


class QueryEngine:
    """
    Fast matching followed by geometric verification of the shortlist.

    One engine serves any number of queries against the same index; the
    packed pose arrays are built once.
    """

    def __init__(self, index: PoseIndex, cfg: MatchConfig, skeleton: Optional[CanonicalSkeleton] = None):
        self.index = index
        self.cfg = cfg
        self.skeleton = skeleton or load_canonical_skeleton()
        self.matcher = FastMatcher(index, cfg)
        self._by_id = index.by_id()
        self._logger = logging.getLogger("pipeline")

    def match_only(self, q_img: ImageRecord, metric: Optional[ImageMetric] = None) -> List[RankedHit]:
        """Full fast-match ranking, no verification"""
        return [self._unverified(entry) for entry in self.matcher.rank_all(q_img, metric)]

    def verify_shortlist(self, q_img: ImageRecord, shortlist: List[ShortlistEntry]) -> Dict[str, VerifiedLink]:
        def verify(entry: ShortlistEntry) -> Optional[VerifiedLink]:
            if not entry.candidates:
                return None
            return verify_image_pair(q_img, self._by_id[entry.image_id], entry.candidates, self.skeleton, self.cfg)

        if self.cfg.workers > 1 and len(shortlist) > 1:
            with ThreadPoolExecutor(max_workers=self.cfg.workers) as executor:
                links = list(executor.map(verify, shortlist))
        else:
            links = [verify(entry) for entry in shortlist]
        return {link.db_image_id: link for link in links if link is not None}

    def query(
        self,
        q_img: ImageRecord,
        metric: Optional[ImageMetric] = None,
        verify: Optional[bool] = None,
    ) -> Tuple[List[RankedHit], Dict[str, float]]:
        """
        Ranked hits for one query image and the stage timings in milliseconds.

        Verified queries return the reranked shortlist; match-only queries
        return the whole fast-match ranking.
        """
        verify = self.cfg.verify if verify is None else verify
        timings = {}
        start = time.perf_counter()
        ranking = self.matcher.rank_all(q_img, metric)
        timings["scan_ms"] = (time.perf_counter() - start) * 1000
        if not verify:
            return [self._unverified(entry) for entry in ranking], timings

        shortlist = ranking[: self.cfg.shortlist_len]
        start = time.perf_counter()
        verified = self.verify_shortlist(q_img, shortlist)
        timings["verify_ms"] = (time.perf_counter() - start) * 1000

        if self._logger:
            self._logger.debug(
                "query id=%s shortlist=%d verified=%d scan_ms=%.1f verify_ms=%.1f",
                q_img.image_id, len(shortlist), len(verified), timings["scan_ms"], timings["verify_ms"],
            )
        return rerank(shortlist, verified), timings

    def query_both(
        self,
        q_img: ImageRecord,
        metric: Optional[ImageMetric] = None,
    ) -> Tuple[List[RankedHit], List[RankedHit]]:
        """Match-only and verified rankings from a single scan"""
        ranking = self.matcher.rank_all(q_img, metric)
        shortlist = ranking[: self.cfg.shortlist_len]
        verified = self.verify_shortlist(q_img, shortlist)
        return [self._unverified(entry) for entry in ranking], rerank(shortlist, verified)

    def link_all(self, metric: Optional[ImageMetric] = None) -> List[Edge]:
        """Query every record against the rest and keep the verified links as edges"""
        start = time.perf_counter()
        edges = []
        for record in self.index.records:
            hits, _ = self.query(record, metric, verify=True)
            edges.extend(
                Edge(query_id=record.image_id, target_id=hit.image_id, score=hit.score, transform=hit.transform)
                for hit in hits
                if hit.score is not None and hit.score > 0
            )
        if self._logger:
            self._logger.info(
                "link_all records=%d edges=%d duration_ms=%.1f",
                len(self.index.records), len(edges), (time.perf_counter() - start) * 1000,
            )
        return edges

    @staticmethod
    def _unverified(entry: ShortlistEntry) -> RankedHit:
        distance = entry.image_distance if math.isfinite(entry.image_distance) else None
        return RankedHit(image_id=entry.image_id, image_distance=distance)
