from .fast_match import FastMatcher, scan_and_shortlist
from .geom_verify import load_canonical_skeleton, rerank, verify_image_pair
from .pipeline import QueryEngine

__all__ = [
    "FastMatcher",
    "scan_and_shortlist",
    "load_canonical_skeleton",
    "rerank",
    "verify_image_pair",
    "QueryEngine",
]
