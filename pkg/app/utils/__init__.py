from .body25 import (
    NUM_KEYPOINTS,
    PART_NAMES,
    NOSE,
    NECK,
    MID_HIP,
    MIRROR_PAIRS,
    MIRROR_PERMUTATION,
    LIMBS,
)

__all__ = [
    "NUM_KEYPOINTS",
    "PART_NAMES",
    "NOSE",
    "NECK",
    "MID_HIP",
    "MIRROR_PAIRS",
    "MIRROR_PERMUTATION",
    "LIMBS",
]
