"""
BODY_25 part map as emitted by the pose detector.
"""

import numpy as np

NUM_KEYPOINTS = 25

PART_NAMES = (
    "Nose", "Neck", "RShoulder", "RElbow", "RWrist", "LShoulder", "LElbow", "LWrist",
    "MidHip", "RHip", "RKnee", "RAnkle", "LHip", "LKnee", "LAnkle", "REye",
    "LEye", "REar", "LEar", "LBigToe", "LSmallToe", "LHeel", "RBigToe", "RSmallToe",
    "RHeel",
)

NOSE = 0
NECK = 1
MID_HIP = 8

# Right/left partners; every other part is its own mirror image.
MIRROR_PAIRS = (
    (2, 5), (3, 6), (4, 7),
    (9, 12), (10, 13), (11, 14),
    (15, 16), (17, 18),
    (19, 22), (20, 23), (21, 24),
)


def _mirror_permutation() -> np.ndarray:
    perm = np.arange(NUM_KEYPOINTS)
    for right, left in MIRROR_PAIRS:
        perm[right], perm[left] = left, right
    return perm


MIRROR_PERMUTATION = _mirror_permutation()

# Connected keypoints, in the detector's own drawing order.
LIMBS = (
    (1, 8), (1, 2), (1, 5), (2, 3), (3, 4), (5, 6), (6, 7),
    (8, 9), (9, 10), (10, 11), (8, 12), (12, 13), (13, 14),
    (1, 0), (0, 15), (15, 17), (0, 16), (16, 18),
    (14, 19), (19, 20), (14, 21), (11, 22), (22, 23), (11, 24),
)
