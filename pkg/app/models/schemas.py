import math
from enum import Enum
from typing import Dict, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from app.utils.body25 import NUM_KEYPOINTS

INDEX_FORMAT_VERSION = 1
SKELETON_FORMAT_VERSION = 1
RESULTS_SCHEMA_VERSION = 1


class ImageMetric(str, Enum):
    MIN = "min"
    T = "t"


class LinkLabel(str, Enum):
    COPY = "copy"
    COMPOSITION_TRANSFER = "composition_transfer"


class Scenario(str, Enum):
    ALL_POSITIVE = "all_positive"
    COPY_POSITIVE = "copy_positive"
    TRANSFER_POSITIVE = "transfer_positive"


class Keypoint(BaseModel):
    model_config = ConfigDict(frozen=True)

    x: float = Field(..., allow_inf_nan=False, description="Pixel column, +x to the right")
    y: float = Field(..., allow_inf_nan=False, description="Pixel row, +y downward")
    confidence: float = Field(..., ge=0.0, le=1.0, description="Detector confidence in [0, 1]")


class Pose(BaseModel):
    """One detected human figure: exactly 25 keypoints in BODY_25 order"""
    model_config = ConfigDict(frozen=True)

    pose_id: int = Field(..., ge=0, description="Ordinal of the pose within its image")
    keypoints: List[Keypoint] = Field(
        ...,
        min_length=NUM_KEYPOINTS,
        max_length=NUM_KEYPOINTS,
        description="Keypoints index-aligned to the detector part map"
    )
    eligible: Optional[bool] = Field(
        None,
        description="Whether the pose can take part in fast matching (set when the index is built)"
    )

    def coords(self) -> np.ndarray:
        return np.array([[k.x, k.y] for k in self.keypoints], dtype=np.float64)

    def confidences(self) -> np.ndarray:
        return np.array([k.confidence for k in self.keypoints], dtype=np.float64)

    def to_array(self) -> np.ndarray:
        """(25, 3) array of x, y, confidence"""
        return np.array([[k.x, k.y, k.confidence] for k in self.keypoints], dtype=np.float64)

    @classmethod
    def from_array(cls, array, pose_id: int = 0, eligible: Optional[bool] = None) -> "Pose":
        array = np.asarray(array, dtype=np.float64).reshape(-1, 3)
        return cls(
            pose_id=pose_id,
            keypoints=[Keypoint(x=float(x), y=float(y), confidence=float(c)) for x, y, c in array],
            eligible=eligible,
        )


class PoseDistance(BaseModel):
    model_config = ConfigDict(frozen=True)

    value: float = Field(..., ge=0.0, le=2.0, description="Mirror-invariant cosine pose distance")
    flipped: bool = Field(..., description="Whether the mirrored database pose achieved the minimum")


class MatchConfig(BaseModel):
    """Every tunable of matching, verification and evaluation"""
    model_config = ConfigDict(frozen=True)

    detection_threshold: float = Field(
        0.0, ge=0.0, lt=1.0,
        description="A keypoint is detected iff its confidence is strictly above this value"
    )
    t: float = Field(0.05, gt=0.0, description="Non-match penalty of the clipped-sum image distance")
    pose_dist_max: float = Field(0.1, gt=0.0, description="Pose pairs above this distance are not verified")
    torso_angle_max: float = Field(0.4, gt=0.0, description="Maximum torso angle difference in radians")
    shortlist_len: int = Field(50, ge=1, description="Number of images forwarded to verification")
    min_inlier_frac: float = Field(
        0.25, gt=0.0, le=1.0,
        description="Fraction of all keypoints that must be inliers for a pose pair to validate"
    )
    inlier_dist_factor: float = Field(
        0.25, gt=0.0,
        description="Inlier radius in units of the query pose's relative size"
    )
    flip_enabled: bool = Field(True, description="Consider horizontally mirrored matches")
    metric: ImageMetric = Field(ImageMetric.T, description="Image distance used for the shortlist")
    verify: bool = Field(True, description="Run geometric verification on the shortlist")
    workers: int = Field(1, ge=1, description="Worker threads for scanning and verification")
    scan_block_size: int = Field(
        64, ge=1,
        description="Database images per scan block; fixed so results do not depend on workers"
    )
    strict_precision_denominator: bool = Field(
        True,
        description="P@k divides by k even when fewer than k items remain after ignore-removal"
    )

    @property
    def min_inliers(self) -> int:
        return max(1, math.ceil(self.min_inlier_frac * NUM_KEYPOINTS - 1e-9))


class ImageRecord(BaseModel):
    model_config = ConfigDict(frozen=True)

    image_id: str = Field(..., min_length=1, description="Unique identifier of the artwork")
    poses: List[Pose] = Field(default_factory=list, description="Detected poses; may be empty")
    source_path: str = Field("", description="Provenance of the keypoints")


class PoseIndex(BaseModel):
    """Immutable searchable collection of image records"""
    model_config = ConfigDict(frozen=True)

    records: List[ImageRecord] = Field(default_factory=list)
    config_fingerprint: str = Field(..., description="Hash of the config fields affecting eligibility")
    format_version: int = Field(INDEX_FORMAT_VERSION)

    @model_validator(mode="after")
    def _unique_ids(self):
        seen = set()
        for record in self.records:
            if record.image_id in seen:
                raise ValueError(f"duplicate image_id {record.image_id}")
            seen.add(record.image_id)
        return self

    def image_ids(self) -> List[str]:
        return [r.image_id for r in self.records]

    def by_id(self) -> Dict[str, ImageRecord]:
        return {r.image_id: r for r in self.records}


class ManifestEntry(BaseModel):
    model_config = ConfigDict(frozen=True)

    image_id: str = Field(..., min_length=1)
    keypoints_path: str = Field(..., min_length=1, description="Detector JSON file for this image")
    image_path: Optional[str] = Field(None, description="Artwork image, used by reports only")


class CandidatePair(BaseModel):
    model_config = ConfigDict(frozen=True)

    query_pose_id: int
    db_pose_id: int
    q_value: float
    flipped: bool


class ShortlistEntry(BaseModel):
    model_config = ConfigDict(frozen=True)

    image_id: str
    image_distance: float
    candidates: List[CandidatePair] = Field(
        default_factory=list,
        description="Tentative pose correspondences with q at most pose_dist_max"
    )


class SimilarityTransform(BaseModel):
    """Maps database-image coordinates to query-image coordinates: x_q = scale * flip(x_d) + t"""
    model_config = ConfigDict(frozen=True)

    scale: float = Field(..., gt=0.0)
    translation: Tuple[float, float]
    flipped: bool = False

    def apply(self, points) -> np.ndarray:
        points = np.asarray(points, dtype=np.float64).reshape(-1, 2)
        xs = -points[:, 0] if self.flipped else points[:, 0]
        return np.stack(
            [self.scale * xs + self.translation[0], self.scale * points[:, 1] + self.translation[1]],
            axis=1,
        )


class CanonicalSkeleton(BaseModel):
    model_config = ConfigDict(frozen=True)

    bones: List[Tuple[int, int]]
    canonical_lengths: List[float]
    format_version: int = SKELETON_FORMAT_VERSION

    @model_validator(mode="after")
    def _check_bones(self):
        if len(self.bones) != len(self.canonical_lengths):
            raise ValueError("every bone needs exactly one canonical length")
        if not self.bones:
            raise ValueError("skeleton has no bones")
        for (a, b), length in zip(self.bones, self.canonical_lengths):
            if a == b or not (0 <= a < NUM_KEYPOINTS and 0 <= b < NUM_KEYPOINTS):
                raise ValueError(f"invalid bone ({a}, {b})")
            if not length > 0:
                raise ValueError(f"bone ({a}, {b}) has non-positive length {length}")
        return self


class ValidatedPair(BaseModel):
    model_config = ConfigDict(frozen=True)

    query_pose_id: int
    db_pose_id: int
    inlier_count: int = Field(..., ge=0)
    transform: SimilarityTransform


class VerifiedLink(BaseModel):
    model_config = ConfigDict(frozen=True)

    query_image_id: str
    db_image_id: str
    score: int = Field(..., ge=0, description="Keypoints consistent with the best single transform")
    best_transform: SimilarityTransform
    validated_pairs: List[ValidatedPair]


class RankedHit(BaseModel):
    image_id: str
    image_distance: Optional[float] = Field(None, description="Fast-match distance; null when infinite")
    score: Optional[int] = Field(None, description="Verification score; null when not verified")
    transform: Optional[SimilarityTransform] = None
    validated_pairs: List[ValidatedPair] = Field(default_factory=list)


class GroundTruthLink(BaseModel):
    """Undirected labeled link, stored with image_id_a < image_id_b"""
    model_config = ConfigDict(frozen=True)

    image_id_a: str = Field(..., min_length=1)
    image_id_b: str = Field(..., min_length=1)
    label: LinkLabel

    @model_validator(mode="before")
    @classmethod
    def _canonical_order(cls, data):
        if isinstance(data, dict):
            a, b = data.get("image_id_a"), data.get("image_id_b")
            if isinstance(a, str) and isinstance(b, str) and b < a:
                data = {**data, "image_id_a": b, "image_id_b": a}
        return data

    @model_validator(mode="after")
    def _no_self_link(self):
        if self.image_id_a == self.image_id_b:
            raise ValueError(f"self-link on {self.image_id_a}")
        return self

    def other(self, image_id: str) -> Optional[str]:
        if image_id == self.image_id_a:
            return self.image_id_b
        if image_id == self.image_id_b:
            return self.image_id_a
        return None


class QueryPrecision(BaseModel):
    query_id: str
    positives: int = Field(..., ge=0)
    contributing: bool = Field(..., description="False when the query has no positives in this scenario")
    precision: Dict[int, float] = Field(default_factory=dict)


class EvalReport(BaseModel):
    scenario: Scenario
    method: Optional[str] = Field(None, description="e.g. 'dist_t verified'")
    ks: List[int] = Field(default_factory=lambda: [1, 2, 5, 10, 50])
    mp_at: Dict[int, float] = Field(default_factory=dict, description="Mean precision per rank")
    per_query: List[QueryPrecision] = Field(default_factory=list)
    query_count: int = Field(0, ge=0, description="Queries contributing to the mean")
    degenerate: bool = Field(False, description="True when no query contributes")


class SyntheticSpec(BaseModel):
    """Generator parameters of the synthetic benchmark"""
    model_config = ConfigDict(frozen=True)

    n_scenes: int = Field(200, ge=1)
    min_figures: int = Field(1, ge=1)
    max_figures: int = Field(4, ge=1)
    n_families: int = Field(10, ge=1, description="Base scenes that receive planted copies/transfers")
    n_copies: int = Field(50, ge=0)
    n_transfers: int = Field(30, ge=0)
    flip_probability: float = Field(0.5, ge=0.0, le=1.0)
    noise_sigma: float = Field(0.01, ge=0.0, description="Keypoint noise as a fraction of pose size")
    dropout: float = Field(0.1, ge=0.0, lt=1.0, description="Probability that a keypoint goes undetected")
    protect_root: bool = Field(True, description="Never drop the neck of planted poses")
    scale_range: Tuple[float, float] = (0.5, 2.0)
    translation_max: float = Field(200.0, ge=0.0)
    canvas: Tuple[int, int] = (1000, 800)
    torso_px_range: Tuple[float, float] = (40.0, 110.0)
    layout_jitter: float = Field(
        1.0, ge=0.0,
        description="Transfer figure displacement in torso lengths"
    )
    transfer_scale_jitter: float = Field(0.15, ge=0.0, lt=1.0)
    transfer_angle_jitter: float = Field(0.05, ge=0.0, description="Joint-angle perturbation in radians")

    @model_validator(mode="after")
    def _check_ranges(self):
        if self.max_figures < self.min_figures:
            raise ValueError("max_figures must be >= min_figures")
        lo, hi = self.scale_range
        if not 0 < lo <= hi:
            raise ValueError("scale_range must satisfy 0 < low <= high")
        lo, hi = self.torso_px_range
        if not 0 < lo <= hi:
            raise ValueError("torso_px_range must satisfy 0 < low <= high")
        if self.canvas[0] <= 0 or self.canvas[1] <= 0:
            raise ValueError("canvas must be positive")
        if self.n_families > self.n_scenes:
            raise ValueError("n_families cannot exceed n_scenes")
        return self


class RunManifest(BaseModel):
    """Provenance of a CLI run"""
    command: str
    config: MatchConfig
    inputs: Dict[str, str] = Field(default_factory=dict)
    seed: Optional[int] = None
    tool_version: str
    timings_ms: Dict[str, float] = Field(default_factory=dict)


class QueryResult(BaseModel):
    query_id: str
    query_keypoints_path: Optional[str] = None
    metric: ImageMetric
    verified: bool
    hits: List[RankedHit] = Field(default_factory=list)


class ResultsFile(BaseModel):
    schema_version: int = RESULTS_SCHEMA_VERSION
    provenance: RunManifest
    queries: List[QueryResult] = Field(default_factory=list)


class Edge(BaseModel):
    query_id: str
    target_id: str
    score: int
    transform: SimilarityTransform

    @field_validator("score")
    @classmethod
    def _positive(cls, v):
        if v <= 0:
            raise ValueError("edges carry verified links only")
        return v


class PlantedImage(BaseModel):
    """A generated image derived from a source scene"""
    model_config = ConfigDict(frozen=True)

    image_id: str
    source_id: str
    label: LinkLabel = Field(..., description="copy or composition_transfer of the source scene")
    flipped: bool
    scale: float = Field(..., gt=0.0, description="Global scale applied to the source")


class SyntheticBenchmark(BaseModel):
    model_config = ConfigDict(frozen=True)

    spec: SyntheticSpec
    seed: int
    index: PoseIndex
    ground_truth: List[GroundTruthLink]
    plants: List[PlantedImage]
