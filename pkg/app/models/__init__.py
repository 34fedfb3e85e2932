from .schemas import (
    ImageMetric,
    LinkLabel,
    Scenario,
    Keypoint,
    Pose,
    PoseDistance,
    MatchConfig,
    ImageRecord,
    PoseIndex,
    ManifestEntry,
    CandidatePair,
    ShortlistEntry,
    SimilarityTransform,
    CanonicalSkeleton,
    ValidatedPair,
    VerifiedLink,
    RankedHit,
    GroundTruthLink,
    QueryPrecision,
    EvalReport,
    SyntheticSpec,
    PlantedImage,
    SyntheticBenchmark,
    RunManifest,
    QueryResult,
    ResultsFile,
    Edge,
    INDEX_FORMAT_VERSION,
    SKELETON_FORMAT_VERSION,
    RESULTS_SCHEMA_VERSION,
)
from .errors import (
    PoseLinkError,
    InputError,
    RootUndetected,
    DegenerateSample,
    MalformedFile,
    DuplicateImageId,
    VersionMismatch,
    FingerprintMismatch,
    CorruptIndex,
    MissingQuery,
    InvalidSpec,
)

__all__ = [
    "ImageMetric",
    "LinkLabel",
    "Scenario",
    "Keypoint",
    "Pose",
    "PoseDistance",
    "MatchConfig",
    "ImageRecord",
    "PoseIndex",
    "ManifestEntry",
    "CandidatePair",
    "ShortlistEntry",
    "SimilarityTransform",
    "CanonicalSkeleton",
    "ValidatedPair",
    "VerifiedLink",
    "RankedHit",
    "GroundTruthLink",
    "QueryPrecision",
    "EvalReport",
    "SyntheticSpec",
    "PlantedImage",
    "SyntheticBenchmark",
    "RunManifest",
    "QueryResult",
    "ResultsFile",
    "Edge",
    "INDEX_FORMAT_VERSION",
    "SKELETON_FORMAT_VERSION",
    "RESULTS_SCHEMA_VERSION",
    "PoseLinkError",
    "InputError",
    "RootUndetected",
    "DegenerateSample",
    "MalformedFile",
    "DuplicateImageId",
    "VersionMismatch",
    "FingerprintMismatch",
    "CorruptIndex",
    "MissingQuery",
    "InvalidSpec",
]
