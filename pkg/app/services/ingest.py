"""
Keypoint ingestion
==================

Parses detector keypoint files, assembles a manifest into an immutable
PoseIndex and persists it as versioned JSON lines:

    {"config_fingerprint": ..., "format": "poselink-index", "format_version": 1, "record_count": N}
    <ImageRecord JSON>        (N lines, manifest order)
"""

import hashlib
import json
import logging
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from typing import Dict, List, Optional, Sequence

from pydantic import ValidationError

from app.models import (
    CorruptIndex,
    DuplicateImageId,
    FingerprintMismatch,
    ImageRecord,
    INDEX_FORMAT_VERSION,
    MalformedFile,
    ManifestEntry,
    MatchConfig,
    Pose,
    PoseIndex,
    VersionMismatch,
)
from app.services.pose_core import detected_mask, is_eligible
from app.utils.body25 import NUM_KEYPOINTS
from app.utils.files import atomic_write

INDEX_FORMAT_TAG = "poselink-index"
_VALUES_PER_PERSON = NUM_KEYPOINTS * 3

_logger = logging.getLogger("ingest")


def _is_number(value) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool) and math.isfinite(value)


def parse_keypoints_file(path: str) -> List[Pose]:
    """
    One Pose per person of a detector JSON file.

    Expects a top-level "people" array whose items carry "pose_keypoints_2d",
    a flat list of exactly 75 numbers (x, y, confidence) x 25.
    """
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
    except OSError as e:
        raise MalformedFile(path, f"cannot read file: {e.strerror or e}")
    except json.JSONDecodeError as e:
        raise MalformedFile(path, f"invalid JSON at line {e.lineno} column {e.colno}: {e.msg}")

    if not isinstance(data, dict) or not isinstance(data.get("people"), list):
        raise MalformedFile(path, 'missing top-level "people" array')

    poses = []
    for person_index, person in enumerate(data["people"]):
        if not isinstance(person, dict) or "pose_keypoints_2d" not in person:
            raise MalformedFile(path, 'missing "pose_keypoints_2d"', person_index)
        values = person["pose_keypoints_2d"]
        if not isinstance(values, list) or len(values) != _VALUES_PER_PERSON:
            found = len(values) if isinstance(values, list) else type(values).__name__
            raise MalformedFile(
                path, f"expected {_VALUES_PER_PERSON} keypoint values, found {found}", person_index
            )
        bad = [i for i, v in enumerate(values) if not _is_number(v)]
        if bad:
            raise MalformedFile(path, f"non-numeric keypoint value at position {bad[0]}", person_index)
        try:
            poses.append(Pose.from_array(values, pose_id=person_index))
        except ValidationError as e:
            raise MalformedFile(path, e.errors()[0]["msg"], person_index)
    return poses


def write_keypoints_file(path: str, poses: Sequence[Pose]) -> None:
    """Emit detector-standard JSON for the given poses"""
    people = [
        {"person_id": [-1], "pose_keypoints_2d": [float(v) for v in pose.to_array().ravel()]}
        for pose in poses
    ]
    atomic_write(path, json.dumps({"version": 1.3, "people": people}, sort_keys=True) + "\n")


def load_manifest(path: str) -> List[ManifestEntry]:
    """One JSON object per line: {"image_id", "keypoints_path", "image_path"?}"""
    entries = []
    try:
        with open(path, "r", encoding="utf-8") as f:
            lines = f.read().splitlines()
    except OSError as e:
        raise MalformedFile(path, f"cannot read manifest: {e.strerror or e}")
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            entries.append(ManifestEntry.model_validate_json(line))
        except ValidationError as e:
            raise MalformedFile(path, f"line {lineno}: {e.errors()[0]['msg']}")
    return entries


def save_manifest(path: str, entries: Sequence[ManifestEntry]) -> None:
    body = "".join(e.model_dump_json(exclude_none=True) + "\n" for e in entries)
    atomic_write(path, body)


def config_fingerprint(cfg: MatchConfig) -> str:
    """Hash of the config fields that decide pose eligibility"""
    payload = json.dumps({"detection_threshold": cfg.detection_threshold}, sort_keys=True)
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def _flag_eligibility(record: ImageRecord, cfg: MatchConfig) -> ImageRecord:
    poses = [p.model_copy(update={"eligible": is_eligible(p, cfg)}) for p in record.poses]
    return record.model_copy(update={"poses": poses})


def build_index_from_records(records: Sequence[ImageRecord], cfg: MatchConfig) -> PoseIndex:
    """Flag eligibility and freeze records into an index, keeping their order"""
    seen = set()
    for record in records:
        if record.image_id in seen:
            raise DuplicateImageId(record.image_id)
        seen.add(record.image_id)
    return PoseIndex(
        records=[_flag_eligibility(r, cfg) for r in records],
        config_fingerprint=config_fingerprint(cfg),
        format_version=INDEX_FORMAT_VERSION,
    )


def build_index(
    manifest: Sequence[ManifestEntry],
    cfg: MatchConfig,
    base_dir: Optional[str] = None,
) -> PoseIndex:
    """
    Parse every manifest entry (in parallel) and build the index in manifest order.

    Relative keypoint paths are resolved against base_dir.
    """
    start = time.perf_counter()
    seen = set()
    for entry in manifest:
        if entry.image_id in seen:
            raise DuplicateImageId(entry.image_id)
        seen.add(entry.image_id)

    def parse(entry: ManifestEntry) -> ImageRecord:
        path = entry.keypoints_path
        if base_dir and not os.path.isabs(path):
            path = os.path.join(base_dir, path)
        return ImageRecord(
            image_id=entry.image_id,
            poses=parse_keypoints_file(path),
            source_path=entry.keypoints_path,
        )

    if cfg.workers > 1 and len(manifest) > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as executor:
            records = list(executor.map(parse, manifest))
    else:
        records = [parse(entry) for entry in manifest]

    index = build_index_from_records(records, cfg)
    if _logger:
        summary = index_summary(index, cfg)
        _logger.info(
            "build_index records=%d poses=%d ineligible=%d duration_ms=%.1f",
            summary["records"], summary["poses"], summary["ineligible_poses"],
            (time.perf_counter() - start) * 1000,
        )
    return index


def index_summary(index: PoseIndex, cfg: MatchConfig) -> Dict[str, float]:
    poses = [p for r in index.records for p in r.poses]
    detected = [int(detected_mask(p, cfg).sum()) for p in poses]
    return {
        "records": len(index.records),
        "poses": len(poses),
        "ineligible_poses": sum(1 for p in poses if p.eligible is False),
        "figure_free_records": sum(1 for r in index.records if not r.poses),
        "mean_detected_keypoints": round(sum(detected) / len(detected), 3) if detected else 0.0,
    }


def save_index(index: PoseIndex, path: str) -> None:
    header = {
        "format": INDEX_FORMAT_TAG,
        "format_version": index.format_version,
        "config_fingerprint": index.config_fingerprint,
        "record_count": len(index.records),
    }
    lines = [json.dumps(header, sort_keys=True)]
    lines.extend(record.model_dump_json() for record in index.records)
    atomic_write(path, "\n".join(lines) + "\n")


def load_index(path: str, cfg: Optional[MatchConfig] = None) -> PoseIndex:
    """
    Read an index written by save_index.

    When cfg is given its fingerprint must match the one the index was built
    with. Any damage raises CorruptIndex; no partial index is returned.
    """
    try:
        with open(path, "rb") as f:
            data = f.read()
    except OSError as e:
        raise CorruptIndex(path, 0, f"cannot read file: {e.strerror or e}")

    if not data:
        raise CorruptIndex(path, 0, "empty file")
    if not data.endswith(b"\n"):
        raise CorruptIndex(path, len(data), "missing final newline (truncated file?)")

    offsets, lines, position = [], [], 0
    for raw in data[:-1].split(b"\n"):
        offsets.append(position)
        lines.append(raw)
        position += len(raw) + 1

    try:
        header = json.loads(lines[0].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CorruptIndex(path, 0, f"unreadable header: {e}")
    if not isinstance(header, dict) or header.get("format") != INDEX_FORMAT_TAG:
        raise CorruptIndex(path, 0, "not a pose index file")
    if header.get("format_version") != INDEX_FORMAT_VERSION:
        raise VersionMismatch(path, header.get("format_version"), INDEX_FORMAT_VERSION)
    fingerprint = header.get("config_fingerprint")
    count = header.get("record_count")
    if not isinstance(fingerprint, str) or not isinstance(count, int) or count < 0:
        raise CorruptIndex(path, 0, "header lacks config_fingerprint or record_count")
    if cfg is not None and fingerprint != config_fingerprint(cfg):
        raise FingerprintMismatch(path, fingerprint, config_fingerprint(cfg))

    records = []
    for offset, raw in zip(offsets[1:], lines[1:]):
        try:
            records.append(ImageRecord.model_validate_json(raw))
        except ValidationError as e:
            raise CorruptIndex(path, offset, e.errors()[0]["msg"])
    if len(records) != count:
        raise CorruptIndex(path, len(data), f"header announces {count} records, found {len(records)}")

    try:
        return PoseIndex(records=records, config_fingerprint=fingerprint, format_version=INDEX_FORMAT_VERSION)
    except ValidationError as e:
        raise CorruptIndex(path, 0, e.errors()[0]["msg"])
