"""
Synthetic benchmark
===================

Generates scenes of stick figures drawn from the canonical skeleton and plants
two kinds of derived images on a subset of them ("families"):

- copies: the whole scene under one scale + translation (+ optional mirror),
  with keypoint noise and dropout
- composition transfers: every figure moved and rescaled on its own, with
  slightly different joint angles, then the same global treatment

Every pair of family members is a ground-truth link, labeled copy when both
are the source or a copy, composition_transfer otherwise.
"""

import json
import logging
import math
import os
import time
from dataclasses import dataclass, replace
from typing import Dict, List, Optional, Tuple, Union

import numpy as np
from pydantic import ValidationError

from app.models import (
    CanonicalSkeleton,
    GroundTruthLink,
    ImageRecord,
    InvalidSpec,
    LinkLabel,
    ManifestEntry,
    MatchConfig,
    PlantedImage,
    Pose,
    SyntheticBenchmark,
    SyntheticSpec,
)
from app.services.evalkit import save_ground_truth
from app.services.geom_verify import load_canonical_skeleton
from app.services.ingest import build_index_from_records, save_manifest, write_keypoints_file
from app.utils.body25 import MIRROR_PERMUTATION, NECK, NUM_KEYPOINTS
from app.utils.files import atomic_write

_logger = logging.getLogger("synthetic")


@dataclass(frozen=True)
class FigureParams:
    """Everything needed to draw one figure; angles in radians from the downward axis"""
    anchor: Tuple[float, float]
    torso_px: float
    lean: float
    facing: int
    yaw: float
    head_tilt: float
    arms: Tuple[float, float, float, float]
    legs: Tuple[float, float, float, float]
    confidences: Tuple[float, ...]


def _direction(angle: float) -> np.ndarray:
    return np.array([math.sin(angle), math.cos(angle)])


class FigureSampler:
    """Kinematic stick-figure sampler over the canonical bone lengths"""

    def __init__(self, skeleton: Optional[CanonicalSkeleton] = None):
        skeleton = skeleton or load_canonical_skeleton()
        self._lengths = {
            frozenset(bone): length for bone, length in zip(skeleton.bones, skeleton.canonical_lengths)
        }

    def _bone(self, a: int, b: int) -> float:
        return self._lengths.get(frozenset((a, b)), 0.0)

    def sample(self, rng: np.random.Generator, spec: SyntheticSpec) -> FigureParams:
        width, height = spec.canvas
        return FigureParams(
            anchor=(float(rng.uniform(0.1 * width, 0.9 * width)), float(rng.uniform(0.1 * height, 0.55 * height))),
            torso_px=float(rng.uniform(*spec.torso_px_range)),
            lean=float(np.clip(rng.normal(0.0, 0.15), -0.6, 0.6)),
            facing=int(rng.choice((-1, 1))),
            yaw=float(rng.uniform(0.3, 1.0)),
            head_tilt=float(rng.normal(0.0, 0.2)),
            arms=tuple(float(v) for v in (
                rng.uniform(-2.6, 2.6), rng.uniform(-1.8, 1.8), rng.uniform(-2.6, 2.6), rng.uniform(-1.8, 1.8)
            )),
            legs=tuple(float(v) for v in (
                rng.uniform(-0.7, 0.7), rng.uniform(-1.0, 1.0), rng.uniform(-0.7, 0.7), rng.uniform(-1.0, 1.0)
            )),
            confidences=tuple(float(v) for v in rng.uniform(0.4, 1.0, NUM_KEYPOINTS)),
        )

    def local_points(self, params: FigureParams) -> np.ndarray:
        """(25, 2) keypoints in torso units with the neck at the origin"""
        L = self._bone
        down = _direction(params.lean)
        side_unit = params.facing * np.array([math.cos(params.lean), -math.sin(params.lean)])
        side = params.yaw * side_unit
        pts = np.zeros((NUM_KEYPOINTS, 2))

        pts[8] = L(1, 8) * down
        pts[2] = -L(1, 2) * side
        pts[5] = L(1, 5) * side
        pts[9] = pts[8] - L(8, 9) * side
        pts[12] = pts[8] + L(8, 12) * side

        r_upper, r_elbow, l_upper, l_elbow = params.arms
        pts[3] = pts[2] + L(2, 3) * _direction(params.lean + r_upper)
        pts[4] = pts[3] + L(3, 4) * _direction(params.lean + r_upper + r_elbow)
        pts[6] = pts[5] + L(5, 6) * _direction(params.lean + l_upper)
        pts[7] = pts[6] + L(6, 7) * _direction(params.lean + l_upper + l_elbow)

        r_hip, r_knee, l_hip, l_knee = params.legs
        foot_turn = params.facing * 0.5 * math.pi * (1.0 - 0.7 * params.yaw)
        for hip, knee, ankle, big_toe, small_toe, heel, (thigh, shin), sign in (
            (9, 10, 11, 22, 23, 24, (r_hip, r_knee), -1.0),
            (12, 13, 14, 19, 20, 21, (l_hip, l_knee), 1.0),
        ):
            pts[knee] = pts[hip] + L(hip, knee) * _direction(thigh)
            pts[ankle] = pts[knee] + L(knee, ankle) * _direction(thigh + shin)
            toe = _direction(thigh + shin + foot_turn)
            pts[big_toe] = pts[ankle] + L(ankle, big_toe) * toe
            pts[small_toe] = pts[big_toe] + sign * L(big_toe, small_toe) * side
            pts[heel] = pts[ankle] - L(ankle, heel) * toe

        up_head = _direction(params.lean + math.pi + params.head_tilt)
        pts[0] = L(1, 0) * up_head
        pts[15] = pts[0] + L(0, 15) * (0.5 * up_head - 0.87 * side)
        pts[16] = pts[0] + L(0, 16) * (0.5 * up_head + 0.87 * side)
        pts[17] = pts[15] - L(15, 17) * side
        pts[18] = pts[16] + L(16, 18) * side
        return pts

    def render(self, params: FigureParams) -> np.ndarray:
        """(25, 3) pixel keypoints with confidences, before any dropout"""
        pixels = np.asarray(params.anchor) + params.torso_px * self.local_points(params)
        return np.column_stack([pixels, np.asarray(params.confidences)])


def _drop(array: np.ndarray, rate: float, protect_root: bool, rng: np.random.Generator) -> np.ndarray:
    """Mark keypoints undetected at the given rate; undetected keypoints read (0, 0, 0)"""
    out = array.copy()
    lost = rng.random(NUM_KEYPOINTS) < rate
    if protect_root:
        lost[NECK] = False
    out[lost] = 0.0
    return out


def _transform_pose(
    array: np.ndarray,
    scale: float,
    translation: np.ndarray,
    flipped: bool,
    canvas_width: float,
    noise_px: float,
    spec: SyntheticSpec,
    rng: np.random.Generator,
) -> np.ndarray:
    """Global similarity (+ mirror image) of a rendered pose, then noise and dropout"""
    out = np.zeros_like(array)
    detected = array[:, 2] > 0.0
    xs = canvas_width - array[:, 0] if flipped else array[:, 0]
    out[:, 0] = scale * xs + translation[0]
    out[:, 1] = scale * array[:, 1] + translation[1]
    out[:, 2] = array[:, 2]
    if noise_px > 0.0:
        out[:, :2] += rng.normal(0.0, noise_px, (NUM_KEYPOINTS, 2))
    out[~detected] = 0.0
    if flipped:
        out = out[MIRROR_PERMUTATION]
    return _drop(out, spec.dropout, spec.protect_root, rng)


def _perturb(params: FigureParams, spec: SyntheticSpec, rng: np.random.Generator) -> FigureParams:
    """Move, rescale and re-pose one figure of a transferred composition"""
    shift = spec.layout_jitter * params.torso_px * rng.uniform(-1.0, 1.0, 2)
    jitter = spec.transfer_angle_jitter

    def angle(value: float) -> float:
        return float(value + rng.normal(0.0, jitter)) if jitter > 0 else value

    return replace(
        params,
        anchor=(params.anchor[0] + float(shift[0]), params.anchor[1] + float(shift[1])),
        torso_px=params.torso_px * float(1.0 + rng.uniform(-spec.transfer_scale_jitter, spec.transfer_scale_jitter)),
        lean=angle(params.lean),
        head_tilt=angle(params.head_tilt),
        arms=tuple(angle(v) for v in params.arms),
        legs=tuple(angle(v) for v in params.legs),
    )


def _family_links(members: List[Tuple[str, str]]) -> List[GroundTruthLink]:
    """members holds (image_id, role) with role in {source, copy, transfer}"""
    links = []
    for i, (a, role_a) in enumerate(members):
        for b, role_b in members[i + 1:]:
            both_copies = role_a != "transfer" and role_b != "transfer"
            label = LinkLabel.COPY if both_copies else LinkLabel.COMPOSITION_TRANSFER
            links.append(GroundTruthLink(image_id_a=a, image_id_b=b, label=label))
    return links


def generate_synthetic_benchmark(
    spec: Union[SyntheticSpec, dict, None] = None,
    seed: int = 0,
    cfg: Optional[MatchConfig] = None,
    skeleton: Optional[CanonicalSkeleton] = None,
) -> SyntheticBenchmark:
    """Deterministic in (spec, seed): the same inputs give the same index and ground truth"""
    start = time.perf_counter()
    try:
        spec = spec if isinstance(spec, SyntheticSpec) else SyntheticSpec(**(spec or {}))
    except ValidationError as e:
        raise InvalidSpec(f"invalid synthetic spec: {e.errors()[0]['msg']}")
    cfg = cfg or MatchConfig()
    rng = np.random.default_rng(seed)
    sampler = FigureSampler(skeleton)
    width = float(spec.canvas[0])

    records: List[ImageRecord] = []
    scenes: List[List[Tuple[FigureParams, np.ndarray]]] = []
    for i in range(spec.n_scenes):
        figures = []
        for _ in range(int(rng.integers(spec.min_figures, spec.max_figures + 1))):
            params = sampler.sample(rng, spec)
            figures.append((params, _drop(sampler.render(params), spec.dropout, spec.protect_root, rng)))
        scenes.append(figures)
        records.append(ImageRecord(
            image_id=f"scene-{i:04d}",
            poses=[Pose.from_array(array, pose_id=j) for j, (_, array) in enumerate(figures)],
            source_path="synthetic",
        ))

    sources = sorted(int(i) for i in rng.choice(spec.n_scenes, spec.n_families, replace=False))
    members: Dict[int, List[Tuple[str, str]]] = {s: [(f"scene-{s:04d}", "source")] for s in sources}
    plants: List[PlantedImage] = []

    flip_count = int(round(spec.flip_probability * spec.n_copies))
    copy_flips = np.zeros(spec.n_copies, dtype=bool)
    copy_flips[rng.permutation(spec.n_copies)[:flip_count]] = True

    def global_transform() -> Tuple[float, np.ndarray]:
        scale = float(rng.uniform(*spec.scale_range))
        translation = rng.uniform(-spec.translation_max, spec.translation_max, 2)
        return scale, translation

    for c in range(spec.n_copies):
        source = sources[c % len(sources)]
        flipped = bool(copy_flips[c])
        scale, translation = global_transform()
        poses = [
            Pose.from_array(
                _transform_pose(array, scale, translation, flipped, width,
                                spec.noise_sigma * params.torso_px * scale, spec, rng),
                pose_id=j,
            )
            for j, (params, array) in enumerate(scenes[source])
        ]
        image_id = f"copy-{c:04d}"
        records.append(ImageRecord(image_id=image_id, poses=poses, source_path="synthetic"))
        members[source].append((image_id, "copy"))
        plants.append(PlantedImage(
            image_id=image_id, source_id=f"scene-{source:04d}", label=LinkLabel.COPY, flipped=flipped, scale=scale
        ))

    for t in range(spec.n_transfers):
        source = sources[t % len(sources)]
        flipped = bool(rng.random() < spec.flip_probability)
        scale, translation = global_transform()
        poses = []
        for j, (params, array) in enumerate(scenes[source]):
            moved = _perturb(params, spec, rng)
            rendered = sampler.render(moved)
            rendered[array[:, 2] <= 0.0] = 0.0
            poses.append(Pose.from_array(
                _transform_pose(rendered, scale, translation, flipped, width,
                                spec.noise_sigma * moved.torso_px * scale, spec, rng),
                pose_id=j,
            ))
        image_id = f"transfer-{t:04d}"
        records.append(ImageRecord(image_id=image_id, poses=poses, source_path="synthetic"))
        members[source].append((image_id, "transfer"))
        plants.append(PlantedImage(
            image_id=image_id, source_id=f"scene-{source:04d}",
            label=LinkLabel.COMPOSITION_TRANSFER, flipped=flipped, scale=scale,
        ))

    links = [link for source in sources for link in _family_links(members[source])]
    links.sort(key=lambda link: (link.image_id_a, link.image_id_b))
    bench = SyntheticBenchmark(
        spec=spec,
        seed=seed,
        index=build_index_from_records(records, cfg),
        ground_truth=links,
        plants=plants,
    )
    if _logger:
        _logger.info(
            "synthesize seed=%d scenes=%d copies=%d transfers=%d links=%d duration_ms=%.1f",
            seed, spec.n_scenes, spec.n_copies, spec.n_transfers, len(links),
            (time.perf_counter() - start) * 1000,
        )
    return bench


def write_benchmark(bench: SyntheticBenchmark, directory: str) -> Dict[str, str]:
    """
    Lay a benchmark out on disk as detector files plus manifest and ground truth.

    Returns the paths written, keyed by role.
    """
    keypoints_dir = os.path.join(directory, "keypoints")
    os.makedirs(keypoints_dir, exist_ok=True)
    entries = []
    for record in bench.index.records:
        relative = f"keypoints/{record.image_id}.json"
        write_keypoints_file(os.path.join(directory, relative), record.poses)
        entries.append(ManifestEntry(image_id=record.image_id, keypoints_path=relative))

    paths = {
        "manifest": os.path.join(directory, "manifest.jsonl"),
        "ground_truth": os.path.join(directory, "ground_truth.jsonl"),
        "plants": os.path.join(directory, "plants.jsonl"),
        "spec": os.path.join(directory, "spec.json"),
    }
    save_manifest(paths["manifest"], entries)
    save_ground_truth(paths["ground_truth"], bench.ground_truth)
    atomic_write(paths["plants"], "".join(p.model_dump_json() + "\n" for p in bench.plants))
    atomic_write(
        paths["spec"],
        json.dumps({"seed": bench.seed, "spec": bench.spec.model_dump(mode="json")}, indent=2, sort_keys=True) + "\n",
    )
    return paths
