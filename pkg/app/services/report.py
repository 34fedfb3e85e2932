"""
Static HTML gallery of ranked results: one section per query, one panel per
hit, each panel a pose-skeleton overlay drawn from the keypoints (on top of
the artwork when its image file is available).
"""

import base64
import io
import logging
import os
import time
from typing import Dict, List, Optional, Sequence, Tuple

from jinja2 import Environment, FileSystemLoader, select_autoescape
from PIL import Image, UnidentifiedImageError

from app.models import InputError, ManifestEntry, MatchConfig, Pose, RankedHit, ResultsFile
from app.services.ingest import parse_keypoints_file
from app.utils.body25 import LIMBS
from app.utils.files import atomic_write

TEMPLATES_DIR = os.path.join(os.path.dirname(os.path.dirname(__file__)), "templates")
_env = Environment(
    loader=FileSystemLoader(TEMPLATES_DIR),
    autoescape=select_autoescape(["html", "xml"]),
    trim_blocks=True,
    lstrip_blocks=True,
)

POSE_COLORS = ("#e6194b", "#3cb44b", "#4363d8", "#f58231", "#911eb4", "#42d4f4", "#f032e6", "#9a6324")
THUMBNAIL_SIZE = 512

_logger = logging.getLogger("report")


def image_to_base64(path: str, max_size: int = THUMBNAIL_SIZE) -> Tuple[str, int, int]:
    """PNG thumbnail as base64 plus the original width and height"""
    with Image.open(path) as img:
        width, height = img.size
        thumb = img.convert("RGB")
        thumb.thumbnail((max_size, max_size), Image.LANCZOS)
        buf = io.BytesIO()
        thumb.save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii"), width, height


def _skeleton(poses: Sequence[Pose], cfg: MatchConfig) -> Tuple[List[dict], List[dict]]:
    lines, points = [], []
    for n, pose in enumerate(poses):
        color = POSE_COLORS[n % len(POSE_COLORS)]
        coords = pose.coords()
        mask = pose.confidences() > cfg.detection_threshold
        for a, b in LIMBS:
            if mask[a] and mask[b]:
                lines.append({
                    "x1": f"{coords[a][0]:.1f}", "y1": f"{coords[a][1]:.1f}",
                    "x2": f"{coords[b][0]:.1f}", "y2": f"{coords[b][1]:.1f}",
                    "color": color,
                })
        for i in range(len(coords)):
            if mask[i]:
                points.append({"cx": f"{coords[i][0]:.1f}", "cy": f"{coords[i][1]:.1f}", "color": color})
    return lines, points


def _bounds(poses: Sequence[Pose], cfg: MatchConfig) -> Optional[Tuple[float, float, float, float]]:
    xs, ys = [], []
    for pose in poses:
        mask = pose.confidences() > cfg.detection_threshold
        coords = pose.coords()[mask]
        xs.extend(coords[:, 0])
        ys.extend(coords[:, 1])
    if not xs:
        return None
    width = max(max(xs) - min(xs), 1.0)
    height = max(max(ys) - min(ys), 1.0)
    pad = 0.1 * max(width, height)
    return min(xs) - pad, min(ys) - pad, width + 2 * pad, height + 2 * pad


def build_panel(
    title: str,
    poses: Optional[Sequence[Pose]],
    image_path: Optional[str],
    cfg: MatchConfig,
    caption: str = "",
    keypoints_note: Optional[str] = None,
) -> dict:
    """Template context of one panel; a missing image degrades to the bare skeleton"""
    poses = poses or []
    notes = [keypoints_note] if keypoints_note else []
    image = None
    if image_path:
        try:
            data, width, height = image_to_base64(image_path)
            image = {"data": data, "width": width, "height": height}
        except (OSError, UnidentifiedImageError):
            notes.append(f"image not available: {image_path}; skeleton only")
    if image:
        viewbox = (0.0, 0.0, float(image["width"]), float(image["height"]))
    else:
        viewbox = _bounds(poses, cfg) or (0.0, 0.0, 100.0, 100.0)
        if not image_path:
            notes.append("no image; skeleton only")

    lines, points = _skeleton(poses, cfg)
    stroke = max(viewbox[2], viewbox[3]) / 150.0
    return {
        "title": title,
        "caption": caption,
        "viewbox": " ".join(f"{v:.1f}" for v in viewbox),
        "image": image,
        "lines": lines,
        "points": points,
        "stroke": f"{stroke:.2f}",
        "radius": f"{1.5 * stroke:.2f}",
        "notes": notes,
    }


def _hit_caption(rank: int, hit: RankedHit) -> str:
    parts = [f"#{rank}"]
    parts.append("dist=inf" if hit.image_distance is None else f"dist={hit.image_distance:.4f}")
    if hit.score is not None:
        parts.append(f"score={hit.score}")
    if hit.transform is not None:
        t = hit.transform
        parts.append(
            f"s={t.scale:.3f} t=({t.translation[0]:.1f}, {t.translation[1]:.1f})"
            + (" flipped" if t.flipped else "")
        )
    return " ".join(parts)


class _KeypointCache:
    """Parses each keypoints file at most once"""

    def __init__(self):
        self._poses: Dict[str, Tuple[Optional[List[Pose]], Optional[str]]] = {}

    def get(self, path: Optional[str]) -> Tuple[Optional[List[Pose]], Optional[str]]:
        if not path:
            return None, "keypoints unavailable"
        if path not in self._poses:
            try:
                self._poses[path] = (parse_keypoints_file(path), None)
            except InputError as e:
                self._poses[path] = (None, f"keypoints unavailable: {e}")
        return self._poses[path]


def render_report(
    results: ResultsFile,
    manifest: Sequence[ManifestEntry],
    out_dir: str,
    manifest_dir: Optional[str] = None,
    max_hits: int = 10,
    cfg: Optional[MatchConfig] = None,
) -> str:
    """
    Write index.html and a copy of the raw results into out_dir.

    Output depends only on the inputs, so regenerating it yields the same bytes.
    """
    start = time.perf_counter()
    cfg = cfg or results.provenance.config

    def resolve(path: Optional[str]) -> Optional[str]:
        if path and manifest_dir and not os.path.isabs(path):
            return os.path.join(manifest_dir, path)
        return path

    entries = {entry.image_id: entry for entry in manifest}
    cache = _KeypointCache()

    def panel_for(image_id: str, caption: str, keypoints_path: Optional[str] = None) -> dict:
        entry = entries.get(image_id)
        if keypoints_path is None and entry is not None:
            keypoints_path = resolve(entry.keypoints_path)
        poses, note = cache.get(keypoints_path)
        image_path = resolve(entry.image_path) if entry is not None else None
        return build_panel(image_id, poses, image_path, cfg, caption, note)

    sections = []
    for n, query in enumerate(results.queries):
        sections.append({
            "anchor": f"q{n}",
            "query_id": query.query_id,
            "summary": f"metric={query.metric.value} verified={'yes' if query.verified else 'no'} hits={len(query.hits)}",
            "query": panel_for(query.query_id, "query", query.query_keypoints_path),
            "hits": [
                panel_for(hit.image_id, _hit_caption(rank, hit))
                for rank, hit in enumerate(query.hits[:max_hits], start=1)
            ],
        })

    html = _env.get_template("report.html").render(
        title="Pose link results",
        provenance=results.provenance,
        sections=sections,
    )
    os.makedirs(out_dir, exist_ok=True)
    index_path = os.path.join(out_dir, "index.html")
    atomic_write(index_path, html)
    atomic_write(os.path.join(out_dir, "results.json"), results.model_dump_json(indent=2) + "\n")

    if _logger:
        _logger.info(
            "report queries=%d out=%s duration_ms=%.1f",
            len(sections), index_path, (time.perf_counter() - start) * 1000,
        )
    return index_path
