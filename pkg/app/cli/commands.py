"""
Command handlers. Each handler returns an exit status; domain errors are
mapped to statuses in run_command:

    0  success
    1  input error (bad file, unknown id, invalid setting, unreadable path)
    2  internal invariant violation
"""

import argparse
import json
import logging
import os
import sys
import time
from typing import Any, Callable, Dict, Optional

from app import __version__
from app.models import (
    ImageMetric,
    ImageRecord,
    InputError,
    MatchConfig,
    MissingQuery,
    PoseLinkError,
    QueryResult,
    ResultsFile,
    RunManifest,
    Scenario,
)
from app.services.evalkit import ground_truth_queries, load_ground_truth, mean_precision, write_reports
from app.services.ingest import (
    build_index,
    index_summary,
    load_index,
    load_manifest,
    parse_keypoints_file,
    save_index,
)
from app.services.pipeline import QueryEngine
from app.services.report import render_report
from app.services.synthetic import generate_synthetic_benchmark, write_benchmark
from app.utils.files import atomic_write
from app.utils.settings import resolve_config

EDGES_SCHEMA_VERSION = 1

_logger = logging.getLogger("cli")

# Execution-only settings kept out of data files so outputs do not depend on them
_EXECUTION_FIELDS = {"workers"}


def config_from_args(args: argparse.Namespace) -> MatchConfig:
    overrides = {
        "metric": getattr(args, "metric", None),
        "t": getattr(args, "t", None),
        "pose_dist_max": getattr(args, "pose_dist_max", None),
        "torso_angle_max": getattr(args, "torso_angle_max", None),
        "shortlist_len": getattr(args, "shortlist", None),
        "min_inlier_frac": getattr(args, "min_inlier_frac", None),
        "inlier_dist_factor": getattr(args, "inlier_dist_factor", None),
        "detection_threshold": getattr(args, "conf_threshold", None),
        "workers": getattr(args, "workers", None),
    }
    if getattr(args, "no_verify", False):
        overrides["verify"] = False
    if getattr(args, "no_flip", False):
        overrides["flip_enabled"] = False
    return resolve_config(overrides)


def _provenance(command: str, cfg: MatchConfig, inputs: Dict[str, str], seed: Optional[int] = None) -> RunManifest:
    return RunManifest(command=command, config=cfg, inputs=inputs, seed=seed, tool_version=__version__)


def _dump(payload: Dict[str, Any]) -> str:
    return json.dumps(payload, indent=2, sort_keys=True) + "\n"


def _provenance_block(manifest: RunManifest) -> Dict[str, Any]:
    return manifest.model_dump(mode="json", exclude={"config": _EXECUTION_FIELDS, "timings_ms": True})


def _write_sidecar(output_path: str, manifest: RunManifest, timings: Dict[str, float]) -> None:
    """Full run record, wall-clock timings included, next to the data file"""
    record = manifest.model_copy(update={"timings_ms": {k: round(v, 1) for k, v in sorted(timings.items())}})
    atomic_write(output_path + ".run.json", record.model_dump_json(indent=2) + "\n")


def cmd_ingest(args: argparse.Namespace, cfg: MatchConfig) -> int:
    start = time.perf_counter()
    manifest = load_manifest(args.manifest)
    index = build_index(manifest, cfg, base_dir=os.path.dirname(os.path.abspath(args.manifest)))
    save_index(index, args.output)
    summary = index_summary(index, cfg)
    print(" ".join(f"{key}={value}" for key, value in summary.items()))
    _write_sidecar(
        args.output,
        _provenance("ingest", cfg, {"manifest": args.manifest}),
        {"ingest": (time.perf_counter() - start) * 1000},
    )
    return 0


def _query_record(path: str, query_id: Optional[str] = None) -> ImageRecord:
    image_id = query_id or os.path.splitext(os.path.basename(path))[0]
    return ImageRecord(image_id=image_id, poses=parse_keypoints_file(path), source_path=path)


def cmd_query(args: argparse.Namespace, cfg: MatchConfig) -> int:
    if args.query_id and len(args.queries) != 1:
        raise InputError("--query-id needs exactly one query file")
    timings = {}
    start = time.perf_counter()
    index = load_index(args.index, cfg)
    timings["load_index"] = (time.perf_counter() - start) * 1000
    queries = [_query_record(path, args.query_id) for path in args.queries]

    engine = QueryEngine(index, cfg)
    results = []
    for record in queries:
        hits, stage = engine.query(record)
        for key, value in stage.items():
            timings[f"{record.image_id}.{key}"] = value
        results.append(QueryResult(
            query_id=record.image_id,
            query_keypoints_path=record.source_path,
            metric=cfg.metric,
            verified=cfg.verify,
            hits=hits,
        ))

    inputs = {"index": args.index}
    inputs.update({f"query[{i}]": path for i, path in enumerate(args.queries)})
    manifest = _provenance("query", cfg, inputs)
    payload = ResultsFile(provenance=manifest, queries=results).model_dump(mode="json")
    payload["provenance"] = _provenance_block(manifest)
    atomic_write(args.output, _dump(payload))
    _write_sidecar(args.output, manifest, timings)
    return 0


def cmd_link_all(args: argparse.Namespace, cfg: MatchConfig) -> int:
    start = time.perf_counter()
    index = load_index(args.index, cfg)
    edges = QueryEngine(index, cfg).link_all()
    manifest = _provenance("link-all", cfg, {"index": args.index})
    payload = {
        "schema_version": EDGES_SCHEMA_VERSION,
        "provenance": _provenance_block(manifest),
        "edges": [edge.model_dump(mode="json") for edge in edges],
    }
    atomic_write(args.output, _dump(payload))
    _write_sidecar(args.output, manifest, {"link_all": (time.perf_counter() - start) * 1000})
    print(f"records={len(index.records)} edges={len(edges)}")
    return 0


def cmd_evaluate(args: argparse.Namespace, cfg: MatchConfig) -> int:
    start = time.perf_counter()
    index = load_index(args.index, cfg)
    links = load_ground_truth(args.ground_truth)
    by_id = index.by_id()
    query_ids = ground_truth_queries(links)
    for query_id in query_ids:
        if query_id not in by_id:
            raise MissingQuery(query_id)

    engine = QueryEngine(index, cfg)
    reports = []
    for metric in (ImageMetric.MIN, ImageMetric.T):
        match_only, verified = {}, {}
        for query_id in query_ids:
            plain, checked = engine.query_both(by_id[query_id], metric)
            match_only[query_id] = [hit.image_id for hit in plain]
            verified[query_id] = [hit.image_id for hit in checked]
        for label, rankings in (("match-only", match_only), ("verified", verified)):
            method = f"dist_{metric.value} {label}"
            for scenario in Scenario:
                reports.append(mean_precision(
                    rankings, links, scenario,
                    strict=cfg.strict_precision_denominator,
                    method=method,
                ))

    manifest = _provenance("evaluate", cfg, {"index": args.index, "ground_truth": args.ground_truth})
    os.makedirs(args.output, exist_ok=True)
    json_path = os.path.join(args.output, "report.json")
    write_reports(json_path, os.path.join(args.output, "report.csv"), reports, _provenance_block(manifest))
    _write_sidecar(json_path, manifest, {"evaluate": (time.perf_counter() - start) * 1000})

    for report in reports:
        if report.degenerate:
            _logger.warning("evaluate method=%s scenario=%s degenerate=true", report.method, report.scenario.value)
    print(f"queries={len(query_ids)} reports={len(reports)} out={args.output}")
    return 0


def cmd_report(args: argparse.Namespace, cfg: MatchConfig) -> int:
    try:
        with open(args.results, "r", encoding="utf-8") as f:
            results = ResultsFile.model_validate_json(f.read())
    except ValueError as e:
        raise InputError(f"unreadable results file {args.results}: {e}")
    manifest = load_manifest(args.manifest)
    path = render_report(
        results,
        manifest,
        args.output,
        manifest_dir=os.path.dirname(os.path.abspath(args.manifest)),
        max_hits=args.max_hits,
    )
    print(path)
    return 0


def cmd_synth(args: argparse.Namespace, cfg: MatchConfig) -> int:
    start = time.perf_counter()
    spec = {
        "n_scenes": args.n_scenes,
        "n_families": args.n_families,
        "n_copies": args.n_copies,
        "n_transfers": args.n_transfers,
        "flip_probability": args.flip_probability,
        "noise_sigma": args.noise,
        "dropout": args.dropout,
    }
    seed = args.seed if args.seed is not None else 0
    bench = generate_synthetic_benchmark({k: v for k, v in spec.items() if v is not None}, seed, cfg)
    paths = write_benchmark(bench, args.output)
    index_path = os.path.join(args.output, "index.jsonl")
    save_index(bench.index, index_path)
    _write_sidecar(
        index_path,
        _provenance("synth", cfg, {}, seed),
        {"synth": (time.perf_counter() - start) * 1000},
    )
    print(" ".join(f"{key}={value}" for key, value in sorted({**paths, "index": index_path}.items())))
    return 0


COMMANDS: Dict[str, Callable[[argparse.Namespace, MatchConfig], int]] = {
    "ingest": cmd_ingest,
    "query": cmd_query,
    "link-all": cmd_link_all,
    "evaluate": cmd_evaluate,
    "report": cmd_report,
    "synth": cmd_synth,
}


def run_command(args: argparse.Namespace) -> int:
    try:
        cfg = config_from_args(args)
        if getattr(args, "print_config", False):
            sys.stdout.write(cfg.model_dump_json(indent=2) + "\n")
            return 0
        return COMMANDS[args.command](args, cfg)
    except (InputError, OSError) as e:
        _logger.error("%s failed: %s", args.command, e)
        return 1
    except PoseLinkError as e:
        _logger.error("%s failed with an internal error: %s", args.command, e)
        return 2
    except Exception as e:
        _logger.exception("%s failed unexpectedly: %s", args.command, e)
        return 2
