"""
Command-line entry point: python -m app.main <command> [options]

Data goes to files and standard output; logs go to standard error.
"""

import argparse
import logging
import sys
from typing import List, Optional

from app import __version__
from app.cli import run_command
from app.models import ImageMetric
from app.utils.settings import log_level


def _match_flags() -> argparse.ArgumentParser:
    """Flags shared by every command; unset flags fall back to POSELINK_* / defaults"""
    parser = argparse.ArgumentParser(add_help=False)
    group = parser.add_argument_group("matching")
    group.add_argument("--metric", choices=[m.value for m in ImageMetric], help="image distance (default t)")
    group.add_argument("--t", type=float, help="non-match penalty of dist_t (default 0.05)")
    group.add_argument("--pose-dist-max", type=float, help="pose pairs above this q are not verified (default 0.1)")
    group.add_argument("--torso-angle-max", type=float, help="torso prefilter in radians (default 0.4)")
    group.add_argument("--shortlist", type=int, help="images forwarded to verification (default 50)")
    group.add_argument("--min-inlier-frac", type=float, help="inlier quota as a fraction of 25 (default 0.25)")
    group.add_argument("--inlier-dist-factor", type=float, help="inlier radius in pose-size units (default 0.25)")
    group.add_argument("--conf-threshold", type=float, help="keypoint detection threshold (default 0)")
    group.add_argument("--no-verify", action="store_true", help="match-only ranking")
    group.add_argument("--no-flip", action="store_true", help="ignore mirrored matches")
    group.add_argument("--workers", type=int, help="worker threads (default 1)")
    group.add_argument("--seed", type=int, help="random seed for generated data")
    group.add_argument("--print-config", action="store_true", help="print the resolved config and exit")
    group.add_argument("--log-level", default=None, help="DEBUG, INFO, WARNING or ERROR (default INFO)")
    return parser


def build_parser() -> argparse.ArgumentParser:
    shared = _match_flags()
    parser = argparse.ArgumentParser(
        prog="poselink",
        description="Pose-based link discovery between artworks",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", parents=[shared], help="build an index from a manifest")
    p.add_argument("manifest", help="JSON lines manifest: image_id, keypoints_path, image_path")
    p.add_argument("-o", "--output", required=True, help="index file to write")

    p = sub.add_parser("query", parents=[shared], help="rank the index against query keypoint files")
    p.add_argument("index")
    p.add_argument("queries", nargs="+", help="detector keypoint JSON files")
    p.add_argument("--query-id", help="id of the single query (default: file name stem)")
    p.add_argument("-o", "--output", required=True, help="results JSON to write")

    p = sub.add_parser("link-all", parents=[shared], help="query every record against the rest")
    p.add_argument("index")
    p.add_argument("-o", "--output", required=True, help="edge list JSON to write")

    p = sub.add_parser("evaluate", parents=[shared], help="mP@k of all method variants and scenarios")
    p.add_argument("index")
    p.add_argument("ground_truth", help="JSON lines of {a, b, label}")
    p.add_argument("-o", "--output", required=True, help="directory for report.json and report.csv")

    p = sub.add_parser("report", parents=[shared], help="static HTML gallery of query results")
    p.add_argument("results")
    p.add_argument("manifest")
    p.add_argument("-o", "--output", required=True, help="output directory")
    p.add_argument("--max-hits", type=int, default=10)

    p = sub.add_parser("synth", parents=[shared], help="write a synthetic benchmark")
    p.add_argument("-o", "--output", required=True, help="output directory")
    p.add_argument("--n-scenes", type=int)
    p.add_argument("--n-families", type=int)
    p.add_argument("--n-copies", type=int)
    p.add_argument("--n-transfers", type=int)
    p.add_argument("--flip-probability", type=float)
    p.add_argument("--noise", type=float, help="keypoint noise as a fraction of pose size")
    p.add_argument("--dropout", type=float)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.getLevelName((args.log_level or log_level()).upper())
    logging.basicConfig(
        level=level if isinstance(level, int) else logging.INFO,
        stream=sys.stderr,
        format="%(asctime)s %(levelname)s %(name)s %(message)s",
    )
    return run_command(args)


if __name__ == "__main__":
    sys.exit(main())
