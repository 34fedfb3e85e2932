"""
Evaluation
==========

Ground-truth link files, precision at k and the mean precision report under
the three labeling scenarios.
"""

import csv
import io
import json
import logging
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Set, Tuple

from pydantic import ValidationError

from app.models import (
    EvalReport,
    GroundTruthLink,
    LinkLabel,
    MalformedFile,
    MissingQuery,
    QueryPrecision,
    Scenario,
)
from app.utils.files import atomic_write

DEFAULT_KS = (1, 2, 5, 10, 50)

_logger = logging.getLogger("evalkit")

# Which labels count as positive / are dropped from the ranking per scenario
_SCENARIO_LABELS: Dict[Scenario, Tuple[Set[LinkLabel], Set[LinkLabel]]] = {
    Scenario.ALL_POSITIVE: ({LinkLabel.COPY, LinkLabel.COMPOSITION_TRANSFER}, set()),
    Scenario.COPY_POSITIVE: ({LinkLabel.COPY}, {LinkLabel.COMPOSITION_TRANSFER}),
    Scenario.TRANSFER_POSITIVE: ({LinkLabel.COMPOSITION_TRANSFER}, {LinkLabel.COPY}),
}


def precision_at_k(
    ranking: Sequence[str],
    positives: Iterable[str],
    ignored: Iterable[str],
    k: int,
    strict: bool = True,
) -> float:
    """
    Share of positives among the top k after ignored items are removed.

    With strict the denominator is k even when fewer than k items remain;
    otherwise it is the number of items actually compared.
    """
    if k < 1:
        raise ValueError(f"k must be positive, got {k}")
    positives, ignored = set(positives), set(ignored)
    top = [item for item in ranking if item not in ignored][:k]
    hits = sum(1 for item in top if item in positives)
    denom = k if strict else len(top)
    return hits / denom if denom else 0.0


def scenario_positives(
    query_id: str,
    links: Iterable[GroundTruthLink],
    scenario: Scenario,
) -> Tuple[Set[str], Set[str]]:
    """(positives, ignored) image ids of one query"""
    positive_labels, ignored_labels = _SCENARIO_LABELS[Scenario(scenario)]
    positives, ignored = set(), set()
    for link in links:
        other = link.other(query_id)
        if other is None:
            continue
        if link.label in positive_labels:
            positives.add(other)
        elif link.label in ignored_labels:
            ignored.add(other)
    return positives, ignored


def ground_truth_queries(links: Iterable[GroundTruthLink]) -> List[str]:
    """Every image taking part in at least one link, sorted"""
    ids = set()
    for link in links:
        ids.update((link.image_id_a, link.image_id_b))
    return sorted(ids)


def mean_precision(
    rankings: Mapping[str, Sequence[str]],
    ground_truth: Sequence[GroundTruthLink],
    scenario: Scenario,
    ks: Sequence[int] = DEFAULT_KS,
    strict: bool = True,
    method: Optional[str] = None,
) -> EvalReport:
    """
    mP@k over every ground-truth query.

    Queries without positives under the scenario are reported but left out
    of the mean; with no contributing query the report is flagged degenerate.
    """
    scenario = Scenario(scenario)
    by_query: Dict[str, List[GroundTruthLink]] = {}
    for link in ground_truth:
        by_query.setdefault(link.image_id_a, []).append(link)
        by_query.setdefault(link.image_id_b, []).append(link)

    rows: List[QueryPrecision] = []
    for query_id in sorted(by_query):
        if query_id not in rankings:
            raise MissingQuery(query_id)
        positives, ignored = scenario_positives(query_id, by_query[query_id], scenario)
        if not positives:
            rows.append(QueryPrecision(query_id=query_id, positives=0, contributing=False))
            continue
        ranking = [item for item in rankings[query_id] if item != query_id]
        rows.append(QueryPrecision(
            query_id=query_id,
            positives=len(positives),
            contributing=True,
            precision={k: precision_at_k(ranking, positives, ignored, k, strict) for k in ks},
        ))

    contributing = [row for row in rows if row.contributing]
    mp_at = {
        k: sum(row.precision[k] for row in contributing) / len(contributing)
        for k in ks
    } if contributing else {}

    report = EvalReport(
        scenario=scenario,
        method=method,
        ks=list(ks),
        mp_at=mp_at,
        per_query=rows,
        query_count=len(contributing),
        degenerate=not contributing,
    )
    if _logger:
        _logger.debug(
            "mean_precision scenario=%s method=%s queries=%d contributing=%d",
            scenario.value, method, len(rows), len(contributing),
        )
    return report


def load_ground_truth(path: str) -> List[GroundTruthLink]:
    """
    Read {"a": id, "b": id, "label": ...} lines into canonical undirected links.

    Repeated pairs with the same label collapse; conflicting labels are rejected.
    """
    try:
        with open(path, "r", encoding="utf-8") as f:
            lines = f.read().splitlines()
    except OSError as e:
        raise MalformedFile(path, f"cannot read ground truth: {e.strerror or e}")

    links: Dict[Tuple[str, str], GroundTruthLink] = {}
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            row = json.loads(line)
            if not isinstance(row, dict):
                raise ValueError("expected a JSON object")
            link = GroundTruthLink(image_id_a=row.get("a"), image_id_b=row.get("b"), label=row.get("label"))
        except ValidationError as e:
            raise MalformedFile(path, f"line {lineno}: {e.errors()[0]['msg']}")
        except ValueError as e:
            raise MalformedFile(path, f"line {lineno}: {e}")
        key = (link.image_id_a, link.image_id_b)
        if key in links and links[key].label != link.label:
            raise MalformedFile(
                path,
                f"line {lineno}: conflicting labels for {key[0]} - {key[1]} "
                f"({links[key].label.value} vs {link.label.value})",
            )
        links[key] = link
    return [links[key] for key in sorted(links)]


def save_ground_truth(path: str, links: Iterable[GroundTruthLink]) -> None:
    ordered = sorted(links, key=lambda link: (link.image_id_a, link.image_id_b))
    body = "".join(
        json.dumps({"a": link.image_id_a, "b": link.image_id_b, "label": link.label.value}, sort_keys=True) + "\n"
        for link in ordered
    )
    atomic_write(path, body)


def reports_to_json(reports: Sequence[EvalReport], provenance: Optional[dict] = None) -> str:
    payload = {"reports": [report.model_dump(mode="json") for report in reports]}
    if provenance is not None:
        payload["provenance"] = provenance
    return json.dumps(payload, indent=2, sort_keys=True) + "\n"


def reports_to_csv(reports: Sequence[EvalReport]) -> str:
    """One row per (method, scenario), one mP@k column per rank"""
    ks = sorted({k for report in reports for k in report.ks})
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(["method", "scenario", "queries", "degenerate"] + [f"mP@{k}" for k in ks])
    for report in reports:
        writer.writerow(
            [report.method or "", report.scenario.value, report.query_count, str(report.degenerate).lower()]
            + [f"{report.mp_at[k]:.4f}" if k in report.mp_at else "" for k in ks]
        )
    return buffer.getvalue()


def write_reports(json_path: str, csv_path: str, reports: Sequence[EvalReport], provenance: Optional[dict] = None) -> None:
    atomic_write(json_path, reports_to_json(reports, provenance))
    atomic_write(csv_path, reports_to_csv(reports))
