import os
import time
from collections import Counter

import pytest

from app.models import ImageMetric, InvalidSpec, LinkLabel, MatchConfig, Scenario, SyntheticSpec
from app.services.evalkit import ground_truth_queries, load_ground_truth, mean_precision
from app.services.fast_match import FastMatcher
from app.services.geom_verify import verify_image_pair
from app.services.ingest import build_index, load_manifest
from app.services.pipeline import QueryEngine
from app.services.pose_core import pose_distance_q
from app.services.synthetic import generate_synthetic_benchmark, write_benchmark

CLEAN = {"noise_sigma": 0.0, "dropout": 0.0}


def test_generation_is_deterministic():
    spec = {"n_scenes": 12, "n_families": 3, "n_copies": 4, "n_transfers": 3}
    assert generate_synthetic_benchmark(spec, seed=3) == generate_synthetic_benchmark(spec, seed=3)
    assert generate_synthetic_benchmark(spec, seed=3).index != generate_synthetic_benchmark(spec, seed=4).index


@pytest.mark.parametrize("spec", [
    {"n_scenes": 3, "n_families": 5},
    {"dropout": 1.5},
    {"min_figures": 3, "max_figures": 2},
    {"scale_range": (2.0, 1.0)},
])
def test_invalid_spec(spec):
    with pytest.raises(InvalidSpec):
        generate_synthetic_benchmark(spec)


def test_accepts_spec_model():
    spec = SyntheticSpec(n_scenes=5, n_families=1, n_copies=1, n_transfers=0)
    bench = generate_synthetic_benchmark(spec, seed=1)
    assert bench.spec == spec
    assert bench.index.image_ids()[-1] == "copy-0000"


def test_family_cliques(small_bench):
    labels = Counter(link.label for link in small_bench.ground_truth)
    # 4 families of source + 2 copies + 1 transfer
    assert labels[LinkLabel.COPY] == 4 * 3
    assert labels[LinkLabel.COMPOSITION_TRANSFER] == 4 * 3
    for link in small_bench.ground_truth:
        involves_transfer = "transfer" in link.image_id_a or "transfer" in link.image_id_b
        assert (link.label == LinkLabel.COMPOSITION_TRANSFER) is involves_transfer
    keys = [(link.image_id_a, link.image_id_b) for link in small_bench.ground_truth]
    assert keys == sorted(keys)


def test_plants(small_bench):
    copies = [p for p in small_bench.plants if p.label == LinkLabel.COPY]
    transfers = [p for p in small_bench.plants if p.label == LinkLabel.COMPOSITION_TRANSFER]
    assert len(copies) == 8 and len(transfers) == 4
    assert sum(p.flipped for p in copies) == 4
    assert len({p.source_id for p in small_bench.plants}) == 4
    assert len(small_bench.index.records) == 40 + 8 + 4


def test_clean_copies_match_their_source_exactly():
    bench = generate_synthetic_benchmark({"n_scenes": 10, "n_families": 2, "n_copies": 6, "n_transfers": 0, **CLEAN}, seed=5)
    by_id = bench.index.by_id()
    cfg = MatchConfig()
    for plant in bench.plants:
        copy, source = by_id[plant.image_id], by_id[plant.source_id]
        assert len(copy.poses) == len(source.poses)
        for r, s in zip(copy.poses, source.poses):
            assert pose_distance_q(r, s, cfg).value == pytest.approx(0.0, abs=1e-9)


def test_mirrored_copies_verify_as_flipped(skeleton):
    spec = {"n_scenes": 10, "n_families": 3, "n_copies": 9, "n_transfers": 0, "flip_probability": 1.0, **CLEAN}
    bench = generate_synthetic_benchmark(spec, seed=11)
    cfg = MatchConfig()
    by_id = bench.index.by_id()
    matcher = FastMatcher(bench.index, cfg)
    for plant in bench.plants:
        assert plant.flipped
        copy = by_id[plant.image_id]
        entry = {e.image_id: e for e in matcher.rank_all(copy)}[plant.source_id]
        link = verify_image_pair(copy, by_id[plant.source_id], entry.candidates, skeleton, cfg)
        assert link is not None
        assert link.best_transform.flipped is True
        assert link.best_transform.scale == pytest.approx(plant.scale, rel=1e-6)
        assert link.score >= sum(int((p.confidences() > 0).sum()) for p in copy.poses)


def test_written_benchmark_reloads(tmp_path, small_bench, cfg):
    paths = write_benchmark(small_bench, str(tmp_path))
    assert all(os.path.exists(path) for path in paths.values())
    index = build_index(load_manifest(paths["manifest"]), cfg, base_dir=str(tmp_path))
    assert index.image_ids() == small_bench.index.image_ids()
    for loaded, original in zip(index.records, small_bench.index.records):
        assert loaded.poses == original.poses
        assert loaded.source_path == f"keypoints/{original.image_id}.json"
    assert load_ground_truth(paths["ground_truth"]) == small_bench.ground_truth


@pytest.fixture(scope="module")
def evaluation():
    """Default-size benchmark ranked by every method variant, single-threaded"""
    bench = generate_synthetic_benchmark(seed=0)
    engine = QueryEngine(bench.index, MatchConfig(workers=1))
    by_id = bench.index.by_id()
    query_ids = ground_truth_queries(bench.ground_truth)
    rankings, seconds = {}, {}
    for metric in (ImageMetric.T, ImageMetric.MIN):
        plain_key, checked_key = f"{metric.value} match-only", f"{metric.value} verified"
        rankings[plain_key], rankings[checked_key] = {}, {}
        start = time.perf_counter()
        for query_id in query_ids:
            plain, checked = engine.query_both(by_id[query_id], metric)
            rankings[plain_key][query_id] = [hit.image_id for hit in plain]
            rankings[checked_key][query_id] = [hit.image_id for hit in checked]
        seconds[metric] = time.perf_counter() - start
    return bench, rankings, seconds


def mean_over(report, prefix, k):
    rows = [row for row in report.per_query if row.contributing and row.query_id.startswith(prefix)]
    assert rows
    return sum(row.precision[k] for row in rows) / len(rows)


def test_planted_copies_rank_first(evaluation):
    bench, rankings, _ = evaluation
    report = mean_precision(rankings["t verified"], bench.ground_truth, Scenario.COPY_POSITIVE, ks=[1])
    assert mean_over(report, "copy-", 1) >= 0.95


def test_transfers_are_found(evaluation):
    bench, rankings, _ = evaluation
    report = mean_precision(rankings["t verified"], bench.ground_truth, Scenario.ALL_POSITIVE, ks=[5])
    assert mean_over(report, "transfer-", 5) >= 0.80


def test_method_ordering(evaluation):
    bench, rankings, _ = evaluation
    mp1 = {
        method: mean_precision(ranking, bench.ground_truth, Scenario.ALL_POSITIVE, ks=[1]).mp_at[1]
        for method, ranking in rankings.items()
    }
    assert mp1["t verified"] >= mp1["t match-only"]
    assert mp1["min verified"] >= mp1["min match-only"]
    assert mp1["t match-only"] >= mp1["min match-only"]


def test_verified_ranking_is_the_reranked_shortlist(evaluation):
    _, rankings, _ = evaluation
    for query_id, ranking in rankings["t verified"].items():
        assert len(ranking) == 50
        assert set(ranking) == set(rankings["t match-only"][query_id][:50])


def test_benchmark_runs_within_budget(evaluation):
    _, _, seconds = evaluation
    assert seconds[ImageMetric.T] < 60.0
