"""End-to-end runs of the command line through main()"""

import json
import os

import pytest

from app.main import main
from app.models import ManifestEntry
from app.services.ingest import save_manifest


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    bench = root / "bench"
    status = main([
        "synth", "-o", str(bench),
        "--n-scenes", "12", "--n-families", "2", "--n-copies", "4", "--n-transfers", "2",
        "--seed", "3",
    ])
    assert status == 0
    index = root / "index.jsonl"
    assert main(["ingest", str(bench / "manifest.jsonl"), "-o", str(index)]) == 0
    return root, bench, index


def read(path):
    with open(path, "rb") as f:
        return f.read()


def test_synth_writes_benchmark(workspace):
    _, bench, _ = workspace
    for name in ("manifest.jsonl", "ground_truth.jsonl", "plants.jsonl", "spec.json", "index.jsonl"):
        assert (bench / name).exists()
    assert len(os.listdir(bench / "keypoints")) == 12 + 4 + 2


def test_ingest_is_reproducible(workspace):
    root, bench, index = workspace
    again = root / "again.jsonl"
    assert main(["ingest", str(bench / "manifest.jsonl"), "-o", str(again), "--workers", "3"]) == 0
    assert read(index) == read(again)
    sidecar = json.loads(read(str(again) + ".run.json"))
    assert sidecar["command"] == "ingest"
    assert "ingest" in sidecar["timings_ms"]


def test_query_match_only(workspace):
    root, bench, index = workspace
    out = root / "query.json"
    keypoints = bench / "keypoints" / "copy-0000.json"
    assert main(["query", str(index), str(keypoints), "--no-verify", "-o", str(out)]) == 0
    payload = json.loads(read(out))
    [result] = payload["queries"]
    assert result["query_id"] == "copy-0000"
    assert result["verified"] is False
    ids = [hit["image_id"] for hit in result["hits"]]
    assert "copy-0000" not in ids
    assert len(ids) == 12 + 4 + 2 - 1
    assert all(hit["transform"] is None and hit["score"] is None for hit in result["hits"])
    assert "workers" not in payload["provenance"]["config"]
    assert "timings_ms" not in payload["provenance"]


def test_query_verified_and_report(workspace):
    root, bench, index = workspace
    out = root / "verified.json"
    keypoints = bench / "keypoints" / "copy-0001.json"
    assert main(["query", str(index), str(keypoints), "--query-id", "probe", "--shortlist", "5", "-o", str(out)]) == 0
    [result] = json.loads(read(out))["queries"]
    assert result["query_id"] == "probe"
    assert len(result["hits"]) == 5
    assert result["hits"][0]["score"] is not None

    first, second = root / "report-a", root / "report-b"
    for target in (first, second):
        assert main(["report", str(out), str(bench / "manifest.jsonl"), "-o", str(target), "--max-hits", "3"]) == 0
    html = read(first / "index.html")
    assert html == read(second / "index.html")
    assert b"probe" in html
    assert b"skeleton only" in html


def test_link_all_is_independent_of_workers(workspace):
    root, _, index = workspace
    serial, parallel = root / "edges-1.json", root / "edges-8.json"
    assert main(["link-all", str(index), "-o", str(serial), "--workers", "1"]) == 0
    assert main(["link-all", str(index), "-o", str(parallel), "--workers", "8"]) == 0
    assert read(serial) == read(parallel)
    edges = json.loads(read(serial))["edges"]
    assert edges
    assert all(edge["score"] > 0 and edge["query_id"] != edge["target_id"] for edge in edges)


def test_evaluate_writes_reports(workspace):
    root, bench, index = workspace
    out = root / "eval"
    assert main(["evaluate", str(index), str(bench / "ground_truth.jsonl"), "-o", str(out)]) == 0
    rows = read(out / "report.csv").decode("utf-8").splitlines()
    assert rows[0].startswith("method,scenario,queries,degenerate,mP@1")
    assert len(rows) == 1 + 2 * 2 * 3
    reports = json.loads(read(out / "report.json"))["reports"]
    assert {r["method"] for r in reports} == {
        "dist_min match-only", "dist_min verified", "dist_t match-only", "dist_t verified",
    }


def test_evaluate_rejects_unknown_query(workspace):
    root, _, index = workspace
    gt = root / "unknown.jsonl"
    gt.write_text('{"a": "scene-0000", "b": "nowhere", "label": "copy"}\n')
    assert main(["evaluate", str(index), str(gt), "-o", str(root / "eval-bad")]) == 1


def test_single_record_index_has_no_edges(workspace, tmp_path):
    _, bench, _ = workspace
    manifest = tmp_path / "manifest.jsonl"
    save_manifest(str(manifest), [
        ManifestEntry(image_id="only", keypoints_path=str(bench / "keypoints" / "scene-0000.json")),
    ])
    index = tmp_path / "index.jsonl"
    assert main(["ingest", str(manifest), "-o", str(index)]) == 0
    out = tmp_path / "edges.json"
    assert main(["link-all", str(index), "-o", str(out)]) == 0
    assert json.loads(read(out))["edges"] == []


def test_missing_keypoints_file_is_an_input_error(workspace, tmp_path):
    _, _, index = workspace
    status = main(["query", str(index), str(tmp_path / "absent.json"), "-o", str(tmp_path / "out.json")])
    assert status == 1
    assert not (tmp_path / "out.json").exists()


def test_corrupt_index_is_an_input_error(tmp_path):
    index = tmp_path / "index.jsonl"
    index.write_text('{"format": "poselink-index"')
    assert main(["link-all", str(index), "-o", str(tmp_path / "edges.json")]) == 1


def test_invalid_setting_is_an_input_error(workspace, tmp_path):
    _, _, index = workspace
    assert main(["link-all", str(index), "-o", str(tmp_path / "e.json"), "--t", "-1"]) == 1


def test_print_config(capsys):
    assert main(["ingest", "unused.jsonl", "-o", "unused", "--print-config", "--shortlist", "7", "--no-flip"]) == 0
    config = json.loads(capsys.readouterr().out)
    assert config["shortlist_len"] == 7
    assert config["flip_enabled"] is False


def test_query_is_independent_of_workers(workspace):
    root, bench, index = workspace
    queries = [str(bench / "keypoints" / name) for name in ("scene-0001.json", "transfer-0000.json")]
    outputs = []
    for workers in ("1", "8", "8"):
        out = root / f"query-{len(outputs)}.json"
        assert main(["query", str(index), *queries, "--workers", workers, "-o", str(out)]) == 0
        outputs.append(read(out))
    assert outputs[0] == outputs[1] == outputs[2]
