import json

import numpy as np
import pytest

from newscap.cli import build_eval_corpus, main
from newscap.gateways import identity_vector
from newscap.ingest import load_corpus, make_fixtures
from newscap.metrics import evaluate
from newscap.ner import GazetteerNER


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def jsonl(path):
    return [json.loads(line) for line in open(path, encoding="utf-8")]


@pytest.fixture
def fx_dir(tmp_path, capsys):
    code, _, _ = run(capsys, "fixtures", "--seed", 42, "-n", 10, "--face-dim", 64, "--image-dim", 64, "--out", tmp_path / "fx")
    assert code == 0
    return tmp_path / "fx"


def entity_line(eid, name, vecs, faces=()):
    return json.dumps(
        {
            "entity_id": eid,
            "name": name,
            "type": "PERSON",
            "images": [{"asset_id": f"{eid}-{i}", "image_embedding": list(v), "face_embeddings": [list(f) for f in faces]} for i, v in enumerate(vecs)],
        }
    )


# -- exit codes -----------------------------------------------------------------

def test_usage_errors_exit_1(capsys, tmp_path):
    assert run(capsys, "bogus")[0] == 1
    assert run(capsys, "kb")[0] == 1
    assert run(capsys, "run", "--input", "x")[0] == 1
    assert run(capsys, "kb", "stats", "--kb", tmp_path, "--extra")[0] == 1


def test_help_exit_0(capsys):
    assert run(capsys, "--help")[0] == 0


def test_data_errors_exit_2(capsys, tmp_path):
    assert run(capsys, "kb", "stats", "--kb", tmp_path / "missing")[0] == 2
    bad = tmp_path / "bad.jsonl"
    bad.write_text("{not json\n")
    assert run(capsys, "kb", "build", "--kb", tmp_path / "kb", "--records", bad)[0] == 2


def test_run_missing_kb_is_usage(capsys, tmp_path):
    (tmp_path / "c.jsonl").write_text("")
    assert run(capsys, "run", "--input", tmp_path / "c.jsonl", "--output", tmp_path / "o.jsonl")[0] == 1


def test_run_bad_config_is_usage(capsys, fx_dir, tmp_path):
    code, _, err = run(capsys, "run", "--input", fx_dir / "corpus.jsonl", "--output", tmp_path / "o", "--kb", fx_dir / "kb", "--n-ctx", 10)
    assert code == 1 and "n_ctx" in err


# -- kb -------------------------------------------------------------------------

def test_kb_build_stats_query_export(capsys, tmp_path):
    recs = tmp_path / "r.jsonl"
    recs.write_text(entity_line("a", "Ann", [[1, 0, 0]], [[1, 0]]) + "\n" + entity_line("b", "Ben", [[0, 1, 0]], [[0, 1]]) + "\n")
    code, out, _ = run(capsys, "kb", "build", "--kb", tmp_path / "kb", "--records", recs)
    assert code == 0 and json.loads(out)["entities"] == 2
    code, out, _ = run(capsys, "kb", "stats", "--kb", tmp_path / "kb")
    assert json.loads(out) == {"entities": 2, "images": 2, "faces": 2, "triples": 0}
    q = tmp_path / "q.json"
    q.write_text("[0.1, 0.9]")
    code, out, _ = run(capsys, "kb", "query", "--kb", tmp_path / "kb", "--embedding", q, "--k", 1)
    assert code == 0 and json.loads(out)[0]["entity_id"] == "b"
    np.save(tmp_path / "q.npy", np.array([[1.0, 0.2, 0.0]]))
    code, out, _ = run(capsys, "kb", "query", "--kb", tmp_path / "kb", "--embedding", tmp_path / "q.npy", "--modality", "image")
    assert json.loads(out)[0]["entity_id"] == "a"
    code, out, _ = run(capsys, "kb", "query", "--kb", tmp_path / "kb", "--embedding", q, "--modality", "image")
    assert code == 2
    code, out, _ = run(capsys, "kb", "export", "--kb", tmp_path / "kb")
    assert [json.loads(l)["entity_id"] for l in out.splitlines()] == ["a", "b"]


def test_kb_stats_empty_store(capsys, tmp_path):
    recs = tmp_path / "empty.jsonl"
    recs.write_text("")
    assert run(capsys, "kb", "build", "--kb", tmp_path / "kb", "--records", recs, "--image-dim", 8)[0] == 0
    code, out, _ = run(capsys, "kb", "stats", "--kb", tmp_path / "kb")
    assert code == 0 and json.loads(out) == {"entities": 0, "images": 0, "faces": 0, "triples": 0}


def test_kb_dedup_planted_duplicate(capsys, fx_dir, tmp_path):
    kb_dir = fx_dir / "kb"
    code, out, _ = run(capsys, "kb", "export", "--kb", kb_dir)
    first = json.loads(out.splitlines()[0])
    dup = np.asarray(first["images"][0]["image_embedding"]) + 0.001 * identity_vector("noise", "image", 64)
    recs = tmp_path / "dup.jsonl"
    recs.write_text(entity_line("ent-zz-dup", "Zed Duplicate", [dup]) + "\n")
    assert run(capsys, "kb", "build", "--kb", kb_dir, "--records", recs)[0] == 0
    code, out, _ = run(capsys, "kb", "dedup", "--kb", kb_dir, "--delta", 0.95)
    report = json.loads(out)
    assert code == 0 and report["removed"] == 1 and report["removed_ids"] == ["ent-zz-dup-0"]
    assert json.loads(run(capsys, "kb", "dedup", "--kb", kb_dir)[1])["removed"] == 0


def test_kb_dedup_holdout_and_bad_delta(capsys, fx_dir, tmp_path):
    code, out, _ = run(capsys, "kb", "export", "--kb", fx_dir / "kb")
    vec = json.loads(out.splitlines()[0])["images"][0]["image_embedding"]
    (tmp_path / "h.json").write_text(json.dumps([vec]))
    code, out, _ = run(capsys, "kb", "dedup", "--kb", fx_dir / "kb", "--holdout", tmp_path / "h.json", "--dry-run")
    assert json.loads(out)["removed"] == 1
    assert json.loads(run(capsys, "kb", "stats", "--kb", fx_dir / "kb")[1])["images"] == json.loads(out)["kept"] + 1
    assert run(capsys, "kb", "dedup", "--kb", fx_dir / "kb", "--delta", 1.5)[0] == 2


# -- run ------------------------------------------------------------------------

def test_run_ten_deterministic(capsys, fx_dir, tmp_path):
    args = ["run", "--input", fx_dir / "corpus.jsonl", "--kb", fx_dir / "kb", "--gazetteer", fx_dir / "gazetteer.json"]
    assert run(capsys, *args, "--output", tmp_path / "a.jsonl")[0] == 0
    assert run(capsys, *args, "--output", tmp_path / "b.jsonl", "--workers", 4)[0] == 0
    a = (tmp_path / "a.jsonl").read_bytes()
    assert a == (tmp_path / "b.jsonl").read_bytes()
    rows = jsonl(tmp_path / "a.jsonl")
    assert len(rows) == 10 and all(r["caption"] for r in rows)
    expected = json.loads((fx_dir / "expected_matches.json").read_text())
    for r in rows:
        assert sorted(m["entity_id"] for m in r["provenance"]["matched_entities"]) == sorted(expected[r["article_id"]])


def test_run_resume(capsys, fx_dir, tmp_path):
    lines = (fx_dir / "corpus.jsonl").read_text().splitlines(keepends=True)
    half = tmp_path / "half.jsonl"
    half.write_text("".join(lines[:5]))
    out = tmp_path / "o.jsonl"
    base = ["--kb", fx_dir / "kb", "--output", out]
    assert run(capsys, "run", "--input", half, *base)[0] == 0
    code, stdout, _ = run(capsys, "run", "--input", fx_dir / "corpus.jsonl", *base, "--resume")
    summary = json.loads(stdout)
    assert (summary["processed"], summary["skipped"]) == (5, 5)
    full = tmp_path / "full.jsonl"
    run(capsys, "run", "--input", fx_dir / "corpus.jsonl", "--kb", fx_dir / "kb", "--output", full)
    assert out.read_bytes() == full.read_bytes()


def test_run_resume_after_torn_line(capsys, fx_dir, tmp_path):
    out = tmp_path / "o.jsonl"
    base = ["run", "--input", fx_dir / "corpus.jsonl", "--kb", fx_dir / "kb", "--output", out]
    run(capsys, *base)
    good = out.read_bytes()
    out.write_bytes(good[: len(good) - 40])
    assert json.loads(run(capsys, *base, "--resume")[1])["processed"] == 1
    assert out.read_bytes() == good


def test_run_empty_body_inline_error(capsys, fx_dir, tmp_path):
    corpus = tmp_path / "c.jsonl"
    lines = (fx_dir / "corpus.jsonl").read_text().splitlines(keepends=True)[:3]
    corpus.write_text("".join(lines) + json.dumps({"article_id": "empty-1", "body": ""}) + "\n")
    out = tmp_path / "o.jsonl"
    code, stdout, _ = run(capsys, "run", "--input", corpus, "--kb", fx_dir / "kb", "--output", out)
    assert code == 0
    rows = jsonl(out)
    assert len(rows) == 4
    err = [r for r in rows if "error" in r]
    assert err[0]["article_id"] == "empty-1" and err[0]["error"]["stage"] == "ingest"
    assert run(capsys, "run", "--input", corpus, "--kb", fx_dir / "kb", "--output", out, "--resume")[0] == 0
    assert len(jsonl(out)) == 4
    assert run(capsys, "run", "--input", corpus, "--kb", fx_dir / "kb", "--output", tmp_path / "p", "--fail-fast")[0] == 2


def test_run_gateway_outage_fail_fast_exit_3(capsys, fx_dir, tmp_path):
    script = tmp_path / "s.json"
    script.write_text(json.dumps({"rules": [{"schema": "hypothesis", "responses": [{"error": "provider", "status": 400}]}]}))
    args = ["run", "--input", fx_dir / "corpus.jsonl", "--kb", fx_dir / "kb", "--mock-script", script, "--output", tmp_path / "o"]
    assert run(capsys, *args, "--fail-fast")[0] == 3
    assert len(jsonl(tmp_path / "o")) == 1
    code, out, _ = run(capsys, *args)
    assert code == 0 and json.loads(out)["failed"] == 10
    assert all(r["error"]["gateway"] and r["error"]["stage"] == "hcma/stage 1" for r in jsonl(tmp_path / "o"))


def test_run_config_file_and_flag_precedence(capsys, fx_dir, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"version": 1, "kb_path": str(fx_dir / "kb"), "n_out": 3}))
    out = tmp_path / "o.jsonl"
    assert run(capsys, "run", "--config", cfg, "--input", fx_dir / "corpus.jsonl", "--output", out)[0] == 0
    assert all(len(r["caption"].split()) <= 3 for r in jsonl(out))
    assert run(capsys, "run", "--config", cfg, "--n-out", 50, "--input", fx_dir / "corpus.jsonl", "--output", out)[0] == 0
    assert any(len(r["caption"].split()) > 3 for r in jsonl(out))


# -- eval -----------------------------------------------------------------------

def test_eval_identical_is_perfect(capsys, fx_dir, tmp_path):
    preds = tmp_path / "p.jsonl"
    preds.write_text("".join(json.dumps({"article_id": r.article_id, "caption": r.gold_caption}) + "\n" for r in load_corpus(fx_dir / "corpus.jsonl")))
    code, out, _ = run(capsys, "eval", "--predictions", preds, "--gold", fx_dir / "corpus.jsonl", "--gazetteer", fx_dir / "gazetteer.json", "--output", tmp_path / "r.json")
    assert code == 0
    rep = json.loads((tmp_path / "r.json").read_text())
    assert rep["bleu4"] == 1.0
    assert rep["entity_scores"]["ALL"]["f1"] == 1.0
    assert "BLEU-4" in out


def test_eval_orphans(capsys, fx_dir, tmp_path):
    preds = tmp_path / "p.jsonl"
    preds.write_text(json.dumps({"article_id": "nope", "caption": "x"}) + "\n")
    code, _, err = run(capsys, "eval", "--predictions", preds, "--gold", fx_dir / "corpus.jsonl")
    assert code == 2 and "nope" in err and "fx42-00000" in err


def test_eval_matches_direct_metrics(capsys, fx_dir, tmp_path):
    out = tmp_path / "o.jsonl"
    run(capsys, "run", "--input", fx_dir / "corpus.jsonl", "--kb", fx_dir / "kb", "--output", out)
    run(capsys, "eval", "--predictions", out, "--gold", fx_dir / "corpus.jsonl", "--gazetteer", fx_dir / "gazetteer.json", "--output", tmp_path / "r.json")
    via_cli = json.loads((tmp_path / "r.json").read_text())
    gold = [{"article_id": r.article_id, "gold_caption": r.gold_caption} for r in load_corpus(fx_dir / "corpus.jsonl")]
    corpus = build_eval_corpus(jsonl(out), gold)
    direct = evaluate(corpus, GazetteerNER(json.loads((fx_dir / "gazetteer.json").read_text())))
    assert via_cli == json.loads(direct.to_json())


def test_fixtures_command_matches_library(capsys, fx_dir):
    fs = make_fixtures(42, 10, face_dim=64, image_dim=64)
    assert [r.article_id for r in load_corpus(fx_dir / "corpus.jsonl")] == [r.article_id for r in fs.corpus]
    assert json.loads((fx_dir / "expected_matches.json").read_text()) == fs.expected_matches
