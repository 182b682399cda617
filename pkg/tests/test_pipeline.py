import json

import httpx
import pytest

from conftest import annotation, write_jsonl
from vidrerank.io import ValidationError
from vidrerank.judge import LLMJudge, OracleJudge
from vidrerank.pipeline import (
    QueryFailed,
    RunConfig,
    RunReport,
    ingest,
    make_pool,
    reference_order,
    rerank_query,
    run,
)


def test_ingest_builds_pools(toy_corpus):
    corpus = ingest(*toy_corpus, k=6)
    assert [p.query_id for p in corpus.pools] == ["q1", "q2", "q3"]
    pool = corpus.pools[0]
    assert pool.ids == [f"v{i}" for i in range(6)] and pool.tail == ("v6", "v7")
    assert corpus.qrels["q2"] == frozenset({"v3"})
    assert "Objects: dog, thing v0" in corpus.blocks(pool)["v0"]


def test_ingest_missing_annotation(tmp_path, toy_corpus):
    c, _, r = toy_corpus
    ann = write_jsonl(tmp_path / "a2.jsonl", [annotation(f"v{i}") for i in range(8) if i != 4])
    with pytest.raises(ValidationError, match="'v4'"):
        ingest(c, ann, r, k=6)


def test_ingest_tail_needs_no_annotation(tmp_path, toy_corpus):
    c, _, r = toy_corpus
    ann = write_jsonl(tmp_path / "a2.jsonl", [annotation(f"v{i}") for i in range(6)])
    assert len(ingest(c, ann, r, k=6).pools) == 3


def test_ingest_duplicate_query(tmp_path, toy_corpus):
    _, a, r = toy_corpus
    rec = {"query_id": "q1", "query_text": "t", "ranking": ["v0", "v1"]}
    c = write_jsonl(tmp_path / "c.jsonl", [rec, rec])
    with pytest.raises(ValidationError, match=":2:.*duplicate"):
        ingest(c, a, r)


def test_ingest_missing_qrels(tmp_path, toy_corpus):
    _, a, r = toy_corpus
    c = write_jsonl(tmp_path / "c.jsonl", [{"query_id": "q9", "query_text": "t", "ranking": ["v0", "v1"]}])
    with pytest.raises(ValidationError, match="no qrels"):
        ingest(c, a, r)


def test_ingest_malformed_line_reports_line_number(tmp_path, toy_corpus):
    _, a, r = toy_corpus
    c = tmp_path / "c.jsonl"
    c.write_text('{"query_id": "q1", "query_text": "t", "ranking": ["v0", "v1"]}\n{not json\n')
    with pytest.raises(ValidationError, match=":2"):
        ingest(c, a, r)


def test_pool_rejects_rising_scores():
    with pytest.raises(ValueError):
        make_pool("q", "t", ["a", "b"], 2, scores=[0.1, 0.9])


def test_reference_order_puts_relevant_first(toy_corpus):
    pool = ingest(*toy_corpus, k=6).pools[1]
    assert reference_order(pool, frozenset({"v3"})) == ["v3", "v0", "v1", "v2", "v4", "v5"]


def test_oracle_run_is_a_fixed_point_at_top(toy_corpus):
    corpus = ingest(*toy_corpus, k=6)
    report = run(RunConfig(k=6, passes=10), corpus)
    assert report.metrics["reranked"]["R@1"] == 100.0
    assert report.metrics["baseline"]["R@1"] == 0.0
    for q in report.queries:
        assert q["final_ranking"][-2:] == ["v6", "v7"]
        s = q["stats"]
        assert s["issued_comparisons"] == s["unique_calls"] + s["cache_hits"]


def test_full_budget_without_early_stop(tmp_path):
    vids = [f"v{i:02d}" for i in range(20)]
    ann = write_jsonl(tmp_path / "a.jsonl", [annotation(v) for v in vids])
    c = write_jsonl(tmp_path / "c.jsonl", [{"query_id": "q", "query_text": "t", "ranking": vids[::-1]}])
    r = write_jsonl(tmp_path / "r.jsonl", [{"query_id": "q", "video_id": "v00"}])
    report = run(RunConfig(k=20, passes=10, early_stop=False), ingest(c, ann, r))
    assert report.queries[0]["stats"]["issued_comparisons"] == 190


def test_scrambled_pool_of_five(tmp_path):
    vids = ["c", "e", "a", "d", "b"]
    ann = write_jsonl(tmp_path / "a.jsonl", [annotation(v) for v in vids])
    c = write_jsonl(tmp_path / "c.jsonl", [{"query_id": "q", "query_text": "t", "ranking": vids}])
    r = write_jsonl(tmp_path / "r.jsonl", [{"query_id": "q", "video_id": "a"}])
    corpus = ingest(c, ann, r, k=5)
    res = rerank_query(corpus.pools[0], corpus, RunConfig(k=5), OracleJudge(["a", "b", "c", "d", "e"]))
    assert res.window_order == ["a", "b", "c", "d", "e"]
    assert res.final_ranking[0] == "a"
    assert res.explanation.startswith("1. ")


def test_variants(toy_corpus):
    corpus = ingest(*toy_corpus, k=6)
    no_bt = run(RunConfig(k=6, variant="no_bt"), corpus)
    assert all(q["theta"] == {} and q["final_ranking"][:6] == q["window_order"] for q in no_bt.queries)
    no_cot = run(RunConfig(k=6, variant="no_cot"), corpus)
    assert no_cot.metrics["reranked"]["R@1"] == 100.0
    with pytest.raises(ValueError):
        run(RunConfig(k=6, variant="no_cot", judge="noisy_bt"), corpus)


def failing_llm():
    client = httpx.Client(transport=httpx.MockTransport(lambda r: httpx.Response(503, text="overloaded")))
    return LLMJudge("http://judge.test", "m", client=client, sleep=lambda s: None)


def test_judge_failure_without_fallback_is_reported(toy_corpus, tmp_path):
    corpus = ingest(*toy_corpus, k=6)
    report = run(RunConfig(k=6), corpus, judge=failing_llm(), out_dir=tmp_path / "run")
    assert [f["query_id"] for f in report.failures] == ["q1", "q2", "q3"]
    assert report.metrics == {}
    with pytest.raises(QueryFailed):
        rerank_query(corpus.pools[0], corpus, RunConfig(k=6), failing_llm())


def test_judge_failure_with_fallback_degrades(toy_corpus):
    corpus = ingest(*toy_corpus, k=6)
    report = run(RunConfig(k=6, fallback_coarse=True), corpus, judge=failing_llm())
    assert report.failures == []
    assert all(q["degraded"] and q["final_ranking"] == q["baseline_ranking"] for q in report.queries)
    assert report.metrics["reranked"] == report.metrics["baseline"]


def test_noisy_runs_are_byte_identical(toy_corpus, tmp_path):
    corpus = ingest(*toy_corpus, k=6)
    cfg = RunConfig(k=6, judge="noisy_bt", seed=3)
    run(cfg, corpus, out_dir=tmp_path / "a")
    run(cfg, corpus, out_dir=tmp_path / "b")
    for name in ("report.json", "rankings.jsonl", "comparisons.jsonl", "explanations.jsonl", "config.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


@pytest.mark.parametrize("judge", ["oracle", "noisy_bt"])
@pytest.mark.parametrize("mode", ["sequential", "odd_even"])
def test_parallelism_does_not_change_outputs(toy_corpus, tmp_path, judge, mode):
    corpus = ingest(*toy_corpus, k=6)
    outs = []
    for w in (1, 4):
        cfg = RunConfig(k=6, judge=judge, mode=mode, max_workers=w, query_workers=w)
        run(cfg, corpus, out_dir=tmp_path / f"w{w}")
        outs.append([(tmp_path / f"w{w}" / n).read_bytes()
                     for n in ("report.json", "rankings.jsonl", "comparisons.jsonl", "explanations.jsonl")])
    assert outs[0] == outs[1]


def test_report_round_trip_and_recompute(toy_corpus, tmp_path):
    corpus = ingest(*toy_corpus, k=6)
    report = run(RunConfig(k=6), corpus, out_dir=tmp_path / "run")
    loaded = RunReport.load(tmp_path / "run")
    assert loaded.to_json() == report.to_json()
    again = loaded.recompute_metrics(corpus.qrels)
    assert {k: v.to_dict() for k, v in again.items()} == report.metrics
    cfg = json.loads((tmp_path / "run" / "config.json").read_text())
    assert RunConfig.from_dict(cfg) == RunConfig(k=6)


def test_llm_pipeline_end_to_end(toy_corpus, tmp_path):
    """Scripted endpoint: prefers the block mentioning the relevant video, then one summary call."""
    corpus = ingest(*toy_corpus, k=6)
    calls = []

    def handler(request):
        body = json.loads(request.content)
        user = body["messages"][-1]["content"]
        calls.append(user)
        if "WINNER" not in user:
            return httpx.Response(200, json={"choices": [{"message": {"content": "v1 shows the dog best."}}]})
        a, b = user.split("[Video B]")
        verdict = "B" if "thing v1" in b else "A"
        return httpx.Response(200, json={"choices": [{"message": {"content": f"WINNER: {verdict}\nREASON: r"}}]})

    judge = LLMJudge("http://judge.test", "m", client=httpx.Client(transport=httpx.MockTransport(handler)))
    report = run(RunConfig(k=6, judge="llm", llm_url="http://judge.test", llm_model="m"),
                 ingest(*toy_corpus, k=6), judge=judge)
    q1 = report.queries[0]
    assert q1["final_ranking"][0] == "v1"
    assert q1["explanation"] == "v1 shows the dog best."
    assert len(calls) == sum(q["stats"]["unique_calls"] for q in report.queries) + 3
    assert corpus.pools[0].ids[1] == "v1"


def test_config_validation():
    with pytest.raises(ValueError):
        RunConfig(judge="llm")
    with pytest.raises(ValueError):
        RunConfig(variant="w/o")
    with pytest.raises(ValueError):
        RunConfig(alpha=0)
