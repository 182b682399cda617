"""End-to-end re-ranking runs: ingestion, per-query orchestration and run artifacts.

A run reads three line-delimited files:

candidates
    ``{"query_id", "query_text", "ranking": [video ids...], "scores": [...]}``
    where ``ranking`` is the full coarse ranking (best first) and ``scores``
    are optional, non-increasing similarity scores.
annotations
    ``{"video_id", "objects", "actions", "scenes", "summary"}``
qrels
    ``{"query_id", "relevant": [video ids...]}`` (``"video_id"`` is accepted for
    a single relevant item).

and writes ``report.json``, ``rankings.jsonl``, ``comparisons.jsonl``,
``explanations.jsonl`` and ``config.json`` to an output directory.
"""

from __future__ import annotations

import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Mapping, Sequence

from . import __version__
from .annotate import StructuredAnnotation, load_annotations, render_annotation_block
from .btagg import PreferenceMatrix, fit_bt, rank_by_ability
from .evaluation import MetricsReport, compute_metrics, rank_of_truth
from .io import ValidationError, iter_jsonl, write_jsonl
from .judge import CachedJudge, JudgeError, KeyPolicy, LLMJudge, NoisyBTJudge, OracleJudge, summarize_reasons
from .ranker import ComparisonLog, Query, SweepAborted, SweepConfig, SweepMode, single_shot_rank, sweep_rerank

logger = logging.getLogger(__name__)

VARIANTS = ("full", "no_bt", "no_cot")
# parallelism and audit paths never change results, so reports leave them out
EXECUTION_ONLY = ("max_workers", "query_workers", "transcript")


@dataclass(frozen=True)
class Candidate:
    video_id: str
    coarse_rank: int
    coarse_score: float | None = None


@dataclass(frozen=True)
class CandidatePool:
    query_id: str
    query_text: str
    candidates: tuple[Candidate, ...]
    tail: tuple[str, ...] = ()

    def __post_init__(self):
        ranks = [c.coarse_rank for c in self.candidates]
        if ranks != list(range(1, len(ranks) + 1)):
            raise ValueError(f"{self.query_id}: coarse ranks must run 1..K without gaps")
        scores = [c.coarse_score for c in self.candidates if c.coarse_score is not None]
        if any(b > a for a, b in zip(scores, scores[1:])):
            raise ValueError(f"{self.query_id}: coarse scores must be non-increasing with rank")

    @property
    def ids(self) -> list[str]:
        return [c.video_id for c in self.candidates]

    @property
    def full_ranking(self) -> list[str]:
        return self.ids + list(self.tail)

    @property
    def query(self) -> Query:
        return Query(self.query_id, self.query_text)


@dataclass
class Corpus:
    pools: list[CandidatePool]
    annotations: dict[str, StructuredAnnotation]
    qrels: dict[str, frozenset[str]]

    @property
    def k(self) -> int:
        return max((len(p.candidates) for p in self.pools), default=0)

    def blocks(self, pool: CandidatePool) -> dict[str, str]:
        return {vid: render_annotation_block(self.annotations[vid]) for vid in pool.ids}


def make_pool(query_id: str, query_text: str, ranking: Sequence[str], k: int,
              scores: Sequence[float] | None = None) -> CandidatePool:
    if len(set(ranking)) != len(ranking):
        raise ValueError(f"{query_id}: ranking repeats a video id")
    head = ranking[:k]
    cands = tuple(
        Candidate(vid, i + 1, None if scores is None else float(scores[i])) for i, vid in enumerate(head)
    )
    return CandidatePool(query_id, query_text, cands, tuple(ranking[k:]))


def ingest(candidates_file, annotations_file, qrels_file, k: int = 20) -> Corpus:
    """Load and cross-check a corpus. Any problem raises :class:`ValidationError`."""
    annotations = load_annotations(annotations_file)

    qrels: dict[str, frozenset[str]] = {}
    for lineno, rec in iter_jsonl(qrels_file):
        try:
            qid = str(rec["query_id"])
            rel = rec["relevant"] if "relevant" in rec else [rec["video_id"]]
        except KeyError as exc:
            raise ValidationError(f"{qrels_file}:{lineno}: missing field {exc}") from exc
        if isinstance(rel, str):
            rel = [rel]
        if not rel:
            raise ValidationError(f"{qrels_file}:{lineno}: query {qid!r} has no relevant videos")
        qrels[qid] = qrels.get(qid, frozenset()) | frozenset(map(str, rel))

    pools: list[CandidatePool] = []
    seen: set[str] = set()
    for lineno, rec in iter_jsonl(candidates_file):
        try:
            qid = str(rec["query_id"])
            text = str(rec["query_text"])
            ranking = [str(v) for v in rec["ranking"]]
            scores = rec.get("scores")
        except (KeyError, TypeError) as exc:
            raise ValidationError(f"{candidates_file}:{lineno}: bad candidate record ({exc})") from exc
        if qid in seen:
            raise ValidationError(f"{candidates_file}:{lineno}: duplicate query id {qid!r}")
        seen.add(qid)
        if len(ranking) < 2:
            raise ValidationError(f"{candidates_file}:{lineno}: query {qid!r} needs at least two candidates")
        if scores is not None and len(scores) != len(ranking):
            raise ValidationError(f"{candidates_file}:{lineno}: scores and ranking differ in length")
        try:
            pool = make_pool(qid, text, ranking, k, scores)
        except ValueError as exc:
            raise ValidationError(f"{candidates_file}:{lineno}: {exc}") from exc
        for vid in pool.ids:
            if vid not in annotations:
                raise ValidationError(f"{candidates_file}:{lineno}: no annotation for pooled video {vid!r}")
        if qid not in qrels:
            raise ValidationError(f"{candidates_file}:{lineno}: no qrels for query {qid!r}")
        pools.append(pool)
    return Corpus(pools, annotations, qrels)


@dataclass(frozen=True)
class RunConfig:
    k: int = 20
    passes: int = 10
    mode: str = "sequential"
    cache_policy: str = "ordered"
    cache_capacity: int | None = None
    judge: str = "oracle"
    llm_url: str | None = None
    llm_model: str | None = None
    api_key_env: str = "VIDRERANK_API_KEY"
    transcript: str | None = None
    noise_gamma: float = 1.3
    alpha: float = 1e-3
    tol: float = 1e-8
    max_iter: int = 1000
    seed: int = 0
    early_stop: bool = True
    fallback_coarse: bool = False
    variant: str = "full"
    max_workers: int = 1
    query_workers: int = 1

    def __post_init__(self):
        SweepMode(self.mode)
        KeyPolicy(self.cache_policy)
        if self.k < 2 or self.passes < 1:
            raise ValueError("need k >= 2 and passes >= 1")
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")
        if self.judge not in ("oracle", "noisy_bt", "llm"):
            raise ValueError(f"unknown judge {self.judge!r}")
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.judge == "llm" and not (self.llm_url and self.llm_model):
            raise ValueError("the llm judge needs llm_url and llm_model")

    def to_dict(self) -> dict:
        return asdict(self)

    def semantic_dict(self) -> dict:
        """Config echo for reports: everything except execution-only settings."""
        d = asdict(self)
        for key in EXECUTION_ONLY:
            d.pop(key)
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "RunConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


def reference_order(pool: CandidatePool, relevant: frozenset[str]) -> list[str]:
    """Relevant pooled videos first, then the rest, each group in coarse order."""
    ids = pool.ids
    return [v for v in ids if v in relevant] + [v for v in ids if v not in relevant]


def make_judge(cfg: RunConfig, corpus: Corpus):
    """Judge named by ``cfg.judge``. Offline judges derive their truth from qrels."""
    if cfg.judge == "oracle":
        return OracleJudge({p.query_id: reference_order(p, corpus.qrels[p.query_id]) for p in corpus.pools})
    if cfg.judge == "noisy_bt":
        theta = {}
        for p in corpus.pools:
            order = reference_order(p, corpus.qrels[p.query_id])
            theta[p.query_id] = {v: cfg.noise_gamma ** (len(order) - 1 - i) for i, v in enumerate(order)}
        return NoisyBTJudge(theta, seed=cfg.seed)
    return LLMJudge.from_env(cfg.llm_url, cfg.llm_model, env_var=cfg.api_key_env, transcript_path=cfg.transcript)


class QueryFailed(RuntimeError):
    def __init__(self, query_id: str, message: str, log: ComparisonLog | None = None):
        super().__init__(f"query {query_id}: {message}")
        self.query_id = query_id
        self.log = log


@dataclass
class QueryResult:
    query_id: str
    final_ranking: list[str]
    window_order: list[str]
    theta: dict[str, float]
    explanation: str
    stats: dict
    baseline_ranking: list[str]
    degraded: bool = False
    bt_iterations: int = 0
    bt_converged: bool = True
    error: str | None = None
    log: ComparisonLog | None = field(default=None, repr=False)

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("log")
        return d


def _explain(judge, reasons: list[str]) -> str:
    # both orientations of a pair may give the same justification; keep one
    reasons = list(dict.fromkeys(reasons))
    if not reasons:
        reasons = ["no pairwise justification was recorded"]
    return summarize_reasons(reasons, backend=judge if isinstance(judge, LLMJudge) else None)


def rerank_query(pool: CandidatePool, corpus: Corpus, cfg: RunConfig, judge) -> QueryResult:
    """Sweep, fit Bradley-Terry on the unique outcomes, sort, append the coarse tail, explain.

    Raises :class:`QueryFailed` on judge failure unless ``cfg.fallback_coarse``,
    in which case the coarse order comes back with ``degraded=True``.
    """
    blocks = corpus.blocks(pool)
    cached = CachedJudge(judge, cfg.cache_policy, cfg.cache_capacity)
    sweep_cfg = SweepConfig(max(2, len(pool.ids)), cfg.passes, cfg.mode, cfg.early_stop, cfg.max_workers)
    baseline = pool.full_ranking

    def degraded(message: str, log: ComparisonLog | None) -> QueryResult:
        if not cfg.fallback_coarse:
            raise QueryFailed(pool.query_id, message, log)
        logger.warning("query %s degraded to coarse order: %s", pool.query_id, message)
        return QueryResult(pool.query_id, baseline, pool.ids, {}, "", cached.stats.to_dict(), baseline,
                           degraded=True, error=message, log=log)

    if cfg.variant == "no_cot":
        try:
            order = single_shot_rank(pool.ids, pool.query, judge, blocks)
        except JudgeError as exc:
            return degraded(str(exc), None)
        return QueryResult(pool.query_id, order + list(pool.tail), order, {}, "", cached.stats.to_dict(), baseline,
                           log=ComparisonLog(pool.query_id))

    try:
        sweep = sweep_rerank(pool.ids, pool.query, cached, sweep_cfg, blocks)
    except SweepAborted as exc:
        return degraded(str(exc), exc.log)

    if cfg.variant == "no_bt":
        head, theta, iters, conv = list(sweep.order), {}, 0, True
    else:
        pm = PreferenceMatrix.from_outcomes(pool.ids, sweep.log.unique_outcomes())
        ability = fit_bt(pm, alpha=cfg.alpha, tol=cfg.tol, max_iter=cfg.max_iter)
        head = rank_by_ability(pool.ids, ability.theta, [c.coarse_rank for c in pool.candidates])
        theta, iters, conv = ability.as_dict(), ability.iterations, ability.converged

    try:
        explanation = _explain(judge, sweep.log.reasons(unique_only=True))
    except JudgeError as exc:
        return degraded(f"explanation failed: {exc}", sweep.log)

    return QueryResult(
        pool.query_id, head + list(pool.tail), list(sweep.order), theta, explanation,
        cached.stats.to_dict(), baseline, bt_iterations=iters, bt_converged=conv, log=sweep.log,
    )


@dataclass
class RunReport:
    config: dict
    queries: list[dict]
    metrics: dict[str, dict]
    failures: list[dict]
    version: str = __version__

    def to_dict(self) -> dict:
        return {"version": self.version, "config": self.config, "metrics": self.metrics,
                "failures": self.failures, "queries": self.queries}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2, ensure_ascii=False) + "\n"

    @classmethod
    def from_dict(cls, d: Mapping) -> "RunReport":
        return cls(d["config"], list(d["queries"]), dict(d["metrics"]), list(d["failures"]), d.get("version", ""))

    @classmethod
    def load(cls, path: str | os.PathLike) -> "RunReport":
        path = Path(path)
        if path.is_dir():
            path = path / "report.json"
        return cls.from_dict(json.loads(path.read_text(encoding="utf-8")))

    def recompute_metrics(self, qrels: Mapping[str, frozenset[str]]) -> dict[str, MetricsReport]:
        qs = self.queries
        return {
            "baseline": compute_metrics([rank_of_truth(q["baseline_ranking"], qrels[q["query_id"]]) for q in qs]),
            "reranked": compute_metrics([rank_of_truth(q["final_ranking"], qrels[q["query_id"]]) for q in qs]),
        }


def run(cfg: RunConfig, corpus: Corpus, judge=None, out_dir: str | os.PathLike | None = None) -> RunReport:
    """Re-rank every query in ``corpus`` and score baseline and re-ranked lists.

    Queries run concurrently up to ``cfg.query_workers``; results are collected
    in corpus order, so the report does not depend on the worker count when
    the judge is deterministic. Failed queries are listed in ``failures`` and
    left out of both metric tables.
    """
    judge = judge if judge is not None else make_judge(cfg, corpus)
    if cfg.variant == "no_cot" and not hasattr(judge, "rank_listwise"):
        raise ValueError(f"the {cfg.judge} judge cannot rank a whole pool in one shot")

    def one(pool: CandidatePool):
        try:
            return rerank_query(pool, corpus, cfg, judge)
        except QueryFailed as exc:
            return exc

    if cfg.query_workers > 1:
        with ThreadPoolExecutor(max_workers=cfg.query_workers) as ex:
            outcomes = list(ex.map(one, corpus.pools))
    else:
        outcomes = [one(p) for p in corpus.pools]

    results = [o for o in outcomes if isinstance(o, QueryResult)]
    failures = [{"query_id": o.query_id, "error": str(o)} for o in outcomes if isinstance(o, QueryFailed)]
    metrics = {}
    if results:
        base = [rank_of_truth(r.baseline_ranking, corpus.qrels[r.query_id]) for r in results]
        rer = [rank_of_truth(r.final_ranking, corpus.qrels[r.query_id]) for r in results]
        metrics = {"baseline": compute_metrics(base).to_dict(), "reranked": compute_metrics(rer).to_dict()}

    report = RunReport(cfg.semantic_dict(), [r.to_dict() for r in results], metrics, failures)
    if out_dir is not None:
        write_run(out_dir, report, results, outcomes, cfg)
    return report


def write_run(out_dir, report: RunReport, results: list[QueryResult], outcomes=(), cfg: RunConfig | None = None) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    config = cfg.to_dict() if cfg is not None else report.config
    (out / "report.json").write_text(report.to_json(), encoding="utf-8")
    (out / "config.json").write_text(json.dumps(config, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    write_jsonl(out / "rankings.jsonl", (
        {"query_id": r.query_id, "ranking": r.final_ranking, "window_order": r.window_order,
         "degraded": r.degraded} for r in results))
    write_jsonl(out / "explanations.jsonl", (
        {"query_id": r.query_id, "explanation": r.explanation} for r in results))

    logs = [r.log for r in results if r.log is not None]
    logs += [o.log for o in outcomes if isinstance(o, QueryFailed) and o.log is not None]
    with open(out / "comparisons.jsonl", "w", encoding="utf-8") as fh:
        for log in logs:
            fh.write(log.to_jsonl())
