"""Sliding-window re-ranking of a top-K pool with a pairwise judge.

Each pass walks the adjacent pairs of the current order and swaps a pair
whenever the judge prefers the right-hand video. Two schedules exist:

``sequential``
    left to right, one pair at a time, each comparison seeing the swaps made
    before it in the same pass.
``odd_even``
    pairs (1,2), (3,4), ... are judged together, swaps applied, then pairs
    (2,3), (4,5), ... on the updated order. Pairs inside a phase are
    disjoint, so their judgments can run concurrently.

Both schedules count one pass against the same budget of ``passes`` and stop
early after a pass without swaps when ``early_stop`` is set.
"""

from __future__ import annotations

import enum
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from .judge import CandidateRef, Judge, JudgeError, Judgment, PairQuery


class SweepMode(str, enum.Enum):
    SEQUENTIAL = "sequential"
    ODD_EVEN = "odd_even"


@dataclass(frozen=True)
class SweepConfig:
    k: int = 20
    passes: int = 10
    mode: SweepMode = SweepMode.SEQUENTIAL
    early_stop: bool = True
    max_workers: int = 1

    def __post_init__(self):
        object.__setattr__(self, "mode", SweepMode(self.mode))
        if self.k < 2:
            raise ValueError("pool size must be at least 2")
        if self.passes < 1:
            raise ValueError("need at least one pass")
        if self.max_workers < 1:
            raise ValueError("max_workers must be >= 1")


@dataclass(frozen=True)
class Query:
    query_id: str
    text: str


@dataclass(frozen=True)
class LogEntry:
    pass_index: int
    position: int
    left_id: str
    right_id: str
    winner_id: str
    reason: str
    cached: bool

    def to_record(self, query_id: str) -> dict:
        return {
            "query_id": query_id,
            "pass": self.pass_index,
            "position": self.position,
            "left": self.left_id,
            "right": self.right_id,
            "winner": self.winner_id,
            "cached": self.cached,
            "reason": self.reason,
        }


@dataclass
class ComparisonLog:
    query_id: str
    entries: list[LogEntry] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def unique_outcomes(self) -> list[tuple[str, str]]:
        """``(winner, loser)`` for every non-replayed judgment, in log order."""
        out = []
        for e in self.entries:
            if not e.cached:
                loser = e.right_id if e.winner_id == e.left_id else e.left_id
                out.append((e.winner_id, loser))
        return out

    def reasons(self, unique_only: bool = True) -> list[str]:
        return [e.reason for e in self.entries if e.reason and not (unique_only and e.cached)]

    def to_jsonl(self) -> str:
        return "".join(json.dumps(e.to_record(self.query_id), sort_keys=True) + "\n" for e in self.entries)


@dataclass
class RankingState:
    order: list[str]
    pass_index: int = 0
    swaps_last_pass: int = 0


@dataclass
class SweepResult:
    order: list[str]
    log: ComparisonLog
    passes_run: int
    swaps_per_pass: list[int]

    def __iter__(self):
        # allows ``order, log = sweep_rerank(...)``
        return iter((self.order, self.log))


class SweepAborted(RuntimeError):
    """The judge failed mid-sweep. ``log`` holds every comparison made so far."""

    def __init__(self, message: str, log: ComparisonLog, state: RankingState):
        super().__init__(message)
        self.log = log
        self.state = state


def odd_even_phases(k: int) -> tuple[list[int], list[int]]:
    """0-based left positions of the pairs judged in each phase of a pass."""
    return list(range(0, k - 1, 2)), list(range(1, k - 1, 2))


class _PairBuilder:
    def __init__(self, query: Query, blocks: Mapping[str, str] | None):
        self.query = query
        self.blocks = blocks or {}

    def __call__(self, left: str, right: str) -> PairQuery:
        return PairQuery(
            self.query.query_id,
            self.query.text,
            CandidateRef(left, self.blocks.get(left) or left),
            CandidateRef(right, self.blocks.get(right) or right),
        )


def _entry(pass_index: int, pos: int, pq: PairQuery, j: Judgment) -> LogEntry:
    return LogEntry(pass_index, pos, pq.left.video_id, pq.right.video_id, j.winner_id(pq), j.reason, j.cached)


def sequential_pass(state: RankingState, judge: Judge, make_pair, log: ComparisonLog) -> RankingState:
    order = state.order
    p = state.pass_index + 1
    swaps = 0
    for i in range(len(order) - 1):
        pq = make_pair(order[i], order[i + 1])
        try:
            j = judge.compare(pq)
        except JudgeError as exc:
            raise SweepAborted(f"judge failed at pass {p}, position {i}: {exc}", log, state) from exc
        log.entries.append(_entry(p, i, pq, j))
        if j.winner_id(pq) == order[i + 1]:
            order[i], order[i + 1] = order[i + 1], order[i]
            swaps += 1
    state.pass_index = p
    state.swaps_last_pass = swaps
    return state


def odd_even_pass(
    state: RankingState,
    judge: Judge,
    make_pair,
    log: ComparisonLog,
    executor: ThreadPoolExecutor | None = None,
) -> RankingState:
    """One odd phase then one even phase; counts as a single pass.

    Judgments inside a phase are dispatched in ascending position order and
    logged in that order whatever order they complete in.
    """
    order = state.order
    p = state.pass_index + 1
    swaps = 0
    for phase in odd_even_phases(len(order)):
        pairs = [(i, make_pair(order[i], order[i + 1])) for i in phase]
        try:
            if executor is None:
                verdicts = [judge.compare(pq) for _, pq in pairs]
            else:
                futures = [executor.submit(judge.compare, pq) for _, pq in pairs]
                verdicts = [f.result() for f in futures]
        except JudgeError as exc:
            raise SweepAborted(f"judge failed during pass {p}: {exc}", log, state) from exc
        for (i, pq), j in zip(pairs, verdicts):
            log.entries.append(_entry(p, i, pq, j))
            if j.winner_id(pq) == order[i + 1]:
                order[i], order[i + 1] = order[i + 1], order[i]
                swaps += 1
    state.pass_index = p
    state.swaps_last_pass = swaps
    return state


def sweep_rerank(
    pool: Sequence[str],
    query: Query,
    judge: Judge,
    cfg: SweepConfig | None = None,
    blocks: Mapping[str, str] | None = None,
) -> SweepResult:
    """Re-rank ``pool`` with at most ``cfg.passes`` sliding-window passes.

    ``blocks`` maps video ids to the annotation text shown to the judge; ids
    without a block are shown by id. Every issued comparison, cache replays
    included, lands in the returned log.

    Raises:
        SweepAborted: the judge failed; the exception carries the partial log.
    """
    cfg = cfg or SweepConfig(k=max(2, len(pool)))
    if len(set(pool)) != len(pool):
        raise ValueError("pool ids must be distinct")
    if len(pool) < 2:
        raise ValueError("pool needs at least two candidates")
    state = RankingState(list(pool))
    log = ComparisonLog(query.query_id)
    make_pair = _PairBuilder(query, blocks)
    swaps_per_pass: list[int] = []

    executor = None
    if cfg.mode is SweepMode.ODD_EVEN and cfg.max_workers > 1:
        executor = ThreadPoolExecutor(max_workers=cfg.max_workers)
    try:
        for _ in range(cfg.passes):
            if cfg.mode is SweepMode.SEQUENTIAL:
                sequential_pass(state, judge, make_pair, log)
            else:
                odd_even_pass(state, judge, make_pair, log, executor)
            swaps_per_pass.append(state.swaps_last_pass)
            if cfg.early_stop and state.swaps_last_pass == 0:
                break
    finally:
        if executor is not None:
            executor.shutdown(wait=True)
    return SweepResult(state.order, log, state.pass_index, swaps_per_pass)


def single_shot_rank(
    pool: Sequence[str],
    query: Query,
    judge,
    blocks: Mapping[str, str] | None = None,
) -> list[str]:
    """Ask the judge for a full ordering of the pool in one prompt.

    The judge must offer ``rank_listwise(query_text, [(id, block), ...], query_id=...)``.
    Ids it leaves out follow in their original order; repeats keep the first
    mention.
    """
    blocks = blocks or {}
    candidates = [(vid, blocks.get(vid) or vid) for vid in pool]
    ranked = judge.rank_listwise(query.text, candidates, query_id=query.query_id)
    return complete_ranking(ranked, pool)


def complete_ranking(partial: Iterable[str], pool: Sequence[str]) -> list[str]:
    members = set(pool)
    seen: list[str] = []
    for vid in partial:
        if vid in members and vid not in seen:
            seen.append(vid)
    return seen + [v for v in pool if v not in seen]


def count_inversions(order: Sequence[str], truth: Sequence[str]) -> int:
    rank = {v: i for i, v in enumerate(truth)}
    r = [rank[v] for v in order]
    return sum(1 for a in range(len(r)) for b in range(a + 1, len(r)) if r[a] > r[b])


def log_entries_from_records(records: Iterable[Mapping]) -> list[LogEntry]:
    return [
        LogEntry(int(r["pass"]), int(r["position"]), r["left"], r["right"], r["winner"], r.get("reason", ""), bool(r["cached"]))
        for r in records
    ]


__all__ = [
    "ComparisonLog",
    "LogEntry",
    "Query",
    "RankingState",
    "SweepAborted",
    "SweepConfig",
    "SweepMode",
    "SweepResult",
    "complete_ranking",
    "count_inversions",
    "odd_even_pass",
    "odd_even_phases",
    "sequential_pass",
    "single_shot_rank",
    "sweep_rerank",
]
