"""Pairwise comparators for query-candidate-candidate tuples.

A judge answers one question: given a text query and two annotated videos,
which video matches the query better? Three judges are provided:

* :class:`OracleJudge` prefers whichever video sits earlier in a known
  reference order. Deterministic and transitive.
* :class:`NoisyBTJudge` samples the winner from a Bradley-Terry model with
  known abilities. Used by the simulation harness.
* :class:`LLMJudge` asks a chat-completions endpoint.

:class:`CachedJudge` wraps any of them, replays repeated pairs without a
second inner call and keeps call accounting.
"""

from __future__ import annotations

import enum
import hashlib
import json
import logging
import os
import re
import threading
import time
import zlib
from collections import OrderedDict
from dataclasses import dataclass, replace
from typing import Mapping, Protocol, Sequence

import numpy as np

logger = logging.getLogger(__name__)


class Side(str, enum.Enum):
    LEFT = "LEFT"
    RIGHT = "RIGHT"

    def flip(self) -> "Side":
        return Side.RIGHT if self is Side.LEFT else Side.LEFT


class JudgeKind(str, enum.Enum):
    ORACLE = "oracle"
    NOISY_BT = "noisy_bt"
    LLM = "llm"


class KeyPolicy(str, enum.Enum):
    ORDERED = "ordered"
    UNORDERED = "unordered"


class JudgeError(RuntimeError):
    """A judge could not produce a verdict. ``raw`` holds the last response text."""

    def __init__(self, message: str, raw: str | None = None):
        super().__init__(message)
        self.raw = raw


@dataclass(frozen=True)
class CandidateRef:
    video_id: str
    annotation: str


@dataclass(frozen=True)
class PairQuery:
    query_id: str
    query_text: str
    left: CandidateRef
    right: CandidateRef

    def __post_init__(self):
        if self.left.video_id == self.right.video_id:
            raise ValueError(f"cannot compare {self.left.video_id!r} with itself")
        if not self.left.annotation.strip() or not self.right.annotation.strip():
            raise ValueError("annotation blocks must be non-empty")

    def swapped(self) -> "PairQuery":
        return replace(self, left=self.right, right=self.left)


@dataclass(frozen=True)
class Judgment:
    winner: Side
    reason: str = ""
    cached: bool = False
    judge_kind: JudgeKind = JudgeKind.ORACLE

    def winner_id(self, pq: PairQuery) -> str:
        return pq.left.video_id if self.winner is Side.LEFT else pq.right.video_id


@dataclass(frozen=True)
class PairKey:
    query_id: str
    first_video_id: str
    second_video_id: str
    policy: KeyPolicy = KeyPolicy.ORDERED

    @classmethod
    def from_pair(cls, pq: PairQuery, policy: KeyPolicy) -> "PairKey":
        a, b = pq.left.video_id, pq.right.video_id
        if policy is KeyPolicy.UNORDERED and b < a:
            a, b = b, a
        return cls(pq.query_id, a, b, policy)


@dataclass
class JudgeStats:
    issued_comparisons: int = 0
    unique_calls: int = 0
    cache_hits: int = 0

    def to_dict(self) -> dict:
        return {
            "issued_comparisons": self.issued_comparisons,
            "unique_calls": self.unique_calls,
            "cache_hits": self.cache_hits,
        }


class Judge(Protocol):
    kind: JudgeKind

    def compare(self, pq: PairQuery) -> Judgment: ...


# ---------------------------------------------------------------------------
# Offline judges


class OracleJudge:
    """Prefers the candidate ranked earlier in a reference order.

    ``truth`` is either one sequence of video ids shared by every query, or a
    mapping from query id to such a sequence. Ids missing from the reference
    rank below all known ids, ordered among themselves by id.
    """

    kind = JudgeKind.ORACLE

    def __init__(self, truth: Sequence[str] | Mapping[str, Sequence[str]]):
        if isinstance(truth, Mapping):
            self._ranks = {q: _rank_map(order) for q, order in truth.items()}
            self._shared = None
        else:
            self._ranks = {}
            self._shared = _rank_map(truth)

    def _key(self, query_id: str, video_id: str) -> tuple:
        ranks = self._shared if self._shared is not None else self._ranks.get(query_id, {})
        r = ranks.get(video_id)
        return (0, r, "") if r is not None else (1, 0, video_id)

    def compare(self, pq: PairQuery) -> Judgment:
        lk = self._key(pq.query_id, pq.left.video_id)
        rk = self._key(pq.query_id, pq.right.video_id)
        if lk <= rk:
            winner, w, l = Side.LEFT, pq.left.video_id, pq.right.video_id
        else:
            winner, w, l = Side.RIGHT, pq.right.video_id, pq.left.video_id
        return Judgment(winner, f"{w} precedes {l} in the reference order", judge_kind=self.kind)

    def rank_listwise(self, query_text: str, candidates: Sequence[tuple[str, str]], query_id: str = "") -> list[str]:
        return sorted((vid for vid, _ in candidates), key=lambda v: self._key(query_id, v))


def _rank_map(order: Sequence[str]) -> dict[str, int]:
    ranks: dict[str, int] = {}
    for i, vid in enumerate(order):
        ranks.setdefault(vid, i)
    return ranks


class NoisyBTJudge:
    """Samples winners with P[left wins] = theta_left / (theta_left + theta_right).

    Every ordered (query, left, right) triple owns its own random stream,
    seeded from ``seed`` and a stable digest of the triple. A fixed seed and a
    fixed sequence of calls per triple therefore reproduce the same verdicts
    no matter how calls for different triples interleave across threads.
    """

    kind = JudgeKind.NOISY_BT

    def __init__(self, theta: Mapping[str, float] | Mapping[str, Mapping[str, float]], seed: int = 0):
        values = list(theta.values())
        if values and isinstance(values[0], Mapping):
            self._theta = {q: dict(t) for q, t in theta.items()}
            self._shared = None
        else:
            self._theta = {}
            self._shared = dict(theta)
        for t in ([self._shared] if self._shared is not None else self._theta.values()):
            if any(not v > 0 for v in t.values()):
                raise ValueError("abilities must be positive")
        self.seed = seed
        self._streams: dict[tuple[str, str, str], np.random.Generator] = {}
        self._lock = threading.Lock()

    def _ability(self, query_id: str, video_id: str) -> float:
        table = self._shared if self._shared is not None else self._theta[query_id]
        return table[video_id]

    def _stream(self, key: tuple[str, str, str]) -> np.random.Generator:
        gen = self._streams.get(key)
        if gen is None:
            digest = zlib.crc32("\x1f".join(key).encode("utf-8"))
            gen = np.random.default_rng([self.seed, digest])
            self._streams[key] = gen
        return gen

    def compare(self, pq: PairQuery) -> Judgment:
        tl = self._ability(pq.query_id, pq.left.video_id)
        tr = self._ability(pq.query_id, pq.right.video_id)
        p_left = tl / (tl + tr)
        key = (pq.query_id, pq.left.video_id, pq.right.video_id)
        with self._lock:
            u = self._stream(key).random()
        winner = Side.LEFT if u < p_left else Side.RIGHT
        w = pq.left.video_id if winner is Side.LEFT else pq.right.video_id
        return Judgment(winner, f"sampled preference for {w} (p_left={p_left:.3f})", judge_kind=self.kind)


# ---------------------------------------------------------------------------
# Caching


class CachedJudge:
    """Memoizes an inner judge on (query, left, right).

    With ``policy="unordered"`` the pair is canonicalized so that (b, a) replays
    the verdict stored for (a, b); the stored winner is tracked by video id so
    the replay lands on the correct side. ``capacity=None`` means unbounded;
    otherwise least-recently-used entries are evicted.
    """

    def __init__(self, inner: Judge, policy: KeyPolicy | str = KeyPolicy.ORDERED, capacity: int | None = None):
        if capacity is not None and capacity < 1:
            raise ValueError("cache capacity must be >= 1")
        self.inner = inner
        self.kind = inner.kind
        self.policy = KeyPolicy(policy)
        self.capacity = capacity
        self.stats = JudgeStats()
        self._entries: OrderedDict[PairKey, tuple[str, Judgment]] = OrderedDict()
        self._lock = threading.Lock()

    def __len__(self) -> int:
        return len(self._entries)

    def clear(self) -> None:
        with self._lock:
            self._entries.clear()

    def compare(self, pq: PairQuery) -> Judgment:
        key = PairKey.from_pair(pq, self.policy)
        with self._lock:
            hit = self._entries.get(key)
            if hit is not None:
                self._entries.move_to_end(key)
                self.stats.issued_comparisons += 1
                self.stats.cache_hits += 1
        if hit is not None:
            winner_id, stored = hit
            side = Side.LEFT if winner_id == pq.left.video_id else Side.RIGHT
            return replace(stored, winner=side, cached=True)

        fresh = self.inner.compare(pq)
        with self._lock:
            self._entries[key] = (fresh.winner_id(pq), fresh)
            self._entries.move_to_end(key)
            if self.capacity is not None:
                while len(self._entries) > self.capacity:
                    self._entries.popitem(last=False)
            self.stats.issued_comparisons += 1
            self.stats.unique_calls += 1
        return replace(fresh, cached=False)

    def __getattr__(self, name):
        # summarize/rank_listwise and friends pass through to the inner judge
        if name == "inner":
            raise AttributeError(name)
        return getattr(self.inner, name)


# ---------------------------------------------------------------------------
# Prompts and response parsing

SYSTEM_PROMPT = (
    "You are a careful video retrieval assistant. You compare two videos, "
    "each described by structured annotations, and decide which one better "
    "matches a text query."
)

_ANSWER_FORMAT = (
    "Answer with exactly two lines:\n"
    "WINNER: A or B\n"
    "REASON: one or two sentences explaining the decision"
)


def build_compare_prompt(query_text: str, left_annotation: str, right_annotation: str) -> list[dict]:
    if not query_text or not left_annotation or not right_annotation:
        raise ValueError("query and annotations must be non-empty")
    user = (
        f"Query: {query_text}\n\n"
        f"[Video A]\n{left_annotation}\n[End of Video A]\n\n"
        f"[Video B]\n{right_annotation}\n[End of Video B]\n\n"
        "Which video matches the query more closely?\n"
        f"{_ANSWER_FORMAT}"
    )
    return [{"role": "system", "content": SYSTEM_PROMPT}, {"role": "user", "content": user}]


def build_summary_prompt(reasons: Sequence[str]) -> list[dict]:
    listing = "\n".join(f"{i}. {r}" for i, r in enumerate(reasons, 1))
    user = (
        "The following are justifications from pairwise comparisons made while "
        "ranking candidate videos for one query.\n\n"
        f"{listing}\n\n"
        "Summarize them into a short explanation of why the top-ranked video "
        "was chosen and what distinguished it from the others."
    )
    return [{"role": "system", "content": SYSTEM_PROMPT}, {"role": "user", "content": user}]


def build_listwise_prompt(query_text: str, candidates: Sequence[tuple[str, str]]) -> list[dict]:
    blocks = "\n\n".join(f"[{vid}]\n{block}" for vid, block in candidates)
    user = (
        f"Query: {query_text}\n\n"
        f"Candidate videos:\n\n{blocks}\n\n"
        "Rank all candidate videos from most to least relevant to the query. "
        "Reply with the video ids in order, one per line."
    )
    return [{"role": "system", "content": SYSTEM_PROMPT}, {"role": "user", "content": user}]


_WINNER_LINE = re.compile(r"^\W*winner\W*[:=]\s*\**\s*(?:video\s+|candidate\s+)?([a-z0-9]+)\b", re.I)
_REASON_LINE = re.compile(r"^\W*reason\W*[:=]\s*(.*)$", re.I)
_LABEL_MENTION = re.compile(r"\b(?:video|candidate|option)\s+([ab])\b", re.I)
_SIDE_VALUES = {"a": Side.LEFT, "left": Side.LEFT, "1": Side.LEFT,
                "b": Side.RIGHT, "right": Side.RIGHT, "2": Side.RIGHT}


def parse_compare_response(text: str) -> tuple[Side, str]:
    """Extract ``(winner, reason)`` from a judge reply.

    The last ``WINNER:`` line with a recognised value wins. Failing that, the
    final sentence must mention exactly one of "Video A" / "Video B".
    """
    lines = (text or "").splitlines()
    winner, at = None, -1
    for i, line in enumerate(lines):
        m = _WINNER_LINE.match(line.strip())
        if m and m.group(1).lower() in _SIDE_VALUES:
            winner, at = _SIDE_VALUES[m.group(1).lower()], i

    if winner is not None:
        reason = ""
        for line in lines[at + 1:]:
            m = _REASON_LINE.match(line.strip())
            if m:
                reason = m.group(1).strip()
                break
        else:
            for line in reversed(lines[:at]):
                m = _REASON_LINE.match(line.strip())
                if m:
                    reason = m.group(1).strip()
                    break
        return winner, reason

    sentences = [s for s in re.split(r"(?<=[.!?])\s+|\n+", (text or "").strip()) if s.strip()]
    if sentences:
        labels = {m.lower() for m in _LABEL_MENTION.findall(sentences[-1])}
        if len(labels) == 1:
            return _SIDE_VALUES[labels.pop()], text.strip()
    raise JudgeError("no verdict found in judge response", raw=text)


def parse_listwise_response(text: str, ids: Sequence[str]) -> list[str]:
    """Order ``ids`` by first mention in ``text``; unmentioned ids follow in input order."""
    if not ids:
        return []
    alternatives = "|".join(re.escape(v) for v in sorted(set(ids), key=len, reverse=True))
    pattern = re.compile(rf"(?<![\w-])(?:{alternatives})(?![\w-])")
    seen: list[str] = []
    for m in pattern.finditer(text or ""):
        if m.group(0) not in seen:
            seen.append(m.group(0))
    if not seen:
        raise JudgeError("response names none of the candidate ids", raw=text)
    return seen + [v for v in ids if v not in seen]


def summarize_reasons(reasons: Sequence[str], backend: "LLMJudge | None" = None) -> str:
    """Collapse pairwise justifications into one explanation.

    Without an LLM backend this is a numbered list, so offline runs stay
    deterministic. With one, a single chat call produces the summary.
    """
    if not reasons:
        raise ValueError("need at least one reason to summarize")
    if backend is None:
        return "\n".join(f"{i}. {r}" for i, r in enumerate(reasons, 1))
    return backend.summarize(reasons)


# ---------------------------------------------------------------------------
# HTTP-backed judge


def _default_sleep(seconds: float) -> None:
    time.sleep(seconds)


class LLMJudge:
    """Judge backed by a chat-completions endpoint.

    Requests carry ``model``, ``messages`` and ``temperature``; the verdict is
    read from ``choices[0].message.content``. Transport errors and 429/5xx
    responses are retried with the delays in ``backoff``. When
    ``transcript_path`` is set every request/response pair is appended to it
    as one JSON line.
    """

    kind = JudgeKind.LLM

    def __init__(
        self,
        url: str,
        model: str,
        api_key: str | None = None,
        temperature: float = 0.0,
        retries: int = 3,
        backoff: Sequence[float] = (0.5, 1.0, 2.0),
        timeout: float = 60.0,
        transcript_path: str | os.PathLike | None = None,
        client=None,
        sleep=_default_sleep,
    ):
        import httpx

        self.url = url
        self.model = model
        self.api_key = api_key
        self.temperature = temperature
        self.retries = retries
        self.backoff = tuple(backoff)
        self.transcript_path = transcript_path
        self._client = client if client is not None else httpx.Client(timeout=timeout)
        self._sleep = sleep
        self._transcript_lock = threading.Lock()
        self.calls = 0

    @classmethod
    def from_env(cls, url: str, model: str, env_var: str = "VIDRERANK_API_KEY", **kwargs) -> "LLMJudge":
        return cls(url, model, api_key=os.environ.get(env_var) or None, **kwargs)

    def _headers(self) -> dict:
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        return headers

    def _log(self, record: dict) -> None:
        if self.transcript_path is None:
            return
        line = json.dumps(record, ensure_ascii=False, sort_keys=True)
        with self._transcript_lock:
            with open(self.transcript_path, "a", encoding="utf-8") as fh:
                fh.write(line + "\n")

    def chat(self, messages: list[dict]) -> str:
        import httpx

        body = {"model": self.model, "messages": messages, "temperature": self.temperature}
        request_id = hashlib.sha1(json.dumps(body, sort_keys=True).encode()).hexdigest()[:12]
        last_error: str | None = None
        raw: str | None = None
        for attempt in range(self.retries + 1):
            if attempt:
                delay = self.backoff[min(attempt - 1, len(self.backoff) - 1)] if self.backoff else 0.0
                self._sleep(delay)
            try:
                self.calls += 1
                resp = self._client.post(self.url, json=body, headers=self._headers())
            except httpx.HTTPError as exc:
                last_error = f"transport error: {exc!r}"
                logger.warning("judge request %s attempt %d failed: %s", request_id, attempt + 1, last_error)
                continue
            raw = resp.text
            self._log({"request_id": request_id, "attempt": attempt + 1, "request": body,
                       "status": resp.status_code, "response": raw})
            if resp.status_code == 429 or resp.status_code >= 500:
                last_error = f"HTTP {resp.status_code}"
                continue
            if resp.status_code >= 400:
                raise JudgeError(f"judge endpoint returned HTTP {resp.status_code}", raw=raw)
            try:
                return resp.json()["choices"][0]["message"]["content"]
            except (ValueError, KeyError, IndexError, TypeError) as exc:
                raise JudgeError(f"malformed chat response: {exc!r}", raw=raw) from exc
        raise JudgeError(f"judge request failed after {self.retries + 1} attempts ({last_error})", raw=raw)

    def compare(self, pq: PairQuery) -> Judgment:
        messages = build_compare_prompt(pq.query_text, pq.left.annotation, pq.right.annotation)
        text = self.chat(messages)
        winner, reason = parse_compare_response(text)
        return Judgment(winner, reason, judge_kind=self.kind)

    def summarize(self, reasons: Sequence[str]) -> str:
        text = self.chat(build_summary_prompt(reasons)).strip()
        if not text:
            raise JudgeError("empty summary from judge", raw=text)
        return text

    def rank_listwise(self, query_text: str, candidates: Sequence[tuple[str, str]], query_id: str = "") -> list[str]:
        text = self.chat(build_listwise_prompt(query_text, candidates))
        return parse_listwise_response(text, [vid for vid, _ in candidates])

