"""Retrieval metrics, explanation faithfulness and the synthetic-judge harness."""

from __future__ import annotations

import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.stats import kendalltau

from .btagg import PreferenceMatrix, fit_bt, rank_by_ability
from .io import ValidationError, iter_jsonl
from .judge import CachedJudge, KeyPolicy, NoisyBTJudge, OracleJudge
from .ranker import Query, SweepConfig, SweepMode, sweep_rerank

RECALL_CUTOFFS = (1, 5, 10)


# ---------------------------------------------------------------------------
# Retrieval metrics


def rank_of_truth(full_ranking: Sequence[str], relevant: Iterable[str]) -> int:
    """1-based position of the best-placed relevant id."""
    relevant = set(relevant)
    for pos, vid in enumerate(full_ranking, 1):
        if vid in relevant:
            return pos
    raise ValueError(f"none of the relevant ids {sorted(relevant)} appear in the ranking")


@dataclass(frozen=True)
class MetricsReport:
    r_at: dict[int, float]
    mdr: float
    mnr: float
    n_queries: int

    def to_dict(self) -> dict:
        return {
            "R@1": self.r_at[1],
            "R@5": self.r_at[5],
            "R@10": self.r_at[10],
            "MdR": self.mdr,
            "MnR": self.mnr,
            "n_queries": self.n_queries,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "MetricsReport":
        return cls({k: float(d[f"R@{k}"]) for k in RECALL_CUTOFFS}, float(d["MdR"]), float(d["MnR"]), int(d["n_queries"]))


def compute_metrics(ranks: Sequence[int]) -> MetricsReport:
    """R@1/5/10 as percentages, lower median rank and mean rank.

    For an even number of queries the median is the lower of the two middle
    ranks, so MdR is always an attained rank.
    """
    if len(ranks) == 0:
        raise ValueError("need at least one rank")
    arr = np.sort(np.asarray(ranks, dtype=np.int64))
    if arr[0] < 1:
        raise ValueError("ranks are 1-based")
    n = len(arr)
    r_at = {k: 100.0 * float(np.count_nonzero(arr <= k)) / n for k in RECALL_CUTOFFS}
    return MetricsReport(r_at, float(arr[(n - 1) // 2]), float(arr.mean()), n)


# ---------------------------------------------------------------------------
# Faithfulness proxy


def cosine(u, v) -> float:
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    if u.shape != v.shape:
        raise ValueError(f"dimension mismatch: {u.shape} vs {v.shape}")
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0 or nv == 0:
        raise ValueError("cosine of a zero vector is undefined")
    return float(np.clip(u @ v / (nu * nv), -1.0, 1.0))


@dataclass(frozen=True)
class Faithfulness:
    sim_baseline: float
    sim_xcot: float
    gain: float


def faithfulness_proxy(expl_emb, v_ori_emb, v_xcot_emb) -> Faithfulness:
    """Cosine of an explanation embedding against the baseline and re-ranked top-1 videos."""
    base = cosine(expl_emb, v_ori_emb)
    rer = cosine(expl_emb, v_xcot_emb)
    return Faithfulness(base, rer, rer - base)


def corpus_faithfulness(
    explanations: Mapping[str, np.ndarray],
    baseline_top1: Mapping[str, np.ndarray],
    reranked_top1: Mapping[str, np.ndarray],
) -> Faithfulness:
    """Average the per-query proxy over queries present in all three maps."""
    qids = sorted(set(explanations) & set(baseline_top1) & set(reranked_top1))
    if not qids:
        raise ValueError("no query has all three embeddings")
    scores = [faithfulness_proxy(explanations[q], baseline_top1[q], reranked_top1[q]) for q in qids]
    b = float(np.mean([s.sim_baseline for s in scores]))
    x = float(np.mean([s.sim_xcot for s in scores]))
    return Faithfulness(b, x, x - b)


def load_vectors(path: str | os.PathLike, key: str = "video_id") -> dict[str, np.ndarray]:
    """Read an embedding file; one ``{<key>, vector}`` record per id."""
    out: dict[str, np.ndarray] = {}
    for lineno, rec in iter_jsonl(path):
        try:
            out[str(rec[key])] = np.asarray(rec["vector"], dtype=float)
        except (KeyError, TypeError, ValueError) as exc:
            raise ValidationError(f"{path}:{lineno}: bad vector record ({exc})") from exc
    return out


# ---------------------------------------------------------------------------
# Simulation harness


def kendall_tau(order: Sequence[str], truth: Sequence[str]) -> float:
    rank = {v: i for i, v in enumerate(truth)}
    return float(kendalltau(np.arange(len(order)), [rank[v] for v in order]).statistic)


def listwise_guess(ids: Sequence[str], theta: Mapping[str, float], rng: np.random.Generator) -> list[str]:
    """Stand-in for asking a judge to order the whole pool at once.

    The pool order is discarded (random restart) and a single best-of-K pick,
    drawn with probability proportional to ability, is inserted at the front.
    """
    order = [ids[i] for i in rng.permutation(len(ids))]
    weights = np.array([theta[v] for v in order], dtype=float)
    pick = order[int(rng.choice(len(order), p=weights / weights.sum()))]
    order.remove(pick)
    return [pick] + order


@dataclass(frozen=True)
class SimSpec:
    k: int = 20
    passes: int = 10
    gamma: float = 1.3
    noise: str = "bt"
    seeds: tuple[int, ...] = tuple(range(200))
    cache_policy: str = "ordered"
    mode: str = "sequential"
    early_stop: bool = True
    alpha: float = 1e-3
    max_workers: int = 1

    def __post_init__(self):
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        if not self.seeds:
            raise ValueError("need at least one seed")
        if self.gamma < 1:
            raise ValueError("gamma must be >= 1")
        if self.noise not in ("bt", "oracle"):
            raise ValueError("noise must be 'bt' or 'oracle'")
        KeyPolicy(self.cache_policy)
        SweepMode(self.mode)

    def true_theta(self) -> dict[str, float]:
        """Geometric abilities; ``v00`` is the strongest."""
        return {f"v{i:02d}": float(self.gamma ** (self.k - 1 - i)) for i in range(self.k)}


@dataclass(frozen=True)
class SeedOutcome:
    seed: int
    kendall_tau_window: float
    kendall_tau_bt: float
    kendall_tau_listwise: float
    r_at_1: float
    unique_calls: int
    issued_comparisons: int
    unique_call_fraction: float


@dataclass(frozen=True)
class SimReport:
    spec: SimSpec
    means: dict[str, float]
    stds: dict[str, float]
    outcomes: tuple[SeedOutcome, ...] = field(repr=False)

    @property
    def kendall_tau_window(self) -> float:
        return self.means["kendall_tau_window"]

    @property
    def kendall_tau_bt(self) -> float:
        return self.means["kendall_tau_bt"]

    @property
    def kendall_tau_listwise(self) -> float:
        return self.means["kendall_tau_listwise"]

    @property
    def r_at_1(self) -> float:
        return self.means["r_at_1"]

    @property
    def unique_call_fraction(self) -> float:
        return self.means["unique_call_fraction"]

    def to_json(self, per_seed: bool = False) -> str:
        doc = {"spec": asdict(self.spec), "means": self.means, "stds": self.stds}
        doc["spec"]["seeds"] = list(self.spec.seeds)
        if per_seed:
            doc["per_seed"] = [asdict(o) for o in self.outcomes]
        return json.dumps(doc, sort_keys=True)


def simulate_seed(spec: SimSpec, seed: int) -> SeedOutcome:
    theta = spec.true_theta()
    truth = list(theta)
    rng = np.random.default_rng(seed)
    pool = [truth[i] for i in rng.permutation(spec.k)]

    inner = OracleJudge(truth) if spec.noise == "oracle" else NoisyBTJudge(theta, seed=seed)
    judge = CachedJudge(inner, policy=spec.cache_policy)
    cfg = SweepConfig(k=spec.k, passes=spec.passes, mode=spec.mode, early_stop=spec.early_stop)
    result = sweep_rerank(pool, Query(f"sim-{seed}", "simulated query"), judge, cfg)

    pm = PreferenceMatrix.from_outcomes(pool, result.log.unique_outcomes())
    ability = fit_bt(pm, alpha=spec.alpha)
    bt_order = rank_by_ability(pool, ability.theta)
    guess = listwise_guess(pool, theta, rng)

    budget = spec.passes * (spec.k - 1)
    return SeedOutcome(
        seed=seed,
        kendall_tau_window=kendall_tau(result.order, truth),
        kendall_tau_bt=kendall_tau(bt_order, truth),
        kendall_tau_listwise=kendall_tau(guess, truth),
        r_at_1=100.0 if bt_order[0] == truth[0] else 0.0,
        unique_calls=judge.stats.unique_calls,
        issued_comparisons=judge.stats.issued_comparisons,
        unique_call_fraction=judge.stats.unique_calls / budget,
    )


_SUMMARY_FIELDS = (
    "kendall_tau_window",
    "kendall_tau_bt",
    "kendall_tau_listwise",
    "r_at_1",
    "unique_calls",
    "issued_comparisons",
    "unique_call_fraction",
)


def run_simulation(spec: SimSpec) -> SimReport:
    """Run every seed of ``spec`` and aggregate. Output depends only on ``spec``."""
    if spec.max_workers > 1:
        with ThreadPoolExecutor(max_workers=spec.max_workers) as pool:
            outcomes = list(pool.map(lambda s: simulate_seed(spec, s), spec.seeds))
    else:
        outcomes = [simulate_seed(spec, s) for s in spec.seeds]
    means, stds = {}, {}
    for name in _SUMMARY_FIELDS:
        vals = np.array([getattr(o, name) for o in outcomes], dtype=float)
        means[name] = float(vals.mean())
        stds[name] = float(vals.std(ddof=1)) if len(vals) > 1 else 0.0
    return SimReport(spec, means, stds, tuple(outcomes))


def binomial_band(p: float, n: int, width: float = 3.0) -> tuple[float, float]:
    """``p +/- width * sqrt(p(1-p)/n)``."""
    half = width * math.sqrt(p * (1 - p) / n)
    return p - half, p + half
