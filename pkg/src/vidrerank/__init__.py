"""Explainable re-ranking of text-to-video retrieval candidates.

A coarse top-K list is refined by sliding-window pairwise judgments, the
unique outcomes are aggregated with a Bradley-Terry fit, and every decision
keeps the judge's justification.
"""

__version__ = "0.1.0"

from .btagg import AbilityVector, PreferenceMatrix, fit_bt, rank_by_ability, win_probability
from .judge import (
    CachedJudge,
    JudgeError,
    Judgment,
    LLMJudge,
    NoisyBTJudge,
    OracleJudge,
    PairQuery,
    Side,
    summarize_reasons,
)
from .ranker import Query, SweepConfig, single_shot_rank, sweep_rerank

__all__ = [
    "AbilityVector",
    "CachedJudge",
    "JudgeError",
    "Judgment",
    "LLMJudge",
    "NoisyBTJudge",
    "OracleJudge",
    "PairQuery",
    "PreferenceMatrix",
    "Query",
    "Side",
    "SweepConfig",
    "fit_bt",
    "rank_by_ability",
    "single_shot_rank",
    "summarize_reasons",
    "sweep_rerank",
    "win_probability",
]
