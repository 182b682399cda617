"""Bradley-Terry aggregation of pairwise win/loss records.

The model gives ``P[i beats j] = theta_i / (theta_i + theta_j)``. Abilities are
fitted with Hunter's minorize-maximize update on win counts smoothed by a
symmetric pseudo-count ``alpha`` on every ordered pair, which keeps the
comparison graph connected and the maximizer unique.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np


@dataclass(frozen=True)
class PreferenceMatrix:
    """``wins[i, j]`` counts unique judgments where ``ids[i]`` beat ``ids[j]``."""

    ids: tuple[str, ...]
    wins: np.ndarray

    def __post_init__(self):
        wins = np.asarray(self.wins)
        k = len(self.ids)
        if wins.shape != (k, k):
            raise ValueError(f"wins must be {k}x{k}, got {wins.shape}")
        if len(set(self.ids)) != k:
            raise ValueError("ids must be distinct")
        if np.any(np.diag(wins) != 0):
            raise ValueError("wins must have a zero diagonal")
        if np.any(wins < 0) or not np.allclose(wins, np.round(wins)):
            raise ValueError("wins must be non-negative integer counts")
        object.__setattr__(self, "ids", tuple(self.ids))
        object.__setattr__(self, "wins", wins.astype(np.int64))

    @classmethod
    def from_outcomes(cls, ids: Sequence[str], outcomes: Iterable[tuple[str, str]]) -> "PreferenceMatrix":
        """Build from ``(winner_id, loser_id)`` pairs."""
        index = {vid: i for i, vid in enumerate(ids)}
        wins = np.zeros((len(ids), len(ids)), dtype=np.int64)
        for winner, loser in outcomes:
            wins[index[winner], index[loser]] += 1
        return cls(tuple(ids), wins)


@dataclass(frozen=True)
class AbilityVector:
    ids: tuple[str, ...]
    theta: np.ndarray
    iterations: int
    converged: bool
    loglik_trace: tuple[float, ...] = field(default=(), repr=False)

    def as_dict(self) -> dict[str, float]:
        return {vid: float(t) for vid, t in zip(self.ids, self.theta)}


def smoothed_wins(wins: np.ndarray, alpha: float) -> np.ndarray:
    w = np.asarray(wins, dtype=float) + alpha
    np.fill_diagonal(w, 0.0)
    return w


def log_likelihood(theta: np.ndarray, wins: np.ndarray, alpha: float = 0.0) -> float:
    """Regularized log-likelihood ``sum_{i!=j} w'_ij log(theta_i / (theta_i + theta_j))``."""
    w = smoothed_wins(wins, alpha)
    theta = np.asarray(theta, dtype=float)
    logp = np.log(theta)[:, None] - np.log(theta[:, None] + theta[None, :])
    mask = w > 0
    return float(np.sum(w[mask] * logp[mask]))


def _mm_step(theta: np.ndarray, n: np.ndarray, total_wins: np.ndarray) -> np.ndarray:
    denom = (n / (theta[:, None] + theta[None, :])).sum(axis=1)
    new = total_wins / denom
    return new / new.mean()


def fit_bt(
    pm: PreferenceMatrix,
    alpha: float = 1e-3,
    tol: float = 1e-8,
    max_iter: int = 1000,
    accelerate: bool = True,
    track_loglik: bool = False,
) -> AbilityVector:
    """Fit Bradley-Terry abilities by the MM algorithm.

    The MM map applies ``theta_i <- W_i / sum_j n_ij / (theta_i + theta_j)``
    to all items at once, then rescales so that ``mean(theta) == 1``. Iteration
    stops once the largest change in ``log(theta)`` drops below ``tol``;
    running out of iterations is reported through ``converged=False``.

    Plain MM crawls when some item has (almost) no wins, which is the usual
    case for the tail of a sweep log. With ``accelerate`` each iteration takes
    a squared-extrapolation step in log space built from two MM steps
    (SQUAREM) followed by one stabilizing MM step. The step is kept only if
    it does not lower the likelihood; otherwise the two plain MM steps are
    used, so the likelihood never decreases either way.

    With ``alpha == 0`` the data must already connect every item in both
    directions, otherwise some abilities run off to zero or infinity.
    """
    k = len(pm.ids)
    if k < 2:
        raise ValueError("need at least two items")
    w = smoothed_wins(pm.wins, alpha)
    n = w + w.T
    total_wins = w.sum(axis=1)

    def loglik(t):
        return log_likelihood(t, pm.wins, alpha)

    theta = np.ones(k)
    ll = loglik(theta)
    trace = [ll] if track_loglik else []
    converged = False
    it = 0
    while it < max_iter:
        it += 1
        if accelerate:
            t1 = _mm_step(theta, n, total_wins)
            t2 = _mm_step(t1, n, total_wins)
            new, new_ll = t2, loglik(t2)
            x0, x1, x2 = np.log(theta), np.log(t1), np.log(t2)
            r, v = x1 - x0, x2 - 2 * x1 + x0
            if np.any(v):
                step = -np.linalg.norm(r) / np.linalg.norm(v)
                if step < -1:
                    xe = x0 - 2 * step * r + step * step * v
                    te = np.exp(xe - xe.max())
                    if np.all(np.isfinite(te)) and np.all(te > 0):
                        te = _mm_step(te / te.mean(), n, total_wins)
                        te_ll = loglik(te)
                        if te_ll >= new_ll:
                            new, new_ll = te, te_ll
        else:
            new = _mm_step(theta, n, total_wins)
            new_ll = loglik(new) if track_loglik else ll
        delta = np.max(np.abs(np.log(new) - np.log(theta)))
        theta, ll = new, new_ll
        if track_loglik:
            trace.append(ll)
        if delta < tol:
            converged = True
            break
    return AbilityVector(pm.ids, theta, it, converged, tuple(trace))


def win_probability(theta_i: float, theta_j: float) -> float:
    if not (theta_i > 0 and theta_j > 0):
        raise ValueError("abilities must be positive")
    return theta_i / (theta_i + theta_j)


def rank_by_ability(ids: Sequence[str], theta: Sequence[float], coarse_rank: Sequence[int] | None = None) -> list[str]:
    """Sort ids by descending ability; exact ties go to the better coarse rank.

    ``coarse_rank`` defaults to the position in ``ids``.
    """
    if len(ids) != len(theta):
        raise ValueError("ids and theta differ in length")
    if coarse_rank is None:
        coarse_rank = range(len(ids))
    order = sorted(range(len(ids)), key=lambda i: (-float(theta[i]), coarse_rank[i]))
    return [ids[i] for i in order]
