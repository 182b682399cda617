"""Turning a handful of pairwise verdicts into abilities.

A re-ranking sweep leaves behind a sparse set of win/loss records. This demo
fits Bradley-Terry abilities to such a record and shows what the weak
pseudo-count does for items that never won.
"""

import numpy as np

from vidrerank import PreferenceMatrix, fit_bt, rank_by_ability, win_probability

ids = ["vid05", "vid01", "vid10", "vid02"]

# vid05 beat everyone it met; vid02 never won; vid01 and vid10 split a pair
outcomes = [
    ("vid05", "vid01"),
    ("vid05", "vid10"),
    ("vid01", "vid10"),
    ("vid10", "vid01"),
    ("vid01", "vid02"),
    ("vid10", "vid02"),
]
pm = PreferenceMatrix.from_outcomes(ids, outcomes)
print("win counts (row beat column):")
print(pm.wins)

for alpha in (1e-3, 1e-1, 1.0):
    fit = fit_bt(pm, alpha=alpha)
    theta = ", ".join(f"{v}={t:.3g}" for v, t in fit.as_dict().items())
    print(f"\nalpha={alpha:g}: {theta}  ({fit.iterations} iterations, converged={fit.converged})")
    print("  ranking:", rank_by_ability(ids, fit.theta))

fit = fit_bt(pm)
t = fit.as_dict()
print(f"\nP[vid01 beats vid10] = {win_probability(t['vid01'], t['vid10']):.3f}  (they split 1-1)")
print(f"P[vid05 beats vid02] = {win_probability(t['vid05'], t['vid02']):.6f}  (never compared directly)")

# a perfect 3-cycle carries no ordering information at all
cycle = PreferenceMatrix(("a", "b", "c"), np.array([[0, 1, 0], [0, 0, 1], [1, 0, 0]]))
print("\n3-cycle abilities:", np.round(fit_bt(cycle).theta, 12))
