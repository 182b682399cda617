"""Sliding-window sweeps over a small pool, with call accounting.

Each pass walks adjacent pairs and swaps whenever the judge prefers the right
video. The cache remembers every (query, left, right) verdict so later passes
mostly replay earlier answers.
"""

from vidrerank import CachedJudge, NoisyBTJudge, OracleJudge, Query, SweepConfig, sweep_rerank

truth = ["v1", "v2", "v3", "v4", "v5", "v6"]
pool = ["v4", "v6", "v1", "v3", "v2", "v5"]
query = Query("demo", "a dog running on the beach")

for mode in ("sequential", "odd_even"):
    judge = CachedJudge(OracleJudge(truth))
    result = sweep_rerank(pool, query, judge, SweepConfig(k=6, passes=10, mode=mode))
    print(f"{mode:10s} -> {result.order}  passes={result.passes_run} swaps/pass={result.swaps_per_pass}")
    print(f"{'':10s}    {judge.stats.to_dict()}")

print("\nfirst pass of the sequential log:")
judge = CachedJudge(OracleJudge(truth))
result = sweep_rerank(pool, query, judge, SweepConfig(k=6, passes=10))
for e in result.log:
    if e.pass_index == 1:
        print(f"  pos {e.position}: {e.left_id} vs {e.right_id} -> {e.winner_id}")

# the same sweep with a noisy judge that is right ~57% of the time on neighbours
theta = {v: 1.3 ** (len(truth) - i) for i, v in enumerate(truth)}
for policy in ("ordered", "unordered"):
    judge = CachedJudge(NoisyBTJudge(theta, seed=4), policy)
    result = sweep_rerank(pool, query, judge, SweepConfig(k=6, passes=10))
    print(f"\nnoisy judge, {policy} cache: {result.order}")
    print(f"  {judge.stats.to_dict()}")
