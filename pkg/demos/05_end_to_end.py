"""Re-rank the toy corpus end to end and compare against the coarse lists.

The oracle judge knows the relevant video for each query; the noisy judge
samples verdicts from abilities that favour it. Both write a run directory
that ``vidrerank report`` can summarize. To use a real model instead, build
an ``LLMJudge`` pointed at any chat-completions endpoint and pass it to
``run``.
"""

import tempfile
from pathlib import Path

from vidrerank.pipeline import RunConfig, ingest, run

data = Path(__file__).parent / "data"
corpus = ingest(data / "candidates.jsonl", data / "annotations.jsonl", data / "qrels.jsonl", k=8)

with tempfile.TemporaryDirectory() as tmp:
    for judge in ("oracle", "noisy_bt"):
        for variant in ("full", "no_bt"):
            cfg = RunConfig(k=8, passes=10, judge=judge, variant=variant, noise_gamma=2.0, seed=0)
            report = run(cfg, corpus, out_dir=Path(tmp) / f"{judge}-{variant}")
            b, r = report.metrics["baseline"], report.metrics["reranked"]
            print(f"{judge:9s} {variant:6s} R@1 {b['R@1']:5.1f} -> {r['R@1']:5.1f}   "
                  f"MnR {b['MnR']:4.2f} -> {r['MnR']:4.2f}")

    report = run(RunConfig(k=8, judge="oracle"), corpus, out_dir=Path(tmp) / "final")
    q = report.queries[0]
    print(f"\n{q['query_id']}: coarse {q['baseline_ranking'][:5]}")
    print(f"{'':4s}re-ranked {q['final_ranking'][:5]}")
    print(f"{'':4s}calls {q['stats']}")
    print("explanation:\n" + q["explanation"])
    print("\nartifacts:", sorted(p.name for p in (Path(tmp) / "final").iterdir()))
