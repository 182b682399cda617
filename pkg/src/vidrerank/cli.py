"""Command-line entry point: ``vidrerank <command> ...``.

Exit codes: 0 on success, 2 when input validation fails, 3 when a judge fails
on some query and ``--fallback-coarse`` was not given.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from .annotate import (
    clean_annotation,
    default_stopwords,
    filter_near_duplicates,
    load_annotations,
    load_frame_features,
    load_lexicon,
    perturb_tags,
)
from .evaluation import SimSpec, compute_metrics, rank_of_truth, run_simulation
from .io import ValidationError, iter_jsonl, read_lines, write_jsonl
from .pipeline import RunConfig, RunReport, ingest, run

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_JUDGE = 3


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--k", type=int, default=20, help="pool size (default 20)")
    p.add_argument("--passes", type=int, default=10, help="maximum sweeps (default 10)")
    p.add_argument("--mode", choices=["sequential", "odd_even"], default="sequential")
    p.add_argument("--cache-policy", choices=["ordered", "unordered"], default="ordered")
    p.add_argument("--cache-capacity", type=int, default=None)
    p.add_argument("--no-early-stop", action="store_true")
    p.add_argument("--alpha", type=float, default=1e-3)
    p.add_argument("--tol", type=float, default=1e-8)
    p.add_argument("--max-iter", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)


def _cmd_rerank(args) -> int:
    cfg = RunConfig(
        k=args.k, passes=args.passes, mode=args.mode, cache_policy=args.cache_policy,
        cache_capacity=args.cache_capacity, judge=args.judge, llm_url=args.llm_url, llm_model=args.llm_model,
        api_key_env=args.api_key_env, transcript=args.transcript, noise_gamma=args.gamma, alpha=args.alpha,
        tol=args.tol, max_iter=args.max_iter, seed=args.seed, early_stop=not args.no_early_stop,
        fallback_coarse=args.fallback_coarse, variant=args.variant, max_workers=args.workers,
        query_workers=args.query_workers,
    )
    corpus = ingest(args.candidates, args.annotations, args.qrels, k=cfg.k)
    report = run(cfg, corpus, out_dir=args.out)
    _print_metrics(report.metrics)
    if report.failures:
        for f in report.failures:
            print(f"FAILED {f['query_id']}: {f['error']}", file=sys.stderr)
        return EXIT_JUDGE
    return EXIT_OK


def _print_metrics(metrics: dict) -> None:
    cols = ["R@1", "R@5", "R@10", "MdR", "MnR"]
    print(f"{'':10s}" + "".join(f"{c:>8s}" for c in cols) + f"{'n':>6s}")
    for name, m in metrics.items():
        print(f"{name:10s}" + "".join(f"{m[c]:8.1f}" for c in cols) + f"{m['n_queries']:6d}")


def _cmd_evaluate(args) -> int:
    qrels = {}
    for lineno, rec in iter_jsonl(args.qrels):
        rel = rec["relevant"] if "relevant" in rec else [rec["video_id"]]
        qrels[str(rec["query_id"])] = set([rel] if isinstance(rel, str) else rel)
    metrics = {}
    for name, path in (("baseline", args.candidates), ("reranked", args.rankings)):
        if path is None:
            continue
        ranks = []
        for lineno, rec in iter_jsonl(path):
            qid = str(rec["query_id"])
            if qid not in qrels:
                raise ValidationError(f"{path}:{lineno}: no qrels for query {qid!r}")
            try:
                ranks.append(rank_of_truth(rec["ranking"], qrels[qid]))
            except ValueError as exc:
                raise ValidationError(f"{path}:{lineno}: {exc}") from exc
        metrics[name] = compute_metrics(ranks).to_dict()
    if args.json:
        print(json.dumps(metrics, sort_keys=True, indent=2))
    else:
        _print_metrics(metrics)
    return EXIT_OK


def _cmd_simulate(args) -> int:
    spec = SimSpec(
        k=args.k, passes=args.passes, gamma=args.gamma, noise=args.noise,
        seeds=tuple(range(args.seed_start, args.seed_start + args.seeds)), cache_policy=args.cache_policy,
        mode=args.mode, early_stop=not args.no_early_stop, alpha=args.alpha, max_workers=args.workers,
    )
    print(run_simulation(spec).to_json(per_seed=args.per_seed))
    return EXIT_OK


def _cmd_filter_frames(args) -> int:
    grouped = load_frame_features(args.features)
    records = []
    for vid in sorted(grouped):
        frames = grouped[vid]
        try:
            kept = filter_near_duplicates(frames, args.threshold)
        except ValueError as exc:
            raise ValidationError(f"video {vid!r}: {exc}") from exc
        records.append({"video_id": vid, "retained": [frames[i].frame_index for i in kept],
                        "n_frames": len(frames)})
    _emit(records, args.out)
    return EXIT_OK


def _cmd_normalize(args) -> int:
    stop = read_lines(args.stopwords) if args.stopwords else default_stopwords()
    lexicon = load_lexicon(args.lexicon)
    anns = load_annotations(args.input)
    _emit([clean_annotation(a, stop, lexicon).to_record() for a in anns.values()], args.out)
    return EXIT_OK


def _cmd_perturb(args) -> int:
    decoys = read_lines(args.decoys) if args.decoys else None
    anns = load_annotations(args.input)
    out = []
    for i, ann in enumerate(anns.values()):
        out.append(perturb_tags(ann, args.fraction, seed=args.seed + i, decoys=decoys).to_record())
    _emit(out, args.out)
    return EXIT_OK


def _cmd_report(args) -> int:
    report = RunReport.load(args.run_dir)
    print(f"version {report.version}  queries {len(report.queries)}  failures {len(report.failures)}")
    _print_metrics(report.metrics)
    if args.queries:
        for q in report.queries:
            s = q["stats"]
            print(f"{q['query_id']}: top={q['final_ranking'][0]} issued={s['issued_comparisons']} "
                  f"unique={s['unique_calls']} hits={s['cache_hits']}{' DEGRADED' if q['degraded'] else ''}")
    return EXIT_OK


def _emit(records, out) -> None:
    if out:
        write_jsonl(out, records)
    else:
        for r in records:
            print(json.dumps(r, sort_keys=True, ensure_ascii=False))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vidrerank", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("rerank", help="re-rank every query of a corpus and write run artifacts")
    p.add_argument("--candidates", required=True)
    p.add_argument("--annotations", required=True)
    p.add_argument("--qrels", required=True)
    p.add_argument("--out", required=True, help="output directory")
    _add_run_flags(p)
    p.add_argument("--judge", choices=["oracle", "noisy_bt", "llm"], default="oracle")
    p.add_argument("--llm-url")
    p.add_argument("--llm-model")
    p.add_argument("--api-key-env", default="VIDRERANK_API_KEY",
                   help="environment variable holding the bearer token")
    p.add_argument("--transcript", help="append every judge request/response to this file")
    p.add_argument("--gamma", type=float, default=1.3, help="ability spacing for the noisy_bt judge")
    p.add_argument("--fallback-coarse", action="store_true")
    p.add_argument("--variant", choices=["full", "no_bt", "no_cot"], default="full")
    p.add_argument("--workers", type=int, default=1, help="concurrent judgments per odd-even phase")
    p.add_argument("--query-workers", type=int, default=1)
    p.set_defaults(func=_cmd_rerank)

    p = sub.add_parser("evaluate", help="R@k / MdR / MnR of ranking files against qrels")
    p.add_argument("--qrels", required=True)
    p.add_argument("--rankings", help="jsonl of {query_id, ranking}")
    p.add_argument("--candidates", help="coarse candidates file, scored as the baseline")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("simulate", help="synthetic-judge simulation")
    p.add_argument("--k", type=int, default=20)
    p.add_argument("--passes", type=int, default=10)
    p.add_argument("--mode", choices=["sequential", "odd_even"], default="sequential")
    p.add_argument("--cache-policy", choices=["ordered", "unordered"], default="ordered")
    p.add_argument("--no-early-stop", action="store_true")
    p.add_argument("--alpha", type=float, default=1e-3)
    p.add_argument("--gamma", type=float, default=1.3)
    p.add_argument("--noise", choices=["bt", "oracle"], default="bt")
    p.add_argument("--seeds", type=int, default=200, help="number of seeds")
    p.add_argument("--seed-start", type=int, default=0)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--per-seed", action="store_true")
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("filter-frames", help="drop near-duplicate frames from a feature file")
    p.add_argument("--features", required=True)
    p.add_argument("--threshold", type=float, default=0.95)
    p.add_argument("--out")
    p.set_defaults(func=_cmd_filter_frames)

    p = sub.add_parser("normalize-annotations", help="run the tag clean-up chain")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out")
    p.add_argument("--stopwords")
    p.add_argument("--lexicon")
    p.set_defaults(func=_cmd_normalize)

    p = sub.add_parser("perturb-annotations", help="replace a fraction of tags with decoys")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out")
    p.add_argument("--fraction", type=float, default=0.2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--decoys")
    p.set_defaults(func=_cmd_perturb)

    p = sub.add_parser("report", help="summarize a run directory")
    p.add_argument("run_dir")
    p.add_argument("--queries", action="store_true")
    p.set_defaults(func=_cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError) as exc:
        # ValidationError is a ValueError
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
