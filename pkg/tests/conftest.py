import json

import pytest

from vidrerank.judge import CandidateRef, PairQuery


def pair(left, right, query_id="q", text="a dog runs"):
    return PairQuery(query_id, text, CandidateRef(left, f"block {left}"), CandidateRef(right, f"block {right}"))


def write_jsonl(path, records):
    path.write_text("".join(json.dumps(r) + "\n" for r in records), encoding="utf-8")
    return path


def annotation(vid):
    return {"video_id": vid, "objects": ["dog", f"thing {vid}"], "actions": ["running"],
            "scenes": ["park"], "summary": f"video {vid}"}


@pytest.fixture
def toy_corpus(tmp_path):
    """Three queries over a 6-video pool; the relevant video sits at coarse rank 2, 4 and 6."""
    vids = [f"v{i}" for i in range(8)]
    ann = write_jsonl(tmp_path / "ann.jsonl", [annotation(v) for v in vids])
    cands, qrels = [], []
    for q, rel_pos in (("q1", 1), ("q2", 3), ("q3", 5)):
        ranking = vids[:]
        cands.append({"query_id": q, "query_text": f"text of {q}", "ranking": ranking,
                      "scores": [1.0 - 0.1 * i for i in range(len(ranking))]})
        qrels.append({"query_id": q, "relevant": [ranking[rel_pos]]})
    c = write_jsonl(tmp_path / "cands.jsonl", cands)
    r = write_jsonl(tmp_path / "qrels.jsonl", qrels)
    return c, ann, r


# one line per acceptance criterion, printed after the run whatever the capture mode
ACCEPTANCE_LINES: dict[int, str] = {}


def record_criterion(number, name, ok, detail):
    ACCEPTANCE_LINES[number] = f"criterion {number} [{'PASS' if ok else 'FAIL'}] {name}: {detail}"
    print(ACCEPTANCE_LINES[number])
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])
