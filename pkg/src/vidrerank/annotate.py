"""Structured video annotations: frame de-duplication and tag clean-up.

Annotations are the judge's only evidence about a video, so they are kept in a
small fixed shape (objects, actions, scenes, summary) and serialized the same
way every time.
"""

from __future__ import annotations

import math
import os
import unicodedata
from dataclasses import dataclass, replace
from typing import Iterable, Mapping, Sequence

import numpy as np

from .io import ValidationError, iter_jsonl, packaged_lines, read_lines

ARTICLES = frozenset({"a", "an", "the"})
SECTIONS = ("objects", "actions", "scenes")

NOUN = "N"
VERB = "V"


@dataclass(frozen=True)
class FrameFeature:
    frame_index: int
    vector: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.vector, dtype=float)
        if v.ndim != 1:
            raise ValueError("frame feature must be a 1-d vector")
        if abs(np.linalg.norm(v) - 1.0) >= 1e-6:
            raise ValueError(f"frame {self.frame_index}: feature is not unit-normalized")
        object.__setattr__(self, "vector", v)


@dataclass(frozen=True)
class StructuredAnnotation:
    video_id: str
    objects: tuple[str, ...] = ()
    actions: tuple[str, ...] = ()
    scenes: tuple[str, ...] = ()
    summary: str = ""

    def __post_init__(self):
        for name in SECTIONS:
            object.__setattr__(self, name, tuple(getattr(self, name)))

    @property
    def total_tags(self) -> int:
        return sum(len(getattr(self, s)) for s in SECTIONS)

    def validate(self) -> None:
        """Raise ``ValueError`` unless tags are normalized and unique and a summary exists."""
        if not self.summary.strip():
            raise ValueError(f"{self.video_id}: empty summary")
        for s in SECTIONS:
            tags = getattr(self, s)
            if len(set(tags)) != len(tags):
                raise ValueError(f"{self.video_id}: duplicate tags in {s}")
            for t in tags:
                if not t or normalize_tag(t) != t:
                    raise ValueError(f"{self.video_id}: tag {t!r} in {s} is not normalized")

    def to_record(self) -> dict:
        return {"video_id": self.video_id, "objects": list(self.objects), "actions": list(self.actions),
                "scenes": list(self.scenes), "summary": self.summary}

    @classmethod
    def from_record(cls, rec: Mapping) -> "StructuredAnnotation":
        return cls(
            str(rec["video_id"]),
            tuple(rec.get("objects") or ()),
            tuple(rec.get("actions") or ()),
            tuple(rec.get("scenes") or ()),
            str(rec.get("summary") or ""),
        )


# ---------------------------------------------------------------------------
# Frames


def filter_near_duplicates(features: Sequence[FrameFeature] | np.ndarray, threshold: float = 0.95) -> list[int]:
    """Greedy sequential de-duplication of unit-norm frame features.

    Frame 0 is always kept. Each later frame is kept iff its cosine similarity
    to every frame kept so far is below ``threshold``. Returns the positions
    (in input order) of the kept frames.
    """
    if not 0 < threshold <= 1:
        raise ValueError("threshold must lie in (0, 1]")
    if isinstance(features, np.ndarray):
        mat = np.atleast_2d(np.asarray(features, dtype=float))
        norms = np.linalg.norm(mat, axis=1)
        if np.any(np.abs(norms - 1.0) >= 1e-6):
            raise ValueError("features must be unit-normalized")
    else:
        dims = {np.asarray(f.vector).shape for f in features}
        if len(dims) > 1:
            raise ValueError(f"dimension mismatch across frame features: {sorted(dims)}")
        mat = np.array([f.vector for f in features], dtype=float)
    if len(mat) == 0:
        return []

    kept = [0]
    for i in range(1, len(mat)):
        sims = mat[kept] @ mat[i]
        if sims.max() < threshold:
            kept.append(i)
    return kept


def load_frame_features(path: str | os.PathLike) -> dict[str, list[FrameFeature]]:
    """Read ``{video_id, frame_index, vector}`` lines, grouped by video and sorted by frame."""
    grouped: dict[str, list[FrameFeature]] = {}
    for lineno, rec in iter_jsonl(path):
        try:
            feat = FrameFeature(int(rec["frame_index"]), np.asarray(rec["vector"], dtype=float))
            grouped.setdefault(str(rec["video_id"]), []).append(feat)
        except (KeyError, TypeError, ValueError) as exc:
            raise ValidationError(f"{path}:{lineno}: bad frame record ({exc})") from exc
    for frames in grouped.values():
        frames.sort(key=lambda f: f.frame_index)
    return grouped


# ---------------------------------------------------------------------------
# Tags


def _is_punct(ch: str) -> bool:
    cat = unicodedata.category(ch)
    return cat.startswith("P") or cat.startswith("S")


def normalize_tag(raw: str) -> str:
    """Lowercase, delete punctuation, collapse whitespace, drop leading articles.

    Punctuation is deleted rather than replaced, so ``"ice-cream"`` becomes
    ``"icecream"``.
    """
    text = "".join(ch for ch in raw.lower() if not _is_punct(ch))
    tokens = text.split()
    while tokens and tokens[0] in ARTICLES:
        tokens.pop(0)
    return " ".join(tokens)


def dedup_tags(tags: Iterable[str]) -> list[str]:
    out: list[str] = []
    seen: set[str] = set()
    for t in tags:
        n = normalize_tag(t)
        if n and n not in seen:
            seen.add(n)
            out.append(n)
    return out


def default_stopwords() -> frozenset[str]:
    return frozenset(packaged_lines("stopwords.txt"))


def remove_stopwords(tokens: Iterable[str], stoplist: Iterable[str] | None = None) -> list[str]:
    stop = default_stopwords() if stoplist is None else frozenset(stoplist)
    return [t for t in tokens if t not in stop]


def load_lexicon(path: str | os.PathLike | None = None) -> dict[str, frozenset[str]]:
    """Word to part-of-speech set. Lines are ``word<whitespace>TAG [TAG ...]``."""
    lines = packaged_lines("pos_lexicon.txt") if path is None else read_lines(path)
    lexicon: dict[str, frozenset[str]] = {}
    for line in lines:
        word, *tags = line.split()
        lexicon[word.lower()] = frozenset(t.upper() for t in tags) | lexicon.get(word.lower(), frozenset())
    return lexicon


def pos_filter(tags: Iterable[str], lexicon: Mapping[str, Iterable[str]], kind: str) -> list[str]:
    """Keep tags whose head word may be ``kind`` (``"N"`` or ``"V"``).

    The head is the last token for nouns ("ice cream truck" -> "truck") and the
    first for verbs ("riding a bike" -> "riding"). Words the lexicon does not
    know are kept.
    """
    kind = kind.upper()[:1]
    if kind not in (NOUN, VERB):
        raise ValueError("kind must be NOUN or VERB")
    out = []
    for tag in tags:
        tokens = tag.split()
        if not tokens:
            continue
        head = (tokens[-1] if kind == NOUN else tokens[0]).lower()
        pos = lexicon.get(head)
        if pos is None or kind in pos:
            out.append(tag)
    return out


def clean_tags(
    tags: Iterable[str],
    kind: str,
    stoplist: Iterable[str] | None = None,
    lexicon: Mapping[str, Iterable[str]] | None = None,
) -> list[str]:
    """Full tag chain for one section: normalize, strip stop words, POS filter, dedup."""
    stop = default_stopwords() if stoplist is None else frozenset(stoplist)
    lexicon = load_lexicon() if lexicon is None else lexicon
    stripped = []
    for t in tags:
        words = remove_stopwords(normalize_tag(t).split(), stop)
        if words:
            stripped.append(" ".join(words))
    return dedup_tags(pos_filter(stripped, lexicon, kind))


def clean_annotation(
    ann: StructuredAnnotation,
    stoplist: Iterable[str] | None = None,
    lexicon: Mapping[str, Iterable[str]] | None = None,
) -> StructuredAnnotation:
    stop = default_stopwords() if stoplist is None else frozenset(stoplist)
    lexicon = load_lexicon() if lexicon is None else lexicon
    return replace(
        ann,
        objects=tuple(clean_tags(ann.objects, NOUN, stop, lexicon)),
        actions=tuple(clean_tags(ann.actions, VERB, stop, lexicon)),
        scenes=tuple(clean_tags(ann.scenes, NOUN, stop, lexicon)),
        summary=" ".join(ann.summary.split()),
    )


def perturb_tags(
    ann: StructuredAnnotation,
    fraction: float = 0.2,
    seed: int = 0,
    decoys: Sequence[str] | None = None,
) -> StructuredAnnotation:
    """Swap a seeded random ``ceil(fraction * total_tags)`` tags for decoys.

    Tag positions are drawn uniformly without replacement across all three
    sections. A replacement never equals the tag it replaces and, when the
    pool allows, never duplicates a tag already in that section.
    """
    if not 0 <= fraction <= 1:
        raise ValueError("fraction must lie in [0, 1]")
    decoys = list(packaged_lines("decoys.txt") if decoys is None else decoys)
    slots = [(s, i) for s in SECTIONS for i in range(len(getattr(ann, s)))]
    n = math.ceil(round(fraction * len(slots), 9))
    if n == 0:
        return ann
    if not decoys:
        raise ValueError("decoy pool is empty")

    rng = np.random.default_rng(seed)
    chosen = sorted(rng.choice(len(slots), size=n, replace=False).tolist())
    sections = {s: list(getattr(ann, s)) for s in SECTIONS}
    for idx in chosen:
        s, i = slots[idx]
        original = sections[s][i]
        pool = [d for d in decoys if d != original and d not in sections[s]]
        if not pool:
            pool = [d for d in decoys if d != original] or decoys
        sections[s][i] = pool[int(rng.integers(len(pool)))]
    return replace(ann, **{s: tuple(v) for s, v in sections.items()})


def render_annotation_block(ann: StructuredAnnotation) -> str:
    def join(tags):
        return ", ".join(tags) if tags else "(none)"

    return (
        f"Objects: {join(ann.objects)}\n"
        f"Actions: {join(ann.actions)}\n"
        f"Scenes: {join(ann.scenes)}\n"
        f"Summary: {ann.summary}"
    )


def load_annotations(path: str | os.PathLike) -> dict[str, StructuredAnnotation]:
    out: dict[str, StructuredAnnotation] = {}
    for lineno, rec in iter_jsonl(path):
        try:
            ann = StructuredAnnotation.from_record(rec)
        except (KeyError, TypeError) as exc:
            raise ValidationError(f"{path}:{lineno}: bad annotation record ({exc})") from exc
        if ann.video_id in out:
            raise ValidationError(f"{path}:{lineno}: duplicate annotation for video {ann.video_id!r}")
        out[ann.video_id] = ann
    return out
