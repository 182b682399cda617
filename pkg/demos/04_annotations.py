"""Preparing the judge's evidence: frame de-duplication and tag clean-up."""

from pathlib import Path

from vidrerank.annotate import (
    clean_annotation,
    filter_near_duplicates,
    load_annotations,
    load_frame_features,
    normalize_tag,
    perturb_tags,
    render_annotation_block,
)

data = Path(__file__).parent / "data"

for vid, frames in load_frame_features(data / "frames.jsonl").items():
    for t in (0.8, 0.95, 0.999):
        kept = filter_near_duplicates(frames, t)
        print(f"{vid} threshold {t}: keeps frames {[frames[i].frame_index for i in kept]}")

print()
for raw in ("The Dog!", "ice-cream  truck", "  A   red   CAR. "):
    print(f"{raw!r:22s} -> {normalize_tag(raw)!r}")

raw = load_annotations(data / "annotations.jsonl")["vid01"]
clean = clean_annotation(raw)
print("\nraw:  ", raw.objects, raw.actions, raw.scenes)
print("clean:", clean.objects, clean.actions, clean.scenes)
print("\nprompt block:\n" + render_annotation_block(clean))

noisy = perturb_tags(clean, fraction=0.5, seed=1)
print("\nwith half the tags swapped for decoys:\n" + render_annotation_block(noisy))
