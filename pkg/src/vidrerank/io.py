"""Line-delimited record files and packaged word lists."""

from __future__ import annotations

import json
import os
from importlib import resources
from typing import Iterable, Iterator


class ValidationError(ValueError):
    """Input data failed validation. Messages name the file, line or id at fault."""


def iter_jsonl(path: str | os.PathLike) -> Iterator[tuple[int, dict]]:
    """Yield ``(line_number, record)`` for every non-blank line."""
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValidationError(f"{path}:{lineno}: malformed JSON ({exc.msg})") from exc
            if not isinstance(rec, dict):
                raise ValidationError(f"{path}:{lineno}: expected a JSON object")
            yield lineno, rec


def write_jsonl(path: str | os.PathLike, records: Iterable[dict]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True, ensure_ascii=False) + "\n")


def read_lines(path: str | os.PathLike) -> list[str]:
    """Non-empty, non-comment lines of a plain-text list, stripped."""
    with open(path, encoding="utf-8") as fh:
        return _clean_lines(fh)


def packaged_lines(name: str) -> list[str]:
    text = resources.files("vidrerank").joinpath("data", name).read_text(encoding="utf-8")
    return _clean_lines(text.splitlines())


def _clean_lines(lines: Iterable[str]) -> list[str]:
    out = []
    for line in lines:
        line = line.rstrip("\n")
        if line.strip() and not line.lstrip().startswith("#"):
            out.append(line.strip())
    return out
