import re
from functools import lru_cache

import pysbd

# Abbreviations after which a period never ends a sentence, on top of the
# ones pysbd already knows. Lower-cased, including the final period.
ABBREVIATIONS = frozenset(
    {
        "e.g.",
        "i.e.",
        "etc.",
        "vs.",
        "approx.",
        "inc.",
        "corp.",
        "ltd.",
        "co.",
        "no.",
        "fig.",
        "sec.",
        "ver.",
        "v.",
        "al.",
    }
)

_PARAGRAPH_BREAK = re.compile(r"\n[ \t]*\n")
_BULLET = re.compile(r"^[ \t]*(?:[-*•▪◦‣]|\d{1,3}[.)])[ \t]+")


@lru_cache(maxsize=1)
def _segmenter() -> pysbd.Segmenter:
    return pysbd.Segmenter(language="en", clean=False)


def _blocks(paragraph: str) -> list[str]:
    """Split a paragraph into blocks: each bullet item is its own block,
    hard-wrapped lines in between are joined."""
    blocks, current = [], []
    for line in paragraph.split("\n"):
        if _BULLET.match(line):
            if current:
                blocks.append(" ".join(current))
            current = [_BULLET.sub("", line).strip()]
        elif line.strip():
            current.append(line.strip())
    if current:
        blocks.append(" ".join(current))
    return [b for b in blocks if b]


def _ends_with_abbreviation(segment: str) -> bool:
    words = segment.split()
    return bool(words) and words[-1].lower() in ABBREVIATIONS


def _merge_false_breaks(segments: list[str]) -> list[str]:
    merged = []
    for segment in segments:
        if merged and (
            _ends_with_abbreviation(merged[-1]) or segment[:1].islower()
        ):
            merged[-1] = f"{merged[-1]} {segment}"
        else:
            merged.append(segment)
    return merged


def segment_report(text: str) -> list[str]:
    """Split report text into ordered sentences. Paragraph breaks and bullet
    items always end a sentence; empty segments are dropped."""
    if not text or not text.strip():
        return []
    sentences = []
    for paragraph in _PARAGRAPH_BREAK.split(text):
        for block in _blocks(paragraph):
            segments = [s.strip() for s in _segmenter().segment(block)]
            sentences.extend(_merge_false_breaks([s for s in segments if s]))
    return sentences
