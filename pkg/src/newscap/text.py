"""Shared text routines: word counting, normalization, tokenization, sentence splitting."""

from __future__ import annotations

import re
import string

_WS = re.compile(r"\s+")
_TOKEN = re.compile(r"\w+|[^\w\s]", re.UNICODE)
_EDGE_CHARS = string.punctuation + "“”‘’«»…–— "

ABBREVIATIONS = frozenset(
    {
        "mr", "mrs", "ms", "dr", "prof", "sr", "jr", "st", "gen", "sen", "rep", "gov",
        "lt", "col", "capt", "sgt", "u.s", "u.k", "u.n", "inc", "corp", "ltd", "co",
        "jan", "feb", "mar", "apr", "jun", "jul", "aug", "sep", "sept", "oct", "nov", "dec",
        "no", "vs", "etc", "e.g", "i.e", "mt", "ft",
    }
)


def collapse_ws(text: str) -> str:
    return _WS.sub(" ", text).strip()


def words(text: str) -> list[str]:
    """Whitespace-separated words after trimming."""
    return text.split()


def word_count(text: str) -> int:
    return len(text.split())


def truncate_words(text: str, limit: int) -> str:
    """Keep the first ``limit`` whitespace-separated words.

    Text already within the limit is returned unchanged (not re-spaced).
    """
    parts = text.split()
    if len(parts) <= limit:
        return text.strip()
    return " ".join(parts[:limit])


def normalize_span(text: str) -> str:
    """Case-fold, collapse whitespace, strip surrounding quotes and punctuation."""
    return collapse_ws(text.casefold()).strip(_EDGE_CHARS)


def _folded_with_offsets(text: str) -> tuple[str, list[int]]:
    """Case-folded, whitespace-collapsed text plus the source index of each output char."""
    out: list[str] = []
    src: list[int] = []
    for i, ch in enumerate(text):
        if ch.isspace():
            if out and out[-1] != " ":
                out.append(" ")
                src.append(i)
            continue
        for c in ch.casefold():
            out.append(c)
            src.append(i)
    return "".join(out), src


def locate_span(haystack: str, needle: str, start: int = 0) -> tuple[int, str] | None:
    """Find ``needle`` in ``haystack`` under :func:`normalize_span` equivalence.

    Returns (offset, exact haystack slice of the match), or None. Trailing
    punctuation that follows the match in the haystack is kept.
    """
    key = normalize_span(needle)
    if not key:
        return None
    folded, src = _folded_with_offsets(haystack)
    pos = folded.find(key, start)
    if pos < 0:
        return None
    lo, hi = src[pos], src[pos + len(key) - 1] + 1
    while hi < len(haystack) and not haystack[hi].isspace() and haystack[hi] in _EDGE_CHARS:
        hi += 1
    return lo, haystack[lo:hi]


def normalize_label(text: str) -> str:
    """Node-label key: case-fold plus whitespace collapse."""
    return collapse_ws(text.casefold())


def tokenize(text: str) -> list[str]:
    """Metric tokenizer: case-fold, then split words from punctuation.

    >>> tokenize("Obama's speech, in D.C.")
    ['obama', "'", 's', 'speech', ',', 'in', 'd', '.', 'c', '.']
    """
    return _TOKEN.findall(text.casefold())


def split_sentences(text: str) -> list[str]:
    """Rule-based splitter on terminal punctuation with an abbreviation list."""
    text = collapse_ws(text)
    if not text:
        return []
    sentences: list[str] = []
    start = 0
    for m in re.finditer(r"[.!?]+[\"'”’)]*(?=\s+|$)", text):
        end = m.end()
        chunk = text[start:end]
        last_word = chunk[: m.start() - start].rsplit(" ", 1)[-1].casefold().lstrip("(\"'")
        if m.group().startswith(".") and len(m.group()) == 1:
            if last_word in ABBREVIATIONS or (len(last_word) == 1 and last_word.isalpha()):
                continue
            nxt = text[end:].lstrip()[:1]
            if nxt and nxt.islower():
                continue
        sentences.append(chunk.strip())
        start = end
    tail = text[start:].strip()
    if tail:
        sentences.append(tail)
    return [s for s in sentences if s]
