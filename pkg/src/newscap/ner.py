"""Pluggable named-entity recognizers.

The default tagger is a gazetteer matcher with an optional capitalization
heuristic for names the gazetteer does not know. Any callable mapping text to
a list of :class:`Mention` can stand in for it.
"""

from __future__ import annotations

import json
import re
from pathlib import Path
from typing import Callable, Iterable, Mapping, NamedTuple

ENTITY_TYPES = ("PERSON", "GPE", "ORG", "OTHER")

_CAP_WORD = re.compile(r"\b[A-Z][\w'’\-]*(?:\s+[A-Z][\w'’\-]*)*")
_SENTENCE_START_STOP = frozenset(
    "a an the in on at he she it they we i this that these those but and or as after before "
    "when while if for from with by of to its his her their our there here".split()
)


class Mention(NamedTuple):
    surface: str
    type: str
    start: int = -1


NER = Callable[[str], list[Mention]]


class GazetteerNER:
    """Longest-match gazetteer tagger.

    Args:
        gazetteer: surface name -> entity type.
        heuristic: also tag runs of capitalized words not covered by the
            gazetteer, as type OTHER.
        ignore_case: match gazetteer names case-insensitively.
    """

    def __init__(self, gazetteer: Mapping[str, str] | None = None, heuristic: bool = False, ignore_case: bool = False):
        self.gazetteer: dict[str, str] = {}
        self.heuristic = heuristic
        self.ignore_case = ignore_case
        for name, etype in (gazetteer or {}).items():
            self.add(name, etype)
        self._pattern: re.Pattern[str] | None = None

    def add(self, name: str, etype: str) -> None:
        if etype not in ENTITY_TYPES:
            raise ValueError(f"unknown entity type {etype!r}")
        name = " ".join(name.split())
        if name:
            self.gazetteer[self._key(name)] = etype
            self._pattern = None

    def _key(self, name: str) -> str:
        name = " ".join(name.split())
        return name.casefold() if self.ignore_case else name

    @classmethod
    def from_file(cls, path: str | Path, **kwargs) -> GazetteerNER:
        return cls(json.loads(Path(path).read_text(encoding="utf-8")), **kwargs)

    def _compiled(self) -> re.Pattern[str] | None:
        if self._pattern is None and self.gazetteer:
            names = sorted(self.gazetteer, key=lambda n: (-len(n), n))
            alts = "|".join(r"\s+".join(map(re.escape, n.split())) for n in names)
            flags = re.IGNORECASE if self.ignore_case else 0
            self._pattern = re.compile(rf"(?<![\w])(?:{alts})(?![\w])", flags)
        return self._pattern

    def __call__(self, text: str) -> list[Mention]:
        mentions: list[Mention] = []
        covered: list[tuple[int, int]] = []
        pattern = self._compiled()
        if pattern is not None:
            for m in pattern.finditer(text):
                surface = " ".join(m.group().split())
                mentions.append(Mention(surface, self.gazetteer[self._key(surface)], m.start()))
                covered.append((m.start(), m.end()))
        if self.heuristic:
            for m in _CAP_WORD.finditer(text):
                if any(s < m.end() and m.start() < e for s, e in covered):
                    continue
                toks = m.group().split()
                at_start = m.start() == 0 or re.search(r"[.!?][\"'”’)]*\s*$", text[: m.start()]) is not None
                while toks and toks[0].casefold() in _SENTENCE_START_STOP:
                    toks = toks[1:]
                # a lone capitalized word opening a sentence is ambiguous
                if not toks or (at_start and len(m.group().split()) == 1):
                    continue
                mentions.append(Mention(" ".join(toks), "OTHER", m.start()))
        mentions.sort(key=lambda x: x.start)
        return mentions


def unique_names(mentions: Iterable[Mention]) -> list[str]:
    """Distinct surfaces (whitespace/case-insensitive) in first-seen order."""
    seen: set[str] = set()
    out = []
    for m in mentions:
        key = " ".join(m.surface.casefold().split())
        if key not in seen:
            seen.add(key)
            out.append(m.surface)
    return out
