from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, NamedTuple


class EvalItem(NamedTuple):
    item_id: str
    candidate: str
    references: tuple[str, ...]


@dataclass(frozen=True)
class EvalCorpus:
    items: tuple[EvalItem, ...]

    def __post_init__(self) -> None:
        ids = [it.item_id for it in self.items]
        if len(set(ids)) != len(ids):
            raise ValueError("item ids must be unique")
        for it in self.items:
            if not it.references:
                raise ValueError(f"item {it.item_id}: references must be non-empty")

    @classmethod
    def from_items(cls, items: Iterable[tuple[str, str, Iterable[str]]]) -> EvalCorpus:
        return cls(tuple(EvalItem(str(i), c, tuple(r)) for i, c, r in items))

    @classmethod
    def from_pairs(cls, candidates: Iterable[str], references: Iterable[str | Iterable[str]]) -> EvalCorpus:
        items = []
        for n, (c, r) in enumerate(zip(candidates, references)):
            items.append((str(n), c, (r,) if isinstance(r, str) else tuple(r)))
        return cls.from_items(items)

    def __len__(self) -> int:
        return len(self.items)

    def __iter__(self) -> Iterator[EvalItem]:
        return iter(self.items)


def read_corpus(path: str | Path) -> EvalCorpus:
    """Line-delimited ``{"item_id", "candidate", "references": [...]}`` records."""
    items = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                rec = json.loads(line)
                items.append((rec["item_id"], rec["candidate"], rec["references"]))
    return EvalCorpus.from_items(items)


def _require(corpus: EvalCorpus, minimum: int = 1) -> None:
    if len(corpus) < minimum:
        raise ValueError(f"corpus needs at least {minimum} item(s), got {len(corpus)}")
