"""Labeled directed knowledge graphs with normalized node identity."""

from __future__ import annotations

from typing import Any, Iterable, Iterator, NamedTuple

from newscap.text import collapse_ws, normalize_label

MAX_RELATION_WORDS = 3


class Triple(NamedTuple):
    source: str
    target: str
    relation: str

    def key(self) -> tuple[str, str, str]:
        return (normalize_label(self.source), normalize_label(self.target), collapse_ws(self.relation))


class KnowledgeGraph:
    """Nodes keyed by normalized label; edges are unique (source, target, relation) triples.

    Display labels keep the casing of the first time a node was seen. Equality
    compares normalized node and triple sets, so insertion order and display
    casing do not matter.
    """

    __slots__ = ("_nodes", "_edges", "_edge_keys")

    def __init__(self, nodes: Iterable[str] = (), edges: Iterable[tuple[str, str, str]] = ()):
        self._nodes: dict[str, str] = {}
        self._edges: list[Triple] = []
        self._edge_keys: set[tuple[str, str, str]] = set()
        for node in nodes:
            self.add_node(node)
        for s, t, r in edges:
            self.add_edge(s, t, r)

    def add_node(self, label: str) -> str:
        """Insert a node if new; return its display label."""
        if not isinstance(label, str) or not label.strip():
            raise ValueError(f"node label must be a non-empty string, got {label!r}")
        key = normalize_label(label)
        if key not in self._nodes:
            self._nodes[key] = collapse_ws(label)
        return self._nodes[key]

    def add_edge(self, source: str, target: str, relation: str) -> bool:
        """Insert an edge, creating missing endpoints. Returns False for a duplicate."""
        relation = collapse_ws(relation or "")
        if not relation:
            raise ValueError("relation must be non-empty")
        if len(relation.split()) > MAX_RELATION_WORDS:
            raise ValueError(f"relation {relation!r} exceeds {MAX_RELATION_WORDS} words")
        s = self.add_node(source)
        t = self.add_node(target)
        triple = Triple(s, t, relation)
        key = triple.key()
        if key in self._edge_keys:
            return False
        self._edge_keys.add(key)
        self._edges.append(triple)
        return True

    def has_node(self, label: str) -> bool:
        return normalize_label(label) in self._nodes

    def label(self, label: str) -> str | None:
        return self._nodes.get(normalize_label(label))

    @property
    def nodes(self) -> list[str]:
        return list(self._nodes.values())

    @property
    def edges(self) -> list[Triple]:
        return list(self._edges)

    def node_keys(self) -> set[str]:
        return set(self._nodes)

    def triple_keys(self) -> set[tuple[str, str, str]]:
        return set(self._edge_keys)

    def is_empty(self) -> bool:
        return not self._nodes

    def __len__(self) -> int:
        return len(self._nodes)

    def __iter__(self) -> Iterator[Triple]:
        return iter(self._edges)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, KnowledgeGraph):
            return NotImplemented
        return self._nodes.keys() == other._nodes.keys() and self._edge_keys == other._edge_keys

    def __repr__(self) -> str:
        return f"KnowledgeGraph(nodes={len(self._nodes)}, edges={len(self._edges)})"

    def copy(self) -> KnowledgeGraph:
        g = KnowledgeGraph()
        g._nodes = dict(self._nodes)
        g._edges = list(self._edges)
        g._edge_keys = set(self._edge_keys)
        return g

    def isolated_nodes(self) -> list[str]:
        touched = {normalize_label(x) for e in self._edges for x in (e.source, e.target)}
        return [label for key, label in self._nodes.items() if key not in touched]

    def to_dict(self) -> dict[str, Any]:
        return {"nodes": self.nodes, "edges": [list(e) for e in self._edges]}

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> KnowledgeGraph:
        return cls(data.get("nodes", ()), (tuple(e) for e in data.get("edges", ())))

    def serialize(self) -> str:
        """Sorted ``source<TAB>relation<TAB>target`` lines plus ``node<TAB><TAB>`` for isolated nodes."""
        lines = [f"{e.source}\t{e.relation}\t{e.target}" for e in self._edges]
        lines += [f"{n}\t\t" for n in self.isolated_nodes()]
        lines.sort()
        return "".join(line + "\n" for line in lines)

    @classmethod
    def deserialize(cls, text: str) -> KnowledgeGraph:
        g = cls()
        for line in text.splitlines():
            if not line:
                continue
            source, relation, target = line.split("\t")
            if relation or target:
                g.add_edge(source, target, relation)
            else:
                g.add_node(source)
        return g
