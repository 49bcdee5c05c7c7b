"""Entity matching against the knowledge base and background knowledge-graph construction."""

from __future__ import annotations

import ast
import json
import logging
import re
from dataclasses import dataclass
from typing import Any, Iterable, Literal, Sequence

from newscap.emkb import KnowledgeBase
from newscap.errors import StageError
from newscap.gateways.base import ChatGateway, ChatRequest, GatewayError, Gateways, Message
from newscap.graph import MAX_RELATION_WORDS, KnowledgeGraph, Triple
from newscap.hcma import DEFAULT_RETRY_LIMIT, Malformed, ask_structured
from newscap.ner import NER, unique_names
from newscap.prompts import load_template, render
from newscap.text import normalize_label

logger = logging.getLogger(__name__)

RelationTriple = Triple


@dataclass(frozen=True)
class MatchConfig:
    face_conf_threshold: float = 0.8
    tau_face: float = 0.4
    tau_clip: float = 0.25
    k_clip: int = 1


@dataclass(frozen=True)
class EntityMatch:
    entity_id: str
    canonical_name: str
    similarity: float
    path: Literal["face", "clip"]

    def to_dict(self) -> dict[str, Any]:
        return {
            "entity_id": self.entity_id,
            "name": self.canonical_name,
            "similarity": round(self.similarity, 6),
            "path": self.path,
        }


def match_entities(
    image_ref: str,
    kb: KnowledgeBase,
    gateways: Gateways,
    config: MatchConfig = MatchConfig(),
) -> list[EntityMatch]:
    """Entities shown in the image.

    With at least one detected face, each face is matched to its single nearest
    stored face; otherwise the whole-image embedding is matched against stored
    image embeddings. Matches below the path's similarity floor are discarded.
    Results are unique per entity (best similarity kept), sorted by descending
    similarity then entity id.
    """
    try:
        faces = gateways.faces.detect_faces(image_ref, config.face_conf_threshold)
        if faces:
            path: Literal["face", "clip"] = "face"
            hits = [n for f in faces for n in kb.nearest_entities(f.embedding, "face", 1)]
            floor = config.tau_face
        else:
            path = "clip"
            hits = kb.nearest_entities(gateways.embedder.embed_image(image_ref), "image", config.k_clip)
            floor = config.tau_clip
    except (GatewayError, ValueError) as exc:
        raise StageError("rmki/match", str(exc)) from exc
    best: dict[str, float] = {}
    for h in hits:
        if h.similarity >= floor and h.similarity > best.get(h.entity_id, float("-inf")):
            best[h.entity_id] = h.similarity
    matches = [EntityMatch(eid, kb.get(eid).canonical_name, sim, path) for eid, sim in best.items()]
    matches.sort(key=lambda m: (-m.similarity, m.entity_id))
    return matches


_LIST_SPAN = re.compile(r"\[.*\]", re.DOTALL)


def parse_relation_list(raw: str) -> list[tuple[str, str, str]] | Malformed:
    """Accept a Python tuple list or a JSON array of 3-element arrays."""
    m = _LIST_SPAN.search(raw or "")
    if m is None:
        return Malformed("no list found")
    text = m.group()
    value: Any = None
    try:
        value = json.loads(text)
    except json.JSONDecodeError:
        try:
            value = ast.literal_eval(text)
        except (ValueError, SyntaxError, TypeError, MemoryError, RecursionError) as exc:
            return Malformed(f"unparseable relation list: {exc}")
    if not isinstance(value, (list, tuple)):
        return Malformed("relations are not a list")
    out = []
    for item in value:
        if not (isinstance(item, (list, tuple)) and len(item) == 3 and all(isinstance(x, str) for x in item)):
            return Malformed(f"item {item!r} is not a (source, target, relation) triple")
        out.append(tuple(item))
    return out


def filter_relations(entities: Sequence[str], raw_triples: Iterable[tuple[str, str, str]]) -> list[Triple]:
    """Keep triples between known, distinct entities; one per unordered pair; relations cut to three words."""
    known = {normalize_label(e): e for e in reversed(entities)}
    seen_pairs: set[frozenset[str]] = set()
    out: list[Triple] = []
    for source, target, relation in raw_triples:
        s, t = normalize_label(source), normalize_label(target)
        if s not in known or t not in known or s == t:
            continue
        rel = " ".join(relation.split()[:MAX_RELATION_WORDS])
        if not rel:
            continue
        pair = frozenset((s, t))
        if pair in seen_pairs:
            continue
        seen_pairs.add(pair)
        out.append(Triple(known[s], known[t], rel))
    return out


def extract_relations(
    entities: Sequence[str],
    sentences: Sequence[str],
    gateway: ChatGateway,
    retry_limit: int = DEFAULT_RETRY_LIMIT,
    template_dir=None,
) -> list[Triple]:
    if not entities:
        raise ValueError("entities must be non-empty")
    prompt = render(
        load_template("relations", directory=template_dir),
        ENTITIES=", ".join(entities),
        SENTENCES="\n".join(sentences),
    )
    request = ChatRequest(
        messages=(Message.user(prompt),),
        max_output_tokens=512,
        response_schema="relations",
        context={"entities": list(entities), "sentences": list(sentences)},
    )
    raw = ask_structured(gateway, request, parse_relation_list, retry_limit, "rmki/relations")
    return filter_relations(entities, raw)


def construct_base_graph(entities: Iterable[str], triples: Iterable[Triple]) -> KnowledgeGraph:
    g = KnowledgeGraph(entities)
    for s, t, r in triples:
        if not (g.has_node(s) and g.has_node(t)):
            raise ValueError(f"triple ({s!r}, {t!r}, {r!r}) references an unknown entity")
        g.add_edge(s, t, r)
    return g


def integrate_graph(base: KnowledgeGraph, subgraphs: Iterable[KnowledgeGraph]) -> KnowledgeGraph:
    """Union of nodes and triples; first-seen display labels; base edges first."""
    out = base.copy()
    for sub in subgraphs:
        for node in sub.nodes:
            out.add_node(node)
        for s, t, r in sub.edges:
            out.add_edge(s, t, r)
    return out


def build_background_kg(
    sentences: Sequence[str],
    kb: KnowledgeBase,
    gateway: ChatGateway,
    ner: NER,
    retry_limit: int = DEFAULT_RETRY_LIMIT,
    template_dir=None,
) -> KnowledgeGraph:
    """NER over the sentences, relation extraction, base graph, subgraph retrieval, integration."""
    if not sentences:
        raise ValueError("sentences must be non-empty")
    try:
        entities = unique_names(m for s in sentences for m in ner(s))
    except Exception as exc:
        raise StageError("rmki/ner", f"entity recognition failed: {exc}") from exc
    if not entities:
        return KnowledgeGraph()
    triples = extract_relations(entities, sentences, gateway, retry_limit, template_dir)
    base = construct_base_graph(entities, triples)
    retrieved = []
    for name in entities:
        rec = kb.find_by_name(name)
        if rec is not None and not rec.subgraph.is_empty():
            retrieved.append(kb.get_subgraph(rec.entity_id))
    return integrate_graph(base, retrieved)
