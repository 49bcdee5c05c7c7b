"""End-to-end caption generation: alignment, entity matching, background graph, prompt budget."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Sequence

from newscap.config import RunConfig
from newscap.emkb import KnowledgeBase
from newscap.errors import BudgetError, StageError
from newscap.gateways.base import ChatGateway, ChatRequest, GatewayError, Gateways, ImageRefPart, Message, estimate_tokens
from newscap.graph import KnowledgeGraph
from newscap.hcma import AlignmentContext, run_hcma
from newscap.ner import NER, GazetteerNER
from newscap.prompts import load_template
from newscap.rmki import EntityMatch, MatchConfig, build_background_kg, match_entities
from newscap.text import words

logger = logging.getLogger(__name__)

Estimator = Callable[[str], int]


def linearize_graph(g: KnowledgeGraph, max_triples: int) -> str:
    """One ``source relation target.`` line per triple, sorted, with a truncation marker."""
    return "\n".join(_graph_lines(g, max_triples))


def _sorted_triples(g: KnowledgeGraph) -> list[str]:
    return [f"{s} {r} {t}." for s, t, r in sorted((e.source, e.target, e.relation) for e in g.edges)]


def _graph_lines(g: KnowledgeGraph, max_triples: int) -> list[str]:
    if max_triples < 1:
        raise ValueError("max_triples must be positive")
    lines = _sorted_triples(g)
    if len(lines) <= max_triples:
        return lines
    return lines[:max_triples] + [f"…and {len(lines) - max_triples} more relations."]


@dataclass(frozen=True)
class CaptionInputs:
    image_ref: str | None
    alignment: AlignmentContext
    entities: tuple[EntityMatch, ...]
    graph: KnowledgeGraph


def assemble_inputs(
    image_ref: str | None,
    alignment: AlignmentContext,
    entities: Sequence[EntityMatch],
    graph: KnowledgeGraph,
) -> CaptionInputs:
    """Deduplicate entity matches (max similarity wins) and order them by similarity then name."""
    best: dict[str, EntityMatch] = {}
    for m in entities:
        if m.entity_id not in best or m.similarity > best[m.entity_id].similarity:
            best[m.entity_id] = m
    ordered = sorted(best.values(), key=lambda m: (-m.similarity, m.canonical_name, m.entity_id))
    return CaptionInputs(image_ref, alignment, tuple(ordered), graph)


@dataclass(frozen=True)
class PromptSections:
    """Prompt content in fixed section order: E, S, U, hypothesis, G, instruction."""

    entities: tuple[str, ...]
    sentences: tuple[str, ...]
    summary: str
    hypothesis: str
    triples: tuple[str, ...]
    hidden_triples: int
    instruction: str

    @classmethod
    def from_inputs(cls, inputs: CaptionInputs, max_triples: int, instruction: str) -> PromptSections:
        lines = _sorted_triples(inputs.graph)
        return cls(
            entities=tuple(m.canonical_name for m in inputs.entities),
            sentences=tuple(inputs.alignment.relevant.sentences),
            summary=inputs.alignment.summary.text,
            hypothesis=inputs.alignment.hypothesis.text,
            triples=tuple(lines[:max_triples]),
            hidden_triples=max(0, len(lines) - max_triples),
            instruction=instruction.strip(),
        )

    def render(self) -> str:
        blocks = []
        if self.entities:
            blocks.append("Entities in the image: " + "; ".join(self.entities))
        if self.sentences:
            blocks.append("Relevant sentences:\n" + "\n".join(f"- {s}" for s in self.sentences))
        if self.summary:
            blocks.append("Article summary: " + self.summary)
        blocks.append("Draft caption: " + self.hypothesis)
        if self.triples:
            graph = "\n".join(self.triples)
            if self.hidden_triples:
                graph += f"\n…and {self.hidden_triples} more relations."
            blocks.append("Background knowledge:\n" + graph)
        blocks.append(self.instruction)
        return "\n\n".join(blocks)


def enforce_budget(sections: PromptSections, n_ctx: int, estimator: Estimator = estimate_tokens) -> PromptSections:
    """Trim until the rendered prompt fits ``n_ctx`` estimated tokens.

    Order: graph triples (from the end), then the summary tail, then relevant
    sentences (from the end). Entities, draft caption and instruction are never
    trimmed; if they alone overflow, BudgetError is raised.
    """
    if n_ctx < 64:
        raise ValueError("n_ctx must be >= 64")

    def fits(s: PromptSections) -> bool:
        return estimator(s.render()) <= n_ctx

    if fits(sections):
        return sections
    cur = sections
    total = len(cur.triples) + cur.hidden_triples
    for keep in range(len(cur.triples) - 1, -1, -1):
        cur = replace(sections, triples=sections.triples[:keep], hidden_triples=total - keep if keep else 0)
        if fits(cur):
            return cur
    summary_words = words(cur.summary)
    lo, hi = 0, len(summary_words)
    if hi:
        # largest summary prefix that fits, by bisection
        while lo < hi:
            mid = (lo + hi + 1) // 2
            if fits(replace(cur, summary=" ".join(summary_words[:mid]))):
                lo = mid
            else:
                hi = mid - 1
        cur = replace(cur, summary=" ".join(summary_words[:lo]))
        if lo > 0 or fits(cur):
            return cur
    for keep in range(len(cur.sentences) - 1, -1, -1):
        cur = replace(cur, sentences=cur.sentences[:keep])
        if fits(cur):
            return cur
    raise BudgetError(f"irreducible prompt needs {estimator(cur.render())} tokens, budget {n_ctx}")


@dataclass(frozen=True)
class CaptionResult:
    caption: str
    provenance: dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return {"caption": self.caption, "provenance": self.provenance}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, ensure_ascii=False)


def _provenance(inputs: CaptionInputs) -> dict[str, Any]:
    return {
        "matched_entities": [m.to_dict() for m in inputs.entities],
        "selected_sentences": list(inputs.alignment.relevant.sentences),
        "summary": inputs.alignment.summary.text,
        "hypothesis": inputs.alignment.hypothesis.text,
        "graph_triple_count": len(inputs.graph.edges),
    }


def generate_caption(
    inputs: CaptionInputs,
    gateway: ChatGateway,
    config: RunConfig = RunConfig(),
    estimator: Estimator = estimate_tokens,
) -> CaptionResult:
    """Single budgeted completion call producing the final caption."""
    sections = PromptSections.from_inputs(inputs, config.max_triples, load_template("caption"))
    try:
        sections = enforce_budget(sections, config.n_ctx, estimator)
    except BudgetError as exc:
        raise StageError("pipeline/budget", str(exc), provenance=_provenance(inputs)) from exc
    prompt = sections.render()
    parts: list = [prompt] if inputs.image_ref is None else [ImageRefPart(inputs.image_ref), prompt]
    request = ChatRequest(
        messages=(Message.user(*parts),),
        max_output_tokens=config.n_out,
        temperature=0.0,
        response_schema="caption",
        context={"entity_names": list(sections.entities), "hypothesis": sections.hypothesis},
    )
    try:
        completion = gateway.complete(request)
    except GatewayError as exc:
        raise StageError("pipeline/generate", f"gateway failure: {exc}", provenance=_provenance(inputs)) from exc
    caption = " ".join(completion.text.split())
    if not caption:
        raise StageError("pipeline/generate", "empty completion", provenance=_provenance(inputs))
    prov = _provenance(inputs)
    prov.update(
        prompt_tokens=completion.usage.prompt_tokens,
        output_tokens=completion.usage.output_tokens,
        prompt_estimate=estimator(prompt),
    )
    return CaptionResult(caption, prov)


def kb_ner(kb: KnowledgeBase, extra: dict[str, str] | None = None, heuristic: bool = True) -> GazetteerNER:
    """Gazetteer tagger over the knowledge-base names plus optional extra names."""
    gaz = {r.canonical_name: r.entity_type.value for r in kb.records()}
    gaz.update(extra or {})
    return GazetteerNER(gaz, heuristic=heuristic)


def run_pipeline(
    image_ref: str | None,
    article: str,
    kb: KnowledgeBase,
    gateways: Gateways,
    config: RunConfig = RunConfig(),
    ner: NER | None = None,
    timings: dict[str, float] | None = None,
) -> CaptionResult:
    """Alignment, then entity matching and background graph on the selected sentences, then generation.

    Any failure surfaces as a StageError whose label names the stage and whose
    provenance holds the results gathered so far.
    """
    timings = timings if timings is not None else {}
    partial: dict[str, Any] = {}

    def stage(label: str, fn: Callable[[], Any]) -> Any:
        t0 = time.perf_counter()
        try:
            return fn()
        except StageError as exc:
            exc.provenance = {**partial, **exc.provenance}
            raise
        except Exception as exc:
            raise StageError(label, f"{type(exc).__name__}: {exc}", provenance=dict(partial)) from exc
        finally:
            timings[label] = time.perf_counter() - t0

    if not article or not article.strip():
        raise StageError("pipeline/input", "article text is empty")
    ner = ner if ner is not None else kb_ner(kb)
    alignment = stage("hcma", lambda: run_hcma(image_ref, article, gateways.chat, config.retry_limit))
    partial.update(alignment.to_dict())
    match_cfg = MatchConfig(config.face_conf, config.tau_face, config.tau_clip, config.k_clip)
    if image_ref is None:
        entities: list[EntityMatch] = []
    else:
        entities = stage("rmki/match", lambda: match_entities(image_ref, kb, gateways, match_cfg))
    partial["matched_entities"] = [m.to_dict() for m in entities]
    sentences = list(alignment.relevant.sentences)
    if sentences:
        graph = stage(
            "rmki/kg", lambda: build_background_kg(sentences, kb, gateways.chat, ner, config.retry_limit)
        )
    else:
        graph = KnowledgeGraph()
    partial["graph_triple_count"] = len(graph.edges)
    inputs = assemble_inputs(image_ref, alignment, entities, graph)
    return stage("pipeline/generate", lambda: generate_caption(inputs, gateways.chat, config))
