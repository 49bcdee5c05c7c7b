"""Three-stage alignment: hypothesis caption, relevant sentence selection, global summary."""

from __future__ import annotations

import json
import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable

from newscap.errors import StageError, StructuredOutputError
from newscap.gateways.base import ChatGateway, ChatRequest, GatewayError, ImageRefPart, Message
from newscap.prompts import load_template, render
from newscap.text import locate_span, normalize_span, truncate_words, word_count

logger = logging.getLogger(__name__)

MAX_CAPTION_WORDS = 30
MAX_KEY_SENTENCES = 10
MAX_RELEVANT = 5
MAX_SUMMARY_WORDS = 100
DEFAULT_RETRY_LIMIT = 3


@dataclass(frozen=True)
class StructuredSchema:
    """Expected JSON object shape: field name -> ``str`` or ``list`` (of strings)."""

    name: str
    fields: dict[str, type]
    plain_text_field: str | None = None


HYPOTHESIS_SCHEMA = StructuredSchema("hypothesis", {"caption": str, "key_sentences": list})
SENTENCES_SCHEMA = StructuredSchema("sentences", {"sentences": list})
SUMMARY_SCHEMA = StructuredSchema("summary", {"summary": str}, plain_text_field="summary")


@dataclass(frozen=True)
class Malformed:
    cause: str
    position: int | None = None

    def __bool__(self) -> bool:
        return False


_FENCE = re.compile(r"^```[a-zA-Z]*\s*|\s*```$")


def parse_structured(raw: Any, schema: StructuredSchema) -> dict[str, Any] | Malformed:
    """Parse model output against ``schema``; returns :class:`Malformed` instead of raising.

    Surrounding prose and Markdown code fences are tolerated. Schemas with a
    ``plain_text_field`` also accept a bare non-JSON reply as that field.
    """
    if not isinstance(raw, str):
        return Malformed(f"expected text, got {type(raw).__name__}")
    text = _FENCE.sub("", raw.strip())
    start = text.find("{")
    if start < 0:
        if schema.plain_text_field and text.strip():
            return {schema.plain_text_field: text.strip()}
        return Malformed("no JSON object found", 0)
    try:
        value, _ = json.JSONDecoder().raw_decode(text, start)
    except json.JSONDecodeError as exc:
        if schema.plain_text_field and text.strip():
            return {schema.plain_text_field: text.strip()}
        return Malformed(f"invalid JSON: {exc.msg}", exc.pos)
    except RecursionError:
        return Malformed("JSON nested too deeply", start)
    if not isinstance(value, dict):
        return Malformed("top-level JSON value is not an object", start)
    out: dict[str, Any] = {}
    for name, kind in schema.fields.items():
        if name not in value:
            return Malformed(f"missing required field {name!r}")
        v = value[name]
        if kind is str and not isinstance(v, str):
            return Malformed(f"field {name!r} must be a string")
        if kind is list and not (isinstance(v, list) and all(isinstance(x, str) for x in v)):
            return Malformed(f"field {name!r} must be a list of strings")
        out[name] = v
    return out


@dataclass(frozen=True)
class HypothesisCaption:
    text: str
    key_sentences: tuple[str, ...] = ()


@dataclass(frozen=True)
class RelevantSentences:
    sentences: tuple[str, ...] = ()
    dropped: tuple[str, ...] = field(default=(), compare=False)


@dataclass(frozen=True)
class GlobalSummary:
    text: str


@dataclass(frozen=True)
class AlignmentContext:
    hypothesis: HypothesisCaption
    relevant: RelevantSentences
    summary: GlobalSummary

    def to_dict(self) -> dict[str, Any]:
        return {
            "hypothesis": self.hypothesis.text,
            "key_sentences": list(self.hypothesis.key_sentences),
            "relevant_sentences": list(self.relevant.sentences),
            "summary": self.summary.text,
        }


def _request(prompt: str, image_ref: str | None, schema: str, context: dict[str, Any]) -> ChatRequest:
    parts: list = [prompt]
    if image_ref is not None:
        parts.insert(0, ImageRefPart(image_ref))
    return ChatRequest(
        messages=(Message.user(*parts),),
        max_output_tokens=512,
        temperature=0.0,
        response_schema=schema,
        context=context,
    )


def ask_structured(
    gateway: ChatGateway,
    request: ChatRequest,
    parse: Callable[[str], Any],
    retry_limit: int,
    stage: str,
) -> Any:
    """Call the gateway, re-prompting on malformed output.

    ``parse`` returns the accepted value or a :class:`Malformed`. The gateway is
    called at most ``1 + retry_limit`` times.
    """
    raw_outputs: list[str] = []
    current = request
    for attempt in range(1 + retry_limit):
        try:
            completion = gateway.complete(current)
        except GatewayError as exc:
            raise StageError(stage, f"gateway failure: {exc}") from exc
        raw_outputs.append(completion.text)
        result = parse(completion.text)
        if not isinstance(result, Malformed):
            return result
        logger.info("%s: malformed output on attempt %d (%s); re-prompting", stage, attempt + 1, result.cause)
        current = ChatRequest(
            messages=request.messages
            + (Message.user(f"Your previous reply could not be parsed ({result.cause}). Reply again in the required format only."),),
            max_output_tokens=request.max_output_tokens,
            temperature=request.temperature,
            response_schema=request.response_schema,
            context=request.context,
        )
    err = StructuredOutputError(f"output still malformed after {len(raw_outputs)} attempts", raw_outputs)
    raise StageError(stage, str(err), provenance={"raw_outputs": raw_outputs}) from err


def _require_article(article: str) -> None:
    if not article or not article.strip():
        raise ValueError("article must be non-empty")


def generate_hypothesis(
    image_ref: str | None,
    article: str,
    gateway: ChatGateway,
    retry_limit: int = DEFAULT_RETRY_LIMIT,
    template_dir=None,
) -> HypothesisCaption:
    """Stage 1: key sentences plus an entity-aware caption of at most 30 words."""
    _require_article(article)
    prompt = render(load_template("hypothesis", directory=template_dir), ARTICLE=article, IMAGE="<image>")

    def parse(raw: str):
        value = parse_structured(raw, HYPOTHESIS_SCHEMA)
        if isinstance(value, Malformed):
            return value
        if not value["caption"].strip():
            return Malformed("empty caption")
        return value

    value = ask_structured(
        gateway, _request(prompt, image_ref, "hypothesis", {"article": article}), parse, retry_limit, "hcma/stage 1"
    )
    keys = tuple(s.strip() for s in value["key_sentences"] if s.strip())[:MAX_KEY_SENTENCES]
    return HypothesisCaption(truncate_words(value["caption"], MAX_CAPTION_WORDS), keys)


def select_sentences(
    hypothesis: HypothesisCaption,
    image_ref: str | None,
    article: str,
    gateway: ChatGateway,
    retry_limit: int = DEFAULT_RETRY_LIMIT,
    template_dir=None,
) -> RelevantSentences:
    """Stage 2: up to five article sentences, kept only if they occur in the article.

    Output follows article order; selections that are not normalized substrings
    of the article are dropped and recorded in ``dropped``.
    """
    _require_article(article)
    prompt = render(
        load_template("sentences", directory=template_dir),
        ARTICLE=article,
        HYPOTHESIS=hypothesis.text,
        IMAGE="<image>",
    )
    request = _request(prompt, image_ref, "sentences", {"article": article, "hypothesis": hypothesis.text})
    value = ask_structured(
        gateway, request, lambda raw: parse_structured(raw, SENTENCES_SCHEMA), retry_limit, "hcma/stage 2"
    )
    located: list[tuple[int, str]] = []
    dropped: list[str] = []
    seen: set[str] = set()
    for sent in value["sentences"]:
        key = normalize_span(sent)
        if not key or key in seen:
            continue
        hit = locate_span(article, sent)
        if hit is None:
            logger.info("hcma/stage 2: dropping sentence not found in article: %.80r", sent)
            dropped.append(sent)
            continue
        seen.add(key)
        # the article's own text is kept so provenance is an exact substring
        located.append(hit)
    located.sort(key=lambda x: x[0])
    return RelevantSentences(tuple(s for _, s in located[:MAX_RELEVANT]), tuple(dropped))


def summarize(
    article: str,
    gateway: ChatGateway,
    retry_limit: int = DEFAULT_RETRY_LIMIT,
    template_dir=None,
) -> GlobalSummary:
    """Stage 3: article summary hard-capped at 100 words."""
    _require_article(article)
    prompt = render(load_template("summary", directory=template_dir), ARTICLE=article)

    def parse(raw: str):
        value = parse_structured(raw, SUMMARY_SCHEMA)
        if isinstance(value, Malformed):
            return value
        if not value["summary"].strip():
            return Malformed("empty summary")
        return value

    value = ask_structured(gateway, _request(prompt, None, "summary", {"article": article}), parse, retry_limit, "hcma/stage 3")
    return GlobalSummary(truncate_words(value["summary"], MAX_SUMMARY_WORDS))


def run_hcma(
    image_ref: str | None,
    article: str,
    gateway: ChatGateway,
    retry_limit: int = DEFAULT_RETRY_LIMIT,
    concurrent: bool = True,
    template_dir=None,
) -> AlignmentContext:
    """Stage 1, then Stage 2 alongside Stage 3 (which needs only the article)."""
    _require_article(article)
    hypothesis = generate_hypothesis(image_ref, article, gateway, retry_limit, template_dir)
    if not concurrent:
        relevant = select_sentences(hypothesis, image_ref, article, gateway, retry_limit, template_dir)
        summary = summarize(article, gateway, retry_limit, template_dir)
        return AlignmentContext(hypothesis, relevant, summary)
    with ThreadPoolExecutor(max_workers=1, thread_name_prefix="hcma-stage3") as pool:
        future = pool.submit(summarize, article, gateway, retry_limit, template_dir)
        try:
            relevant = select_sentences(hypothesis, image_ref, article, gateway, retry_limit, template_dir)
        finally:
            # stage 3 finishes before any stage 2 error surfaces
            summary_exc = future.exception()
        if summary_exc is not None:
            raise summary_exc
        summary = future.result()
    return AlignmentContext(hypothesis, relevant, summary)


def check_constraints(ctx: AlignmentContext, article: str) -> list[str]:
    """Violated output limits, as messages (empty when all hold)."""
    problems = []
    if word_count(ctx.hypothesis.text) > MAX_CAPTION_WORDS:
        problems.append("hypothesis caption too long")
    if len(ctx.hypothesis.key_sentences) > MAX_KEY_SENTENCES:
        problems.append("too many key sentences")
    if len(ctx.relevant.sentences) > MAX_RELEVANT:
        problems.append("too many relevant sentences")
    norm = normalize_span(article)
    for s in ctx.relevant.sentences:
        if normalize_span(s) not in norm:
            problems.append(f"sentence not in article: {s[:60]!r}")
    if word_count(ctx.summary.text) > MAX_SUMMARY_WORDS:
        problems.append("summary too long")
    return problems


__all__ = [
    "AlignmentContext",
    "GlobalSummary",
    "HYPOTHESIS_SCHEMA",
    "HypothesisCaption",
    "Malformed",
    "RelevantSentences",
    "SENTENCES_SCHEMA",
    "SUMMARY_SCHEMA",
    "StructuredSchema",
    "ask_structured",
    "check_constraints",
    "generate_hypothesis",
    "parse_structured",
    "run_hcma",
    "select_sentences",
    "summarize",
]
