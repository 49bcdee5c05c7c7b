"""Wiring helpers: gateway construction from a run config, and batch captioning."""

from __future__ import annotations

import json
import logging
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Sequence

from newscap.config import RunConfig
from newscap.emkb import KnowledgeBase
from newscap.errors import StageError
from newscap.gateways import (
    GatewayError,
    Gateways,
    HttpChat,
    MockChat,
    MockFaceDetector,
    MockImageEmbedder,
    RetryingChat,
    RetryPolicy,
)
from newscap.ingest import ArticleRecord
from newscap.ner import NER, GazetteerNER
from newscap.pipeline import kb_ner, run_pipeline

logger = logging.getLogger(__name__)


def build_gateways(config: RunConfig, kb: KnowledgeBase) -> Gateways:
    """Chat provider per ``config.gateway``; vision providers are always the local mocks."""
    if config.gateway == "http":
        if not config.base_url or not config.model:
            raise ValueError("http gateway needs base_url and model")
        inner = HttpChat(config.base_url, config.model)
    else:
        inner = MockChat.from_file(config.mock_script) if config.mock_script else MockChat()
    chat = RetryingChat(
        inner,
        RetryPolicy(limit=config.retry_limit, base_delay=config.retry_base_delay),
        max_in_flight=config.max_in_flight,
    )
    return Gateways(
        chat=chat,
        embedder=MockImageEmbedder(kb.image_dim, config.mock_salt),
        faces=MockFaceDetector(kb.face_dim, config.mock_salt),
    )


def build_ner(config: RunConfig, kb: KnowledgeBase) -> GazetteerNER:
    extra = None
    if config.gazetteer:
        extra = json.loads(Path(config.gazetteer).read_text(encoding="utf-8"))
    return kb_ner(kb, extra)


def caption_record(
    rec: ArticleRecord, kb: KnowledgeBase, gateways: Gateways, config: RunConfig, ner: NER
) -> dict[str, Any]:
    """Output record for one article; failures become an inline ``error`` entry."""
    timings: dict[str, float] = {}
    try:
        result = run_pipeline(rec.image_ref, rec.body, kb, gateways, config, ner, timings)
    except StageError as exc:
        logger.warning("%s failed at %s: %s", rec.article_id, exc.stage, exc.message)
        return {
            "article_id": rec.article_id,
            "error": {"stage": exc.stage, "message": exc.message, "gateway": is_gateway_failure(exc)},
        }
    finally:
        logger.info(
            "%s timings %s", rec.article_id, " ".join(f"{k}={v * 1000:.1f}ms" for k, v in timings.items())
        )
    return {"article_id": rec.article_id, "caption": result.caption, "provenance": result.provenance}


def is_gateway_failure(exc: BaseException | None) -> bool:
    while exc is not None:
        if isinstance(exc, GatewayError):
            return True
        exc = exc.__cause__
    return False


def completed_ids(path: str | Path) -> set[str]:
    """Article ids already present in an output file (torn last line ignored)."""
    done: set[str] = set()
    p = Path(path)
    if not p.exists():
        return done
    with open(p, encoding="utf-8") as fh:
        for line in fh:
            try:
                done.add(json.loads(line)["article_id"])
            except (json.JSONDecodeError, KeyError, TypeError):
                continue
    return done


@dataclass
class BatchSummary:
    processed: int = 0
    skipped: int = 0
    failed: int = 0
    gateway_failures: int = 0
    aborted: bool = False
    errors: list[str] = field(default_factory=list)


def run_batch(
    records: Iterable[ArticleRecord],
    output: str | Path,
    kb: KnowledgeBase,
    gateways: Gateways,
    config: RunConfig,
    ner: NER | None = None,
    resume: bool = False,
    fail_fast: bool = False,
) -> BatchSummary:
    """Caption records with up to ``config.workers`` concurrent runs.

    Output lines follow input order regardless of worker count. With
    ``resume`` the output file is appended to and ids already present are
    skipped; otherwise it is overwritten.
    """
    ner = ner if ner is not None else kb_ner(kb)
    summary = BatchSummary()
    done = completed_ids(output) if resume else set()
    if resume and Path(output).exists():
        _trim_torn_tail(Path(output))
    todo: list[ArticleRecord] = []
    for rec in records:
        if rec.article_id in done:
            summary.skipped += 1
        else:
            todo.append(rec)
    stop = threading.Event()

    def work(rec: ArticleRecord) -> dict[str, Any] | None:
        if stop.is_set():
            return None
        out = caption_record(rec, kb, gateways, config, ner)
        if "error" in out and fail_fast:
            stop.set()
        return out

    t0 = time.perf_counter()
    with open(output, "a" if resume else "w", encoding="utf-8", newline="\n") as fh, ThreadPoolExecutor(
        max_workers=config.workers, thread_name_prefix="caption"
    ) as pool:
        for out in pool.map(work, todo):
            if out is None:
                continue
            if summary.aborted:
                continue
            fh.write(json.dumps(out, sort_keys=True, ensure_ascii=False) + "\n")
            fh.flush()
            summary.processed += 1
            if "error" in out:
                summary.failed += 1
                summary.gateway_failures += int(out["error"]["gateway"])
                summary.errors.append(f"{out['article_id']}: [{out['error']['stage']}] {out['error']['message']}")
                if fail_fast:
                    summary.aborted = True
            if summary.processed % 10 == 0:
                logger.info("captioned %d/%d records", summary.processed, len(todo))
    logger.info(
        "batch done: %d processed, %d skipped, %d failed in %.2fs",
        summary.processed, summary.skipped, summary.failed, time.perf_counter() - t0,
    )
    return summary


def _trim_torn_tail(path: Path) -> None:
    data = path.read_bytes()
    if data and not data.endswith(b"\n"):
        path.write_bytes(data[: data.rfind(b"\n") + 1])
