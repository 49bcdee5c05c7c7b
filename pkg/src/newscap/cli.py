"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 data error, 3 gateway error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from newscap import emkb
from newscap.config import ConfigError, RunConfig, load_config
from newscap.emkb import EntityRecord, ImageAsset, KnowledgeBase
from newscap.graph import KnowledgeGraph
from newscap.ingest import CorpusError, LoadReport, load_corpus, make_fixtures, write_corpus
from newscap.metrics import EvalCorpus, evaluate
from newscap.ner import GazetteerNER

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_GATEWAY = 0, 1, 2, 3

logger = logging.getLogger("newscap")


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # argparse would exit with 2
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _load_kb(path: str | None) -> KnowledgeBase:
    if not path:
        raise UsageError("--kb is required")
    try:
        return emkb.load(path)
    except emkb.StoreFormatError as exc:
        raise DataError(f"cannot load knowledge base {path}: {exc}") from exc


def _read_vectors(path: str) -> np.ndarray:
    """``.npy`` array or JSON list (one vector or a list of vectors)."""
    try:
        if path.endswith(".npy"):
            arr = np.load(path)
        else:
            arr = np.asarray(json.loads(Path(path).read_text(encoding="utf-8")), dtype=np.float64)
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read vectors from {path}: {exc}") from exc
    return arr


def record_from_json(data: dict[str, Any]) -> EntityRecord:
    """Entity line for ``kb build``: embeddings inline as lists."""
    return EntityRecord(
        entity_id=data["entity_id"],
        canonical_name=data["name"],
        entity_type=data.get("type", "OTHER"),
        images=[
            ImageAsset(
                asset_id=a["asset_id"],
                image_embedding=a["image_embedding"],
                face_embeddings=a.get("face_embeddings", []),
                source=a.get("source", "dataset"),
                uri=a.get("uri", ""),
            )
            for a in data.get("images", [])
        ],
        background_text=data.get("background_text", ""),
        subgraph=KnowledgeGraph.from_dict(data.get("subgraph") or {}),
    )


def record_to_json(rec: EntityRecord) -> dict[str, Any]:
    return {
        "entity_id": rec.entity_id,
        "name": rec.canonical_name,
        "type": rec.entity_type.value,
        "background_text": rec.background_text,
        "subgraph": rec.subgraph.to_dict(),
        "images": [
            {
                "asset_id": a.asset_id,
                "source": a.source.value,
                "uri": a.uri,
                "image_embedding": a.image_embedding.tolist(),
                "face_embeddings": [f.tolist() for f in a.face_embeddings],
            }
            for a in rec.images
        ],
    }


def _emit(obj: Any) -> None:
    print(json.dumps(obj, sort_keys=True, ensure_ascii=False))


# -- kb ---------------------------------------------------------------------

def cmd_kb(args: argparse.Namespace) -> int:
    if args.kb_command == "build":
        records = []
        try:
            with open(args.records, encoding="utf-8") as fh:
                for lineno, line in enumerate(fh, 1):
                    if line.strip():
                        try:
                            records.append(record_from_json(json.loads(line)))
                        except (KeyError, ValueError, TypeError) as exc:
                            raise DataError(f"{args.records}:{lineno}: {exc}") from exc
        except OSError as exc:
            raise DataError(str(exc)) from exc
        if Path(args.kb, emkb.persist.MANIFEST_FILE).exists():
            kb = _load_kb(args.kb)
        else:
            face_dim = args.face_dim
            image_dim = args.image_dim
            for r in records:
                for a in r.images:
                    image_dim = image_dim or a.image_embedding.shape[0]
                    if a.face_embeddings:
                        face_dim = face_dim or a.face_embeddings[0].shape[0]
            if not image_dim:
                raise UsageError("cannot infer --image-dim from records")
            kb = KnowledgeBase(face_dim or image_dim, image_dim, image_cap=args.image_cap)
        try:
            kb.upsert_many(records)
        except ValueError as exc:
            raise DataError(str(exc)) from exc
        emkb.save(kb, args.kb)
        _emit({"upserted": len(records), **kb.stats()})
        return EXIT_OK

    kb = _load_kb(args.kb)
    if args.kb_command == "stats":
        _emit(kb.stats())
    elif args.kb_command == "dedup":
        holdout = _read_vectors(args.holdout) if args.holdout else np.empty((0, kb.image_dim))
        if holdout.ndim == 1:
            holdout = holdout[None, :]
        try:
            report = kb.dedup(list(holdout), args.delta)
        except ValueError as exc:
            raise DataError(str(exc)) from exc
        if not args.dry_run:
            emkb.save(kb, args.kb)
        _emit(
            {
                "delta": args.delta if args.delta is not None else kb.delta,
                "kept": len(report.kept),
                "removed": len(report.removed),
                "rejected": len(report.rejected),
                "removed_ids": report.removed,
                "rejected_ids": report.rejected,
            }
        )
    elif args.kb_command == "query":
        vec = _read_vectors(args.embedding)
        queries = vec if vec.ndim == 2 else vec[None, :]
        for q in queries:
            try:
                hits = kb.nearest_entities(q, args.modality, args.k)
            except ValueError as exc:
                raise DataError(str(exc)) from exc
            _emit(
                [
                    {"entity_id": h.entity_id, "name": kb.get(h.entity_id).canonical_name, "asset_id": h.asset_id, "similarity": h.similarity}
                    for h in hits
                ]
            )
    elif args.kb_command == "export":
        for rec in kb.records():
            _emit(record_to_json(rec))
    return EXIT_OK


# -- fixtures ----------------------------------------------------------------

def cmd_fixtures(args: argparse.Namespace) -> int:
    fx = make_fixtures(args.seed, args.n, face_dim=args.face_dim, image_dim=args.image_dim)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_corpus(fx.corpus, out / "corpus.jsonl")
    emkb.save(fx.kb, out / "kb")
    (out / "gazetteer.json").write_text(json.dumps(fx.gazetteer, indent=2, sort_keys=True, ensure_ascii=False) + "\n", encoding="utf-8")
    (out / "expected_matches.json").write_text(json.dumps(fx.expected_matches, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    _emit({"corpus": str(out / "corpus.jsonl"), "kb": str(out / "kb"), "articles": len(fx.corpus), **fx.kb.stats()})
    return EXIT_OK


# -- run ---------------------------------------------------------------------

def _config(args: argparse.Namespace) -> RunConfig:
    try:
        return load_config(
            args.config,
            kb_path=args.kb,
            gateway=args.gateway,
            mock_script=getattr(args, "mock_script", None),
            gazetteer=getattr(args, "gazetteer", None),
            base_url=getattr(args, "base_url", None),
            model=getattr(args, "model", None),
            delta=getattr(args, "delta", None),
            tau_face=args.tau_face,
            tau_clip=args.tau_clip,
            n_ctx=args.n_ctx,
            n_out=args.n_out,
            workers=args.workers,
            drain_timeout=getattr(args, "drain_timeout", None),
        )
    except ConfigError as exc:
        raise UsageError(str(exc)) from exc


def cmd_run(args: argparse.Namespace) -> int:
    from newscap.runtime import build_gateways, build_ner, completed_ids, run_batch

    config = _config(args)
    kb = _load_kb(config.kb_path)
    try:
        gateways = build_gateways(config, kb)
        ner = build_ner(config, kb)
    except (OSError, ValueError) as exc:
        raise UsageError(str(exc)) from exc
    report = LoadReport()
    try:
        records = list(load_corpus(args.input, strict=False, max_error_rate=1.0, report=report))
    except CorpusError as exc:
        raise DataError(str(exc)) from exc
    summary = run_batch(records, args.output, kb, gateways, config, ner, resume=args.resume, fail_fast=args.fail_fast)
    # records the loader rejected still get an inline error line
    if report.invalid and not summary.aborted:
        done = completed_ids(args.output) if args.resume else set()
        with open(args.output, "a", encoding="utf-8") as fh:
            for lineno, msg in report.invalid:
                aid = report.invalid_ids.get(lineno, f"{args.input}:{lineno}")
                if aid in done:
                    continue
                fh.write(json.dumps({"article_id": aid, "line": lineno, "error": {"stage": "ingest", "message": msg, "gateway": False}}, sort_keys=True) + "\n")
        summary.failed += len(report.invalid)
    _emit({"processed": summary.processed, "skipped": summary.skipped, "failed": summary.failed, "aborted": summary.aborted})
    if summary.aborted:
        return EXIT_GATEWAY if summary.gateway_failures else EXIT_DATA
    if args.fail_fast and report.invalid:
        return EXIT_DATA
    return EXIT_OK


# -- eval --------------------------------------------------------------------

def _read_jsonl(path: str) -> list[dict[str, Any]]:
    try:
        with open(path, encoding="utf-8") as fh:
            return [json.loads(line) for line in fh if line.strip()]
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc


def _item_id(rec: dict[str, Any]) -> str:
    return str(rec.get("item_id", rec.get("article_id")))


def build_eval_corpus(predictions: list[dict[str, Any]], gold: list[dict[str, Any]]) -> EvalCorpus:
    """Join prediction records (``caption`` or ``candidate``) with gold records (``references`` or ``gold_caption``)."""
    preds = {_item_id(p): p for p in predictions if "error" not in p}
    golds = {}
    for g in gold:
        refs = g.get("references")
        if refs is None:
            refs = [g["gold_caption"]] if g.get("gold_caption") else []
        golds[_item_id(g)] = refs
    orphans = sorted(set(preds) ^ set(golds))
    if orphans:
        raise DataError(f"unaligned item ids ({len(orphans)}): {', '.join(orphans[:20])}")
    items = [(i, preds[i].get("caption", preds[i].get("candidate", "")), golds[i]) for i in sorted(golds)]
    try:
        return EvalCorpus.from_items(items)
    except ValueError as exc:
        raise DataError(str(exc)) from exc


def cmd_eval(args: argparse.Namespace) -> int:
    corpus = build_eval_corpus(_read_jsonl(args.predictions), _read_jsonl(args.gold))
    if args.gazetteer:
        ner = GazetteerNER.from_file(args.gazetteer, heuristic=args.heuristic_ner)
    else:
        ner = GazetteerNER({}, heuristic=True)
    try:
        report = evaluate(corpus, ner, args.average)
    except ValueError as exc:
        raise DataError(str(exc)) from exc
    print(report.to_table())
    if args.output:
        Path(args.output).write_text(report.to_json() + "\n", encoding="utf-8")
    return EXIT_OK


# -- serve -------------------------------------------------------------------

def cmd_serve(args: argparse.Namespace) -> int:
    import signal
    import threading

    from newscap.runtime import build_gateways, build_ner
    from newscap.service import ServiceRunner, ServiceState, create_app

    config = _config(args)
    kb = _load_kb(config.kb_path)
    state = ServiceState(kb, build_gateways(config, kb), config, build_ner(config, kb))
    runner = ServiceRunner(create_app(state), args.host, args.port, config.drain_timeout).start()
    logger.info("serving on %s:%d", args.host, runner.port)
    done = threading.Event()
    for sig in (signal.SIGINT, signal.SIGTERM):
        signal.signal(sig, lambda *_: done.set())
    done.wait()
    runner.stop()
    return EXIT_OK


# -- parser ------------------------------------------------------------------

def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--kb", help="knowledge-base directory")
    p.add_argument("--config", help="JSON config file; flags override it")
    p.add_argument("--gateway", choices=["mock", "http"])
    p.add_argument("--mock-script", help="scripted responses for the mock chat provider")
    p.add_argument("--base-url", help="chat-completion endpoint base URL (http gateway)")
    p.add_argument("--model", help="model name (http gateway)")
    p.add_argument("--gazetteer", help="JSON map of extra entity names to types")
    p.add_argument("--tau-face", type=float)
    p.add_argument("--tau-clip", type=float)
    p.add_argument("--n-ctx", type=int)
    p.add_argument("--n-out", type=int)
    p.add_argument("--workers", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="newscap", description="Retrieval-augmented news image captioning")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    kb = sub.add_parser("kb", help="knowledge-base tools")
    kb_sub = kb.add_subparsers(dest="kb_command", required=True, parser_class=_Parser)
    b = kb_sub.add_parser("build", help="ingest entity records (JSONL) into a store")
    b.add_argument("--kb", required=True)
    b.add_argument("--records", required=True)
    b.add_argument("--face-dim", type=int)
    b.add_argument("--image-dim", type=int)
    b.add_argument("--image-cap", type=int, default=5)
    d = kb_sub.add_parser("dedup", help="remove near-duplicate images")
    d.add_argument("--kb", required=True)
    d.add_argument("--delta", type=float, default=None)
    d.add_argument("--holdout", help="holdout image embeddings (.npy or JSON)")
    d.add_argument("--dry-run", action="store_true")
    s = kb_sub.add_parser("stats", help="entity/image/triple counts")
    s.add_argument("--kb", required=True)
    q = kb_sub.add_parser("query", help="nearest entities for query embeddings")
    q.add_argument("--kb", required=True)
    q.add_argument("--embedding", required=True, help=".npy or JSON vector(s)")
    q.add_argument("--modality", choices=["face", "image"], default="face")
    q.add_argument("--k", type=int, default=1)
    e = kb_sub.add_parser("export", help="dump records as JSONL")
    e.add_argument("--kb", required=True)

    fx = sub.add_parser("fixtures", help="write a synthetic corpus and knowledge base")
    fx.add_argument("--seed", type=int, default=42)
    fx.add_argument("-n", type=int, default=50)
    fx.add_argument("--face-dim", type=int, default=512)
    fx.add_argument("--image-dim", type=int, default=512)
    fx.add_argument("--out", required=True)

    run = sub.add_parser("run", help="caption a corpus")
    run.add_argument("--input", required=True)
    run.add_argument("--output", required=True)
    _add_run_flags(run)
    run.add_argument("--delta", type=float)
    run.add_argument("--resume", action="store_true")
    run.add_argument("--fail-fast", action="store_true")

    ev = sub.add_parser("eval", help="score captions against gold references")
    ev.add_argument("--predictions", required=True)
    ev.add_argument("--gold", required=True)
    ev.add_argument("--gazetteer")
    ev.add_argument("--heuristic-ner", action="store_true")
    ev.add_argument("--average", choices=["micro", "macro"], default="micro")
    ev.add_argument("--output")

    sv = sub.add_parser("serve", help="run the HTTP service")
    _add_run_flags(sv)
    sv.add_argument("--host", default="127.0.0.1")
    sv.add_argument("--port", type=int, default=8080)
    sv.add_argument("--drain-timeout", type=float)
    return parser


COMMANDS = {"kb": cmd_kb, "fixtures": cmd_fixtures, "run": cmd_run, "eval": cmd_eval, "serve": cmd_serve}


def main(argv: Sequence[str] | None = None) -> int:
    from newscap.gateways import GatewayError

    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"newscap: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"newscap: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except GatewayError as exc:
        print(f"newscap: gateway error: {exc}", file=sys.stderr)
        return EXIT_GATEWAY


if __name__ == "__main__":
    sys.exit(main())
