"""Deterministic offline providers.

Synthetic fixture images are small JSON documents (see :func:`synthetic_image`)
listing planted faces and a scene key. The mock face detector reads the planted
faces back; the mock embedder maps a scene key (or, for any other bytes, a
content hash) to a seeded pseudo-random unit vector.
"""

from __future__ import annotations

import base64
import hashlib
import json
import re
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np

from newscap.gateways.base import (
    ChatRequest,
    Completion,
    FaceDetection,
    ProviderError,
    TransportError,
    Usage,
    estimate_tokens,
    read_image_bytes,
)
from newscap.text import split_sentences, truncate_words, words

DEFAULT_SALT = "newscap-mock-v1"
FIXTURE_KIND = "newscap-synthetic-image"


def seeded_unit_vector(key: str, dim: int, salt: str = DEFAULT_SALT) -> np.ndarray:
    digest = hashlib.sha256(f"{salt}\x00{key}".encode("utf-8")).digest()
    rng = np.random.default_rng(int.from_bytes(digest[:16], "little"))
    v = rng.standard_normal(dim)
    return (v / np.linalg.norm(v)).astype(np.float32)


def identity_vector(identity: str, modality: str, dim: int, salt: str = DEFAULT_SALT) -> np.ndarray:
    """Embedding the mock providers assign to a planted identity or scene key."""
    return seeded_unit_vector(f"{modality}:{identity}", dim, salt)


def synthetic_image(faces: Sequence[dict] = (), scene: str | None = None, note: str = "") -> bytes:
    """Bytes of a synthetic image.

    Each face dict carries ``identity``, ``confidence`` and optionally ``bbox``.
    """
    doc = {
        "kind": FIXTURE_KIND,
        "faces": [
            {
                "identity": f["identity"],
                "confidence": float(f.get("confidence", 0.99)),
                "bbox": list(f.get("bbox", (10.0, 10.0, 64.0, 64.0))),
            }
            for f in faces
        ],
        "scene": scene,
        "note": note,
    }
    return json.dumps(doc, sort_keys=True).encode("utf-8")


def data_uri(data: bytes, mime: str = "application/json") -> str:
    return f"data:{mime};base64," + base64.b64encode(data).decode("ascii")


def _fixture_doc(data: bytes) -> dict | None:
    if not data.startswith(b"{"):
        return None
    try:
        doc = json.loads(data)
    except (UnicodeDecodeError, json.JSONDecodeError):
        return None
    return doc if isinstance(doc, dict) and doc.get("kind") == FIXTURE_KIND else None


class MockImageEmbedder:
    def __init__(self, dim: int = 512, salt: str = DEFAULT_SALT, planted: dict[str, Any] | None = None):
        self.dim = dim
        self.salt = salt
        self.planted = dict(planted or {})

    def embed_image(self, image_ref: str) -> np.ndarray:
        if image_ref in self.planted:
            vec = np.asarray(self.planted[image_ref], dtype=np.float32)
        else:
            data = read_image_bytes(image_ref)
            doc = _fixture_doc(data)
            if doc is not None and doc.get("scene"):
                vec = identity_vector(doc["scene"], "image", self.dim, self.salt)
            else:
                vec = seeded_unit_vector("bytes:" + hashlib.sha256(data).hexdigest(), self.dim, self.salt)
        if vec.ndim != 1 or vec.shape[0] != self.dim:
            raise ProviderError(f"embedding has shape {vec.shape}, expected ({self.dim},)")
        return vec


class MockFaceDetector:
    def __init__(self, dim: int = 512, salt: str = DEFAULT_SALT):
        self.dim = dim
        self.salt = salt

    def detect_faces(self, image_ref: str, min_confidence: float = 0.8) -> list[FaceDetection]:
        if not 0.0 <= min_confidence <= 1.0:
            raise ValueError("min_confidence must be in [0, 1]")
        doc = _fixture_doc(read_image_bytes(image_ref))
        if doc is None:
            return []
        out = []
        for f in doc.get("faces", []):
            if f["confidence"] < min_confidence:
                continue
            out.append(
                FaceDetection(
                    bbox=tuple(float(x) for x in f["bbox"]),
                    confidence=float(f["confidence"]),
                    embedding=identity_vector(f["identity"], "face", self.dim, self.salt),
                )
            )
        return out


@dataclass
class ScriptRule:
    """Regex over the rendered prompt (and optional schema tag) -> scripted responses.

    Responses are consumed in order; the last one repeats. A response may be a
    string or ``{"error": "transport"}`` / ``{"error": "provider", "status": 503}``.
    """

    pattern: str = ""
    responses: list[Any] = field(default_factory=list)
    schema: str | None = None
    calls: int = 0

    def matches(self, request: ChatRequest) -> bool:
        if self.schema is not None and self.schema != request.response_schema:
            return False
        return re.search(self.pattern, request.prompt_text(), re.DOTALL) is not None

    def next(self) -> Any:
        i = min(self.calls, len(self.responses) - 1)
        self.calls += 1
        return self.responses[i]


def heuristic_response(request: ChatRequest) -> str:
    """Well-formed, deterministic stand-in output for each pipeline request type."""
    ctx = request.context
    schema = request.response_schema
    if schema == "hypothesis":
        sents = split_sentences(ctx.get("article", ""))
        return json.dumps(
            {"key_sentences": sents[:10], "caption": truncate_words(sents[0] if sents else "", 30)}
        )
    if schema == "sentences":
        sents = split_sentences(ctx.get("article", ""))
        anchor = {w.casefold().strip(".,;:!?\"'") for w in words(ctx.get("hypothesis", ""))}
        scored = sorted(
            range(len(sents)),
            key=lambda i: (-len(anchor & {w.casefold().strip(".,;:!?\"'") for w in words(sents[i])}), i),
        )
        return json.dumps({"sentences": [sents[i] for i in sorted(scored[:3])]})
    if schema == "summary":
        return truncate_words(" ".join(split_sentences(ctx.get("article", ""))), 100)
    if schema == "relations":
        ents = list(ctx.get("entities", []))
        return repr([(a, b, "mentioned with") for a, b in zip(ents, ents[1:])])
    if schema == "caption":
        names = [e for e in ctx.get("entity_names", [])]
        hyp = ctx.get("hypothesis", "").strip()
        if names and hyp and not any(n.casefold() in hyp.casefold() for n in names):
            return f"{' and '.join(names)}: {hyp}"
        return hyp or "A news photograph."
    return "OK"


class MockChat:
    """Scripted chat provider with a heuristic fallback for unmatched requests."""

    def __init__(
        self,
        rules: Sequence[ScriptRule] = (),
        fallback: Callable[[ChatRequest], str] | None = heuristic_response,
    ):
        self.rules = list(rules)
        self.fallback = fallback
        self.calls: list[ChatRequest] = []
        self._lock = threading.Lock()

    @classmethod
    def from_file(cls, path: str | Path) -> MockChat:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls([ScriptRule(r.get("pattern", ""), list(r["responses"]), r.get("schema")) for r in data.get("rules", [])])

    def complete(self, request: ChatRequest) -> Completion:
        with self._lock:
            self.calls.append(request)
            response: Any = None
            for rule in self.rules:
                if rule.matches(request):
                    response = rule.next()
                    break
        if response is None:
            if self.fallback is None:
                raise ProviderError("no scripted response matches request", status=404)
            response = self.fallback(request)
        if isinstance(response, dict):
            kind = response.get("error")
            if kind == "transport":
                raise TransportError("scripted transport failure")
            status = int(response.get("status", 500))
            raise ProviderError("scripted provider failure", status=status, retryable=status >= 500 or status == 429)
        text = truncate_words(str(response), request.max_output_tokens) if response else ""
        return Completion(text, Usage(estimate_tokens(request.prompt_text()), estimate_tokens(text)))

    def calls_for(self, schema: str) -> int:
        return sum(1 for r in self.calls if r.response_schema == schema)

