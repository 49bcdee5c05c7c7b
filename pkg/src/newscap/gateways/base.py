"""Gateway contracts shared by every provider: chat completion, image embedding, face detection."""

from __future__ import annotations

import base64
import binascii
import logging
import threading
import time
import urllib.parse
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Literal, Mapping, Protocol, Union, runtime_checkable

import numpy as np

logger = logging.getLogger(__name__)

DEFAULT_RETRY_LIMIT = 3
DEFAULT_BASE_DELAY = 0.25


class GatewayError(Exception):
    """Base class for model-provider failures."""


class TransportError(GatewayError):
    """Connection-level failure; safe to retry."""


class ProviderError(GatewayError):
    def __init__(self, message: str, status: int | None = None, retryable: bool = False):
        super().__init__(message if status is None else f"{message} (status {status})")
        self.status = status
        self.retryable = retryable


class BudgetExceededError(GatewayError):
    pass


class ImageError(GatewayError):
    """The image reference could not be resolved or decoded."""


@dataclass(frozen=True)
class TextPart:
    text: str


@dataclass(frozen=True)
class ImageRefPart:
    ref: str


Part = Union[TextPart, ImageRefPart]


@dataclass(frozen=True)
class Message:
    role: Literal["system", "user"]
    parts: tuple[Part, ...]

    @classmethod
    def user(cls, *parts: Part | str) -> Message:
        return cls("user", tuple(TextPart(p) if isinstance(p, str) else p for p in parts))

    @classmethod
    def system(cls, text: str) -> Message:
        return cls("system", (TextPart(text),))

    def text(self) -> str:
        return "\n".join(p.text for p in self.parts if isinstance(p, TextPart))


@dataclass(frozen=True)
class ChatRequest:
    """A chat-completion request.

    ``response_schema`` tags the expected output shape (``"hypothesis"``,
    ``"sentences"``, ``"summary"``, ``"relations"``, ``"caption"``). ``context``
    holds the structured inputs the prompt was rendered from; it is never sent
    over the wire but lets the mock provider answer without parsing prompts.
    """

    messages: tuple[Message, ...]
    max_output_tokens: int = 256
    temperature: float = 0.0
    response_schema: str | None = None
    context: Mapping[str, Any] = field(default_factory=dict, compare=False)

    def __post_init__(self) -> None:
        if not self.messages:
            raise ValueError("request needs at least one message")
        if self.max_output_tokens < 1:
            raise ValueError("max_output_tokens must be >= 1")
        if self.temperature < 0:
            raise ValueError("temperature must be non-negative")

    def prompt_text(self) -> str:
        return "\n".join(m.text() for m in self.messages)


@dataclass(frozen=True)
class Usage:
    prompt_tokens: int
    output_tokens: int


@dataclass(frozen=True)
class Completion:
    text: str
    usage: Usage


@dataclass(frozen=True)
class FaceDetection:
    bbox: tuple[float, float, float, float]
    confidence: float
    embedding: np.ndarray

    def __post_init__(self) -> None:
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence {self.confidence} outside [0, 1]")
        if self.bbox[2] <= 0 or self.bbox[3] <= 0:
            raise ValueError(f"bbox {self.bbox} has non-positive size")


def estimate_tokens(text: str) -> int:
    """Whitespace-word approximation used when a provider reports no usage."""
    return len(text.split())


@runtime_checkable
class ChatGateway(Protocol):
    def complete(self, request: ChatRequest) -> Completion: ...


@runtime_checkable
class ImageEmbedder(Protocol):
    dim: int

    def embed_image(self, image_ref: str) -> np.ndarray: ...


@runtime_checkable
class FaceDetector(Protocol):
    dim: int

    def detect_faces(self, image_ref: str, min_confidence: float = 0.8) -> list[FaceDetection]: ...


@dataclass
class Gateways:
    chat: ChatGateway
    embedder: ImageEmbedder
    faces: FaceDetector


def read_image_bytes(image_ref: str) -> bytes:
    """Resolve ``data:`` URIs, ``file://`` URIs and plain paths to raw bytes."""
    if image_ref.startswith("data:"):
        header, sep, payload = image_ref.partition(",")
        if not sep:
            raise ImageError("malformed data URI")
        try:
            if header.endswith(";base64"):
                return base64.b64decode(payload, validate=True)
            return urllib.parse.unquote_to_bytes(payload)
        except (binascii.Error, ValueError) as exc:
            raise ImageError(f"undecodable data URI: {exc}") from exc
    path = image_ref[7:] if image_ref.startswith("file://") else image_ref
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise ImageError(f"cannot read image {image_ref!r}: {exc}") from exc


@dataclass
class RetryPolicy:
    """Exponential backoff: delays base, base*factor, base*factor^2, ..."""

    limit: int = DEFAULT_RETRY_LIMIT
    base_delay: float = DEFAULT_BASE_DELAY
    factor: float = 2.0
    sleep: Callable[[float], None] = time.sleep

    def delays(self) -> list[float]:
        return [self.base_delay * self.factor**i for i in range(self.limit)]


def _retryable(exc: Exception) -> bool:
    if isinstance(exc, TransportError):
        return True
    return isinstance(exc, ProviderError) and exc.retryable


class RetryingChat:
    """Wraps a chat gateway with bounded retries and a cap on in-flight calls.

    At most ``1 + policy.limit`` attempts are made per request. Provider
    errors are retried only when flagged retryable (429 and 5xx).
    """

    def __init__(self, inner: ChatGateway, policy: RetryPolicy | None = None, max_in_flight: int = 8):
        self.inner = inner
        self.policy = policy or RetryPolicy()
        self._slots = threading.BoundedSemaphore(max_in_flight)
        self.attempts = 0

    def complete(self, request: ChatRequest) -> Completion:
        delays = self.policy.delays()
        for attempt in range(len(delays) + 1):
            try:
                with self._slots:
                    self.attempts += 1
                    completion = self.inner.complete(request)
            except GatewayError as exc:
                if not _retryable(exc) or attempt == len(delays):
                    raise
                logger.warning("chat attempt %d failed (%s); retrying in %.2fs", attempt + 1, exc, delays[attempt])
                self.policy.sleep(delays[attempt])
                continue
            if completion.usage.output_tokens > request.max_output_tokens:
                raise BudgetExceededError(
                    f"provider produced {completion.usage.output_tokens} tokens, limit {request.max_output_tokens}"
                )
            return completion
        raise AssertionError("unreachable")
