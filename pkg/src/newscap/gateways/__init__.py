"""Pluggable model providers."""

from newscap.gateways.base import (
    BudgetExceededError,
    ChatGateway,
    ChatRequest,
    Completion,
    FaceDetection,
    FaceDetector,
    GatewayError,
    Gateways,
    ImageEmbedder,
    ImageError,
    ImageRefPart,
    Message,
    ProviderError,
    RetryingChat,
    RetryPolicy,
    TextPart,
    TransportError,
    Usage,
    estimate_tokens,
    read_image_bytes,
)
from newscap.gateways.http_chat import HttpChat
from newscap.gateways.mock import (
    MockChat,
    MockFaceDetector,
    MockImageEmbedder,
    ScriptRule,
    data_uri,
    identity_vector,
    synthetic_image,
)

__all__ = [
    "BudgetExceededError",
    "ChatGateway",
    "ChatRequest",
    "Completion",
    "FaceDetection",
    "FaceDetector",
    "GatewayError",
    "Gateways",
    "HttpChat",
    "ImageEmbedder",
    "ImageError",
    "ImageRefPart",
    "Message",
    "MockChat",
    "MockFaceDetector",
    "MockImageEmbedder",
    "ProviderError",
    "RetryPolicy",
    "RetryingChat",
    "ScriptRule",
    "TextPart",
    "TransportError",
    "Usage",
    "data_uri",
    "estimate_tokens",
    "identity_vector",
    "read_image_bytes",
    "synthetic_image",
]
