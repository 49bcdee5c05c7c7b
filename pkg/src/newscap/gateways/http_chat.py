"""HTTP chat provider speaking the common JSON chat-completion shape.

Request body::

    {"model": str, "messages": [{"role": str, "content": [
        {"type": "text", "text": str} | {"type": "image_url", "image_url": {"url": str}}]}],
     "max_tokens": int, "temperature": float, "response_format": {"type": "json_object"}?}

Response body: ``choices[0].message.content`` and optional
``usage.prompt_tokens`` / ``usage.completion_tokens``.
"""

from __future__ import annotations

import base64
import mimetypes
import os
from typing import Any

import httpx

from newscap.gateways.base import (
    ChatRequest,
    Completion,
    ImageRefPart,
    ProviderError,
    TextPart,
    TransportError,
    Usage,
    estimate_tokens,
    read_image_bytes,
)

API_KEY_ENV = "NEWSCAP_API_KEY"
JSON_SCHEMAS = frozenset({"hypothesis", "sentences"})


def _image_url(ref: str) -> str:
    if ref.startswith(("http://", "https://", "data:")):
        return ref
    mime = mimetypes.guess_type(ref)[0] or "application/octet-stream"
    return f"data:{mime};base64," + base64.b64encode(read_image_bytes(ref)).decode("ascii")


def request_body(request: ChatRequest, model: str) -> dict[str, Any]:
    messages = []
    for m in request.messages:
        content = []
        for p in m.parts:
            if isinstance(p, TextPart):
                content.append({"type": "text", "text": p.text})
            elif isinstance(p, ImageRefPart):
                content.append({"type": "image_url", "image_url": {"url": _image_url(p.ref)}})
        messages.append({"role": m.role, "content": content})
    body: dict[str, Any] = {
        "model": model,
        "messages": messages,
        "max_tokens": request.max_output_tokens,
        "temperature": request.temperature,
    }
    if request.response_schema in JSON_SCHEMAS:
        body["response_format"] = {"type": "json_object"}
    return body


class HttpChat:
    """One attempt per call; wrap in :class:`RetryingChat` for retries."""

    def __init__(
        self,
        base_url: str,
        model: str,
        api_key: str | None = None,
        timeout: float = 60.0,
        client: httpx.Client | None = None,
    ):
        self.url = base_url.rstrip("/") + "/chat/completions"
        self.model = model
        self.api_key = api_key if api_key is not None else os.environ.get(API_KEY_ENV)
        self._client = client or httpx.Client(timeout=timeout)

    def close(self) -> None:
        self._client.close()

    def complete(self, request: ChatRequest) -> Completion:
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        try:
            resp = self._client.post(self.url, json=request_body(request, self.model), headers=headers)
        except httpx.TransportError as exc:
            raise TransportError(f"{type(exc).__name__}: {exc}") from exc
        if resp.status_code != 200:
            retryable = resp.status_code == 429 or resp.status_code >= 500
            raise ProviderError("chat completion failed", status=resp.status_code, retryable=retryable)
        try:
            data = resp.json()
            text = data["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise ProviderError(f"unexpected response body: {exc}", status=resp.status_code) from exc
        if not isinstance(text, str):
            raise ProviderError("choices[0].message.content is not a string", status=resp.status_code)
        usage = data.get("usage") or {}
        prompt_tokens = usage.get("prompt_tokens")
        output_tokens = usage.get("completion_tokens")
        return Completion(
            text,
            Usage(
                int(prompt_tokens) if prompt_tokens is not None else estimate_tokens(request.prompt_text()),
                int(output_tokens) if output_tokens is not None else estimate_tokens(text),
            ),
        )
