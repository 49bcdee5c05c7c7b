"""Exception hierarchy shared across the package."""

from __future__ import annotations

from typing import Any


class NewscapError(Exception):
    """Base class for all package errors."""


class StageError(NewscapError):
    """A pipeline stage failed.

    ``stage`` is a slash-separated label such as ``"hcma/stage 2"`` or
    ``"rmki/relations"``. ``provenance`` carries whatever partial results were
    produced before the failure.
    """

    def __init__(self, stage: str, message: str, *, provenance: dict[str, Any] | None = None):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage
        self.message = message
        self.provenance = provenance or {}


class StructuredOutputError(NewscapError):
    """Model output could not be parsed after all re-prompts."""

    def __init__(self, message: str, raw_outputs: list[str]):
        super().__init__(message)
        self.raw_outputs = list(raw_outputs)


class BudgetError(NewscapError):
    """Prompt cannot be reduced to fit the context budget."""
