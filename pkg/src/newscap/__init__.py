"""Retrieval-augmented news image captioning engine."""

from newscap.errors import StageError
from newscap.graph import KnowledgeGraph

__version__ = "0.1.0"

__all__ = ["KnowledgeGraph", "StageError", "__version__"]
