"""Entity-centric multimodal knowledge base."""

from newscap.emkb.persist import (
    StoreChecksumError,
    StoreFormatError,
    StoreTruncatedError,
    StoreVersionError,
    load,
    save,
)
from newscap.emkb.records import EntityRecord, EntityType, ImageAsset, ImageSource, as_vector
from newscap.emkb.similarity import DedupReport, ZeroNormError, cosine, dedup_images
from newscap.emkb.store import DimensionError, KnowledgeBase, Neighbor

__all__ = [
    "DedupReport",
    "DimensionError",
    "EntityRecord",
    "EntityType",
    "ImageAsset",
    "ImageSource",
    "KnowledgeBase",
    "Neighbor",
    "StoreChecksumError",
    "StoreFormatError",
    "StoreTruncatedError",
    "StoreVersionError",
    "ZeroNormError",
    "as_vector",
    "cosine",
    "dedup_images",
    "load",
    "save",
]
