"""Entity records and image assets stored in the knowledge base."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from newscap.graph import KnowledgeGraph
from newscap.text import normalize_label


class EntityType(str, enum.Enum):
    PERSON = "PERSON"
    GPE = "GPE"
    ORG = "ORG"
    OTHER = "OTHER"


class ImageSource(str, enum.Enum):
    WIKIPEDIA = "wikipedia"
    WEB_SEARCH = "web_search"
    DATASET = "dataset"
    USER = "user"


def as_vector(values, dim: int | None = None, *, name: str = "embedding") -> np.ndarray:
    """Validate and convert to a 1-D float32 array.

    Raises ValueError on non-finite values, empty input, or a dimension other
    than ``dim`` when given.
    """
    arr = np.asarray(values, dtype=np.float32)
    if arr.ndim != 1 or arr.size == 0:
        raise ValueError(f"{name} must be a non-empty 1-D vector, got shape {arr.shape}")
    if not np.isfinite(arr).all():
        raise ValueError(f"{name} contains non-finite values")
    if dim is not None and arr.size != dim:
        raise ValueError(f"{name} has dim {arr.size}, expected {dim}")
    return arr


@dataclass
class ImageAsset:
    asset_id: str
    image_embedding: np.ndarray
    face_embeddings: list[np.ndarray] = field(default_factory=list)
    source: ImageSource = ImageSource.DATASET
    uri: str = ""

    def __post_init__(self) -> None:
        if not self.asset_id:
            raise ValueError("asset_id must be non-empty")
        self.source = ImageSource(self.source)
        self.image_embedding = as_vector(self.image_embedding, name=f"asset {self.asset_id} image embedding")
        self.face_embeddings = [
            as_vector(f, name=f"asset {self.asset_id} face embedding") for f in self.face_embeddings
        ]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ImageAsset):
            return NotImplemented
        return (
            self.asset_id == other.asset_id
            and self.source == other.source
            and self.uri == other.uri
            and _same_bits(self.image_embedding, other.image_embedding)
            and len(self.face_embeddings) == len(other.face_embeddings)
            and all(_same_bits(a, b) for a, b in zip(self.face_embeddings, other.face_embeddings))
        )


def _same_bits(a: np.ndarray, b: np.ndarray) -> bool:
    return a.dtype == b.dtype and a.shape == b.shape and a.tobytes() == b.tobytes()


@dataclass
class EntityRecord:
    """One knowledge-base entry: name, images, background text and knowledge subgraph."""

    entity_id: str
    canonical_name: str
    entity_type: EntityType = EntityType.OTHER
    images: list[ImageAsset] = field(default_factory=list)
    background_text: str = ""
    subgraph: KnowledgeGraph = field(default_factory=KnowledgeGraph)

    def __post_init__(self) -> None:
        if not self.entity_id:
            raise ValueError("entity_id must be non-empty")
        if not self.canonical_name or not self.canonical_name.strip():
            raise ValueError(f"entity {self.entity_id}: canonical_name must be non-empty")
        self.entity_type = EntityType(self.entity_type)
        if not self.subgraph.is_empty() and not self.subgraph.has_node(self.canonical_name):
            raise ValueError(
                f"entity {self.entity_id}: subgraph has no node named {self.canonical_name!r}"
            )

    @property
    def name_key(self) -> str:
        return normalize_label(self.canonical_name)
