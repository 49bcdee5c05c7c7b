"""In-memory entity knowledge base with exact cosine nearest-neighbour search."""

from __future__ import annotations

import threading
from dataclasses import dataclass, replace
from typing import Iterable, Literal, NamedTuple, Sequence

import numpy as np

from newscap.emkb.records import EntityRecord, ImageAsset
from newscap.emkb.similarity import DEFAULT_DELTA, DedupReport, ZeroNormError, dedup_images
from newscap.graph import KnowledgeGraph
from newscap.text import normalize_label

Modality = Literal["face", "image"]

DEFAULT_IMAGE_CAP = 5


class Neighbor(NamedTuple):
    entity_id: str
    asset_id: str
    similarity: float


class DimensionError(ValueError):
    def __init__(self, message: str, asset_id: str | None = None):
        super().__init__(message)
        self.asset_id = asset_id


@dataclass(frozen=True)
class _Index:
    """Rows sorted by (entity_id, asset_id) so the first maximum is the tie-break winner."""

    vectors: np.ndarray  # (rows, dim) float64
    norms: np.ndarray
    row_asset: np.ndarray  # row -> asset position
    assets: list[tuple[str, str]]  # asset position -> (entity_id, asset_id)

    @classmethod
    def build(cls, records: Iterable[EntityRecord], modality: Modality, dim: int) -> _Index:
        rows: list[np.ndarray] = []
        row_asset: list[int] = []
        assets: list[tuple[str, str]] = []
        for rec in sorted(records, key=lambda r: r.entity_id):
            for asset in sorted(rec.images, key=lambda a: a.asset_id):
                vecs = [asset.image_embedding] if modality == "image" else asset.face_embeddings
                if not vecs:
                    continue
                pos = len(assets)
                assets.append((rec.entity_id, asset.asset_id))
                for v in vecs:
                    rows.append(v)
                    row_asset.append(pos)
        if rows:
            vectors = np.vstack(rows).astype(np.float64)
        else:
            vectors = np.empty((0, dim))
        return cls(vectors, np.linalg.norm(vectors, axis=1), np.asarray(row_asset, dtype=np.int64), assets)

    def search(self, query: np.ndarray, k: int) -> list[Neighbor]:
        if not self.assets:
            return []
        qn = float(np.linalg.norm(query))
        if qn == 0.0:
            raise ZeroNormError("query has zero norm")
        with np.errstate(divide="ignore", invalid="ignore"):
            # row-wise reduction: identical rows must score identically for the tie-break
            sims = np.einsum("ij,j->i", self.vectors, query, optimize=False) / (self.norms * qn)
        sims = np.where(self.norms == 0.0, -np.inf, np.clip(sims, -1.0, 1.0))
        best = np.full(len(self.assets), -np.inf)
        np.maximum.at(best, self.row_asset, sims)
        order = np.argsort(-best, kind="stable")[:k]
        return [
            Neighbor(self.assets[i][0], self.assets[i][1], float(best[i]))
            for i in order
            if np.isfinite(best[i])
        ]


class _Snapshot:
    """Immutable view of the store contents; indexes are built lazily once."""

    def __init__(self, records: dict[str, EntityRecord], face_dim: int, image_dim: int):
        self.records = records
        self.by_name: dict[str, str] = {}
        for rec in sorted(records.values(), key=lambda r: r.entity_id):
            self.by_name.setdefault(rec.name_key, rec.entity_id)
        self.asset_owner = {a.asset_id: r.entity_id for r in records.values() for a in r.images}
        self._dims = {"face": face_dim, "image": image_dim}
        self._indexes: dict[str, _Index] = {}
        self._lock = threading.Lock()

    def index(self, modality: Modality) -> _Index:
        idx = self._indexes.get(modality)
        if idx is None:
            with self._lock:
                idx = self._indexes.get(modality)
                if idx is None:
                    idx = _Index.build(self.records.values(), modality, self._dims[modality])
                    self._indexes[modality] = idx
        return idx


class KnowledgeBase:
    """Entity-centric multimodal store.

    Readers always see a consistent immutable snapshot; writers serialize on a
    lock and publish a fresh snapshot when done.

    Args:
        face_dim: dimension of face embeddings.
        image_dim: dimension of whole-image embeddings.
        image_cap: maximum images kept per entity (extra images are dropped in
            insertion order).
        delta: default near-duplicate threshold for :meth:`dedup`.
    """

    def __init__(
        self,
        face_dim: int,
        image_dim: int,
        image_cap: int = DEFAULT_IMAGE_CAP,
        delta: float = DEFAULT_DELTA,
    ):
        if face_dim <= 0 or image_dim <= 0:
            raise ValueError("dims must be positive")
        if image_cap <= 0:
            raise ValueError("image_cap must be positive")
        self.face_dim = face_dim
        self.image_dim = image_dim
        self.image_cap = image_cap
        self.delta = delta
        self._write_lock = threading.Lock()
        self._snap = _Snapshot({}, face_dim, image_dim)

    # -- writes -----------------------------------------------------------

    def _check(self, record: EntityRecord) -> EntityRecord:
        for asset in record.images:
            if asset.image_embedding.shape[0] != self.image_dim:
                raise DimensionError(
                    f"asset {asset.asset_id}: image dim {asset.image_embedding.shape[0]} != {self.image_dim}",
                    asset.asset_id,
                )
            for f in asset.face_embeddings:
                if f.shape[0] != self.face_dim:
                    raise DimensionError(
                        f"asset {asset.asset_id}: face dim {f.shape[0]} != {self.face_dim}",
                        asset.asset_id,
                    )
        ids = [a.asset_id for a in record.images]
        if len(set(ids)) != len(ids):
            raise ValueError(f"entity {record.entity_id}: duplicate asset ids")
        return replace(record, images=list(record.images[: self.image_cap]))

    def upsert_many(self, records: Iterable[EntityRecord]) -> list[str]:
        checked = [self._check(r) for r in records]
        with self._write_lock:
            new = dict(self._snap.records)
            owners = dict(self._snap.asset_owner)
            for rec in checked:
                old = new.get(rec.entity_id)
                if old is not None:
                    for a in old.images:
                        owners.pop(a.asset_id, None)
                for a in rec.images:
                    owner = owners.get(a.asset_id)
                    if owner is not None and owner != rec.entity_id:
                        raise ValueError(f"asset id {a.asset_id} already belongs to entity {owner}")
                    owners[a.asset_id] = rec.entity_id
                new[rec.entity_id] = rec
            self._snap = _Snapshot(new, self.face_dim, self.image_dim)
        return [r.entity_id for r in checked]

    def upsert_entity(self, record: EntityRecord) -> str:
        """Insert or atomically replace a record; returns its id."""
        return self.upsert_many([record])[0]

    def dedup(self, holdout: Sequence[np.ndarray] = (), delta: float | None = None) -> DedupReport:
        """Apply the near-duplicate filter across every stored image.

        Images are scanned by ascending entity id, then stored order.
        """
        report = DedupReport()
        with self._write_lock:
            recs = sorted(self._snap.records.values(), key=lambda r: r.entity_id)
            all_assets = [a for r in recs for a in r.images]
            kept = {a.asset_id for a in dedup_images(all_assets, holdout, self.delta if delta is None else delta, report)}
            new = {
                r.entity_id: replace(r, images=[a for a in r.images if a.asset_id in kept]) for r in recs
            }
            self._snap = _Snapshot(new, self.face_dim, self.image_dim)
        return report

    # -- reads ------------------------------------------------------------

    def get(self, entity_id: str) -> EntityRecord | None:
        return self._snap.records.get(entity_id)

    def find_by_name(self, name: str) -> EntityRecord | None:
        eid = self._snap.by_name.get(normalize_label(name))
        return self._snap.records.get(eid) if eid else None

    def entity_ids(self) -> list[str]:
        return sorted(self._snap.records)

    def records(self) -> list[EntityRecord]:
        snap = self._snap
        return [snap.records[k] for k in sorted(snap.records)]

    def __len__(self) -> int:
        return len(self._snap.records)

    def __contains__(self, entity_id: object) -> bool:
        return entity_id in self._snap.records

    def get_subgraph(self, entity_id: str) -> KnowledgeGraph:
        """Stored subgraph, or an empty graph for unknown entities."""
        rec = self._snap.records.get(entity_id)
        return rec.subgraph.copy() if rec is not None else KnowledgeGraph()

    def nearest_entities(self, query, modality: Modality = "face", k: int = 1) -> list[Neighbor]:
        """Top-k assets by cosine similarity, best face per asset for the face modality.

        Ties break by ascending (entity_id, asset_id). An empty modality gives [].
        """
        if modality not in ("face", "image"):
            raise ValueError(f"unknown modality {modality!r}")
        if k < 1:
            raise ValueError("k must be positive")
        dim = self.face_dim if modality == "face" else self.image_dim
        q = np.asarray(query, dtype=np.float64)
        if q.ndim != 1 or q.shape[0] != dim:
            raise DimensionError(f"query dim {q.shape} != {dim} for {modality}")
        if not np.all(np.isfinite(q)):
            raise ValueError("query contains non-finite values")
        return self._snap.index(modality).search(q, k)

    def stats(self) -> dict[str, int]:
        recs = self._snap.records.values()
        return {
            "entities": len(self._snap.records),
            "images": sum(len(r.images) for r in recs),
            "faces": sum(len(a.face_embeddings) for r in recs for a in r.images),
            "triples": sum(len(r.subgraph.edges) for r in recs),
        }
