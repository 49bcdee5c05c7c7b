"""Directory persistence: ``entities.jsonl`` + ``embeddings.bin`` + ``MANIFEST``.

``embeddings.bin`` layout (little-endian)::

    b"EMKB" | version u32 | face_dim u32 | image_dim u32 | vector_count u64 | float32 rows...

Each asset line in ``entities.jsonl`` records the byte offset of its image
vector and of each face vector.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
from pathlib import Path

import numpy as np

from newscap.emkb.records import EntityRecord, ImageAsset
from newscap.emkb.store import KnowledgeBase
from newscap.graph import KnowledgeGraph

MAGIC = b"EMKB"
FORMAT_VERSION = 1
HEADER = struct.Struct("<4sIIIQ")

ENTITIES_FILE = "entities.jsonl"
EMBEDDINGS_FILE = "embeddings.bin"
MANIFEST_FILE = "MANIFEST"


class StoreFormatError(Exception):
    """File is not a knowledge-base store (bad magic, bad JSON, missing file)."""


class StoreVersionError(StoreFormatError):
    pass


class StoreTruncatedError(StoreFormatError):
    pass


class StoreChecksumError(StoreFormatError):
    pass


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_atomic(path: Path, data: bytes) -> None:
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(data)
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)


def save(kb: KnowledgeBase, path: str | os.PathLike) -> Path:
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    records = kb.records()
    blobs: list[bytes] = []
    offset = HEADER.size
    lines: list[str] = []
    for rec in records:
        assets = []
        for a in rec.images:
            img = a.image_embedding.astype("<f4").tobytes()
            blobs.append(img)
            img_off = offset
            offset += len(img)
            face_offs = []
            for f in a.face_embeddings:
                b = f.astype("<f4").tobytes()
                blobs.append(b)
                face_offs.append(offset)
                offset += len(b)
            assets.append(
                {
                    "asset_id": a.asset_id,
                    "source": a.source.value,
                    "uri": a.uri,
                    "image_offset": img_off,
                    "face_offsets": face_offs,
                }
            )
        lines.append(
            json.dumps(
                {
                    "entity_id": rec.entity_id,
                    "name": rec.canonical_name,
                    "type": rec.entity_type.value,
                    "background_text": rec.background_text,
                    "subgraph": rec.subgraph.to_dict(),
                    "assets": assets,
                },
                ensure_ascii=False,
                sort_keys=True,
            )
        )
    header = HEADER.pack(MAGIC, FORMAT_VERSION, kb.face_dim, kb.image_dim, len(blobs))
    _write_atomic(root / EMBEDDINGS_FILE, header + b"".join(blobs))
    _write_atomic(root / ENTITIES_FILE, "".join(l + "\n" for l in lines).encode("utf-8"))
    manifest = {
        "format_version": FORMAT_VERSION,
        "image_cap": kb.image_cap,
        "delta": kb.delta,
        "files": {
            EMBEDDINGS_FILE: _sha256(root / EMBEDDINGS_FILE),
            ENTITIES_FILE: _sha256(root / ENTITIES_FILE),
        },
    }
    _write_atomic(root / MANIFEST_FILE, (json.dumps(manifest, indent=2, sort_keys=True) + "\n").encode())
    return root


def load(path: str | os.PathLike) -> KnowledgeBase:
    """Load a store directory. Nothing is returned unless every check passes."""
    root = Path(path)
    try:
        manifest = json.loads((root / MANIFEST_FILE).read_text())
        raw = (root / EMBEDDINGS_FILE).read_bytes()
        entity_bytes = (root / ENTITIES_FILE).read_bytes()
    except FileNotFoundError as exc:
        raise StoreFormatError(f"missing store file: {exc.filename}") from exc
    except json.JSONDecodeError as exc:
        raise StoreFormatError(f"unreadable MANIFEST: {exc}") from exc

    if len(raw) < HEADER.size:
        if not MAGIC.startswith(raw[:4]):
            raise StoreFormatError("bad magic in embeddings.bin")
        raise StoreTruncatedError("embeddings.bin shorter than header")
    magic, version, face_dim, image_dim, count = HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise StoreFormatError(f"bad magic {magic!r} in embeddings.bin")
    if version > FORMAT_VERSION or manifest.get("format_version", 0) > FORMAT_VERSION:
        raise StoreVersionError(f"store format version {version} is newer than supported {FORMAT_VERSION}")
    if version < 1:
        raise StoreVersionError(f"invalid store format version {version}")

    files = manifest.get("files", {})
    if files.get(ENTITIES_FILE) != hashlib.sha256(entity_bytes).hexdigest():
        raise StoreChecksumError(f"checksum mismatch for {ENTITIES_FILE}")
    try:
        entries = [json.loads(line) for line in entity_bytes.decode("utf-8").splitlines() if line]
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise StoreChecksumError(f"entities.jsonl is corrupt: {exc}") from exc

    expected = HEADER.size
    n_vectors = 0
    for e in entries:
        for a in e["assets"]:
            expected = max(expected, a["image_offset"] + 4 * image_dim)
            n_vectors += 1 + len(a["face_offsets"])
            for off in a["face_offsets"]:
                expected = max(expected, off + 4 * face_dim)
    if len(raw) < expected or n_vectors != count:
        raise StoreTruncatedError(
            f"embeddings.bin holds {len(raw)} bytes / {count} vectors, need {expected} bytes / {n_vectors} vectors"
        )

    if files.get(EMBEDDINGS_FILE) != hashlib.sha256(raw).hexdigest():
        raise StoreChecksumError(f"checksum mismatch for {EMBEDDINGS_FILE}")

    def vec(off: int, dim: int) -> np.ndarray:
        return np.frombuffer(raw, dtype="<f4", count=dim, offset=off).astype(np.float32)

    kb = KnowledgeBase(
        face_dim,
        image_dim,
        image_cap=manifest.get("image_cap", 5),
        delta=manifest.get("delta", 0.95),
    )
    records = []
    for e in entries:
        images = [
            ImageAsset(
                asset_id=a["asset_id"],
                image_embedding=vec(a["image_offset"], image_dim),
                face_embeddings=[vec(o, face_dim) for o in a["face_offsets"]],
                source=a["source"],
                uri=a["uri"],
            )
            for a in e["assets"]
        ]
        records.append(
            EntityRecord(
                entity_id=e["entity_id"],
                canonical_name=e["name"],
                entity_type=e["type"],
                images=images,
                background_text=e["background_text"],
                subgraph=KnowledgeGraph.from_dict(e["subgraph"]),
            )
        )
    kb.upsert_many(records)
    return kb
