"""Cosine similarity and the near-duplicate image filter."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from newscap.emkb.records import ImageAsset

logger = logging.getLogger(__name__)

DEFAULT_DELTA = 0.95


class ZeroNormError(ValueError):
    """Cosine similarity is undefined for a zero vector."""


def cosine(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        raise ZeroNormError("cosine similarity undefined for zero-norm vector")
    return float(min(1.0, max(-1.0, float(np.dot(a, b)) / (na * nb))))


def unit_rows(matrix: np.ndarray) -> np.ndarray:
    """Row-normalize in float64; raises ZeroNormError on any zero row."""
    m = np.asarray(matrix, dtype=np.float64)
    if m.ndim == 1:
        m = m[None, :]
    norms = np.linalg.norm(m, axis=1)
    if np.any(norms == 0.0):
        raise ZeroNormError("zero-norm vector")
    return m / norms[:, None]


@dataclass
class DedupReport:
    kept: list[str] = field(default_factory=list)
    removed: list[str] = field(default_factory=list)
    rejected: list[str] = field(default_factory=list)


def dedup_images(
    candidates: Sequence[ImageAsset],
    holdout: Sequence[np.ndarray] = (),
    delta: float = DEFAULT_DELTA,
    report: DedupReport | None = None,
) -> list[ImageAsset]:
    """Keep candidates whose cosine to every holdout vector and every earlier kept candidate is <= delta.

    Candidates are scanned in input order. Zero-norm candidates are rejected and
    listed in ``report.rejected`` (and logged), never silently dropped.
    """
    if not 0.0 < delta <= 1.0:
        raise ValueError(f"delta must be in (0, 1], got {delta}")
    report = report if report is not None else DedupReport()
    dim = None
    if candidates:
        dim = candidates[0].image_embedding.shape[0]
    if len(holdout):
        held = unit_rows(np.vstack([np.asarray(h, dtype=np.float64) for h in holdout]))
        if dim is not None and held.shape[1] != dim:
            raise ValueError(f"holdout dim {held.shape[1]} != candidate dim {dim}")
    else:
        held = np.empty((0, dim or 0))

    kept_vecs = np.empty((len(candidates), dim or 0))
    n_kept = 0
    out: list[ImageAsset] = []
    for asset in candidates:
        v = np.asarray(asset.image_embedding, dtype=np.float64)
        if v.shape[0] != dim:
            raise ValueError(f"asset {asset.asset_id}: dim {v.shape[0]} != {dim}")
        norm = np.linalg.norm(v)
        if norm == 0.0:
            logger.warning("rejecting asset %s: zero-norm image embedding", asset.asset_id)
            report.rejected.append(asset.asset_id)
            continue
        u = v / norm
        if held.shape[0] and np.max(np.clip(held @ u, -1.0, 1.0)) > delta:
            report.removed.append(asset.asset_id)
            continue
        if n_kept and np.max(np.clip(kept_vecs[:n_kept] @ u, -1.0, 1.0)) > delta:
            report.removed.append(asset.asset_id)
            continue
        kept_vecs[n_kept] = u
        n_kept += 1
        out.append(asset)
        report.kept.append(asset.asset_id)
    return out
