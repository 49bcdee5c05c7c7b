"""Canonical article records, streaming loader, and synthetic fixtures.

``canonical_jsonl``: one UTF-8 JSON object per line with fields
``article_id`` (str), ``image_ref`` (str or null), ``headline`` (str or null),
``body`` (str, non-empty), ``gold_caption`` (str or null) and ``split``
(``train`` | ``val`` | ``test``).
"""

from __future__ import annotations

import json
import logging
import random
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Iterable, Iterator, NamedTuple

import numpy as np

from newscap.emkb import EntityRecord, ImageAsset, KnowledgeBase
from newscap.gateways.mock import DEFAULT_SALT, data_uri, identity_vector, synthetic_image
from newscap.graph import KnowledgeGraph

logger = logging.getLogger(__name__)

SPLITS = ("train", "val", "test")
FORMATS = ("canonical_jsonl",)


class CorpusError(ValueError):
    pass


@dataclass(frozen=True)
class ArticleRecord:
    article_id: str
    body: str
    image_ref: str | None = None
    headline: str | None = None
    gold_caption: str | None = None
    split: str = "test"

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, ensure_ascii=False)


def parse_record(data: Any, require_gold: bool = False) -> ArticleRecord:
    if not isinstance(data, dict):
        raise CorpusError("record is not an object")
    aid = data.get("article_id")
    if not isinstance(aid, (str, int)) or str(aid) == "":
        raise CorpusError("missing article_id")
    body = data.get("body")
    if not isinstance(body, str) or not body.strip():
        raise CorpusError("missing or empty body")
    split = data.get("split", "test")
    if split not in SPLITS:
        raise CorpusError(f"unknown split {split!r}")
    for opt in ("image_ref", "headline", "gold_caption"):
        if data.get(opt) is not None and not isinstance(data[opt], str):
            raise CorpusError(f"{opt} must be a string")
    gold = data.get("gold_caption")
    if require_gold and split in ("val", "test") and not gold:
        raise CorpusError("gold_caption required for val/test records")
    return ArticleRecord(str(aid), body, data.get("image_ref"), data.get("headline"), gold, split)


@dataclass
class LoadReport:
    lines: int = 0
    loaded: int = 0
    invalid: list[tuple[int, str]] = field(default_factory=list)
    # line number -> article_id, for invalid lines whose id was readable
    invalid_ids: dict[int, str] = field(default_factory=dict)


def load_corpus(
    path: str | Path,
    format: str = "canonical_jsonl",
    strict: bool = True,
    max_error_rate: float = 0.1,
    require_gold: bool = False,
    check_unique: bool = True,
    report: LoadReport | None = None,
) -> Iterator[ArticleRecord]:
    """Stream records from a corpus file.

    Strict mode raises on the first invalid line. Lenient mode logs and skips
    invalid lines (line numbers in ``report.invalid``) and aborts once more
    than ``max_error_rate`` of the lines read so far are invalid (checked from
    line 20 on, and at end of file). ``check_unique`` keeps a set of seen ids.
    """
    if format not in FORMATS:
        raise CorpusError(f"unsupported corpus format {format!r}")
    report = report if report is not None else LoadReport()
    seen: set[str] = set()

    def too_many() -> bool:
        return len(report.invalid) > max_error_rate * report.lines

    try:
        fh = open(path, encoding="utf-8")
    except OSError as exc:
        raise CorpusError(f"cannot open corpus {path}: {exc}") from exc
    with fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            report.lines += 1
            data: Any = None
            try:
                data = json.loads(line)
                rec = parse_record(data, require_gold)
                if check_unique:
                    if rec.article_id in seen:
                        raise CorpusError(f"duplicate article_id {rec.article_id!r}")
                    seen.add(rec.article_id)
            except (json.JSONDecodeError, CorpusError) as exc:
                msg = exc.msg if isinstance(exc, json.JSONDecodeError) else str(exc)
                if strict:
                    raise CorpusError(f"{path}:{lineno}: {msg}") from exc
                logger.warning("%s:%d: skipping invalid record: %s", path, lineno, msg)
                report.invalid.append((lineno, msg))
                if isinstance(data, dict) and isinstance(data.get("article_id"), (str, int)):
                    report.invalid_ids[lineno] = str(data["article_id"])
                if report.lines >= 20 and too_many():
                    raise CorpusError(f"{path}: too many invalid records ({len(report.invalid)}/{report.lines})")
                continue
            report.loaded += 1
            yield rec
    if report.lines and too_many():
        raise CorpusError(f"{path}: too many invalid records ({len(report.invalid)}/{report.lines})")


def write_corpus(records: Iterable[ArticleRecord], path: str | Path) -> int:
    n = 0
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            fh.write(rec.to_json() + "\n")
            n += 1
    return n


# -- synthetic fixtures ----------------------------------------------------

_FIRST = ["Maria", "James", "Aiko", "Omar", "Lena", "Pedro", "Grace", "Tomas", "Nadia", "Victor",
          "Elena", "Samuel", "Ingrid", "Rafael", "Chloe", "Dmitri", "Amara", "Felix", "Yuki", "Hector"]
_LAST = ["Alvarez", "Brennan", "Castillo", "Dubois", "Eriksen", "Fontaine", "Gallagher", "Haddad",
         "Ivanova", "Jansen", "Kowalski", "Lindqvist", "Moreau", "Nakamura", "Okafor", "Petrov",
         "Quintero", "Rasmussen", "Sandoval", "Takahashi"]
_GPE = ["Lisbon", "Nairobi", "Ottawa", "Santiago", "Helsinki", "Manila", "Kraków", "Montevideo",
        "Reykjavik", "Tbilisi", "Accra", "Hanoi"]
_ORG = ["Northwind Bank", "Aurora Institute", "Harbor Council", "Meridian Labs", "Summit Party",
        "Cobalt Mining Group", "Blue River Union", "Atlas Foundation", "Vertex Motors", "Orion League"]
_LANDMARK = ["Granite Bridge", "Old Harbor Lighthouse", "Crescent Tower", "Silver Lake Dam",
             "Juniper Stadium", "Kestrel Museum", "Ember Cathedral", "Willow Park"]

_BODY = [
    "{person} arrived in {gpe} on Tuesday for talks with the {org}.",
    "Officials said the meeting at {landmark} lasted more than three hours.",
    "{person} told reporters that the agreement would be signed next month.",
    "The {org} has faced criticism over its plans for {gpe}.",
    "Crowds gathered outside {landmark} as the delegation left.",
    "Analysts expect the talks to shape policy across the region.",
    "A spokesman for the {org} declined to comment on the details.",
]
_CAPTION = [
    "{person} speaks with members of the {org} in {gpe}.",
    "{person} arrives at {landmark} in {gpe} on Tuesday.",
    "Crowds outside {landmark} in {gpe} as {person} meets the {org}.",
]
_SCENE_CAPTION = "Crowds gather outside {landmark} in {gpe} ahead of talks with the {org}."


class FixtureSet(NamedTuple):
    corpus: list[ArticleRecord]
    kb: KnowledgeBase
    gazetteer: dict[str, str]
    expected_matches: dict[str, list[str]]


def _separated(vec: np.ndarray, others: list[np.ndarray], limit: float) -> bool:
    return all(float(np.dot(vec, o)) < limit for o in others)


def make_fixtures(
    seed: int,
    n: int,
    face_dim: int = 512,
    image_dim: int = 512,
    salt: str = DEFAULT_SALT,
    margin_floor: float = 0.15,
) -> FixtureSet:
    """Deterministic synthetic corpus and knowledge base.

    Articles alternate between face photos and scene photos. Two in three
    pictured people (and landmarks) are stored in the base; the rest are not,
    and their embeddings are re-drawn until every cosine against stored vectors
    stays below ``margin_floor``. ``expected_matches`` lists, per article, the
    entity ids the mock gateways should match.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = random.Random(seed)
    people = [f"{f} {l}" for f in _FIRST for l in _LAST]
    rng.shuffle(people)
    n_people = max(2, (n + 1) // 2 + 1)
    people = people[:n_people]
    landmarks = _LANDMARK[:]
    rng.shuffle(landmarks)

    def slug(name: str) -> str:
        return "".join(c if c.isalnum() else "-" for c in name.casefold())

    gazetteer = {p: "PERSON" for p in people}
    gazetteer.update({g: "GPE" for g in _GPE})
    gazetteer.update({o: "ORG" for o in _ORG})
    gazetteer.update({lm: "OTHER" for lm in landmarks})

    known_people = {p for i, p in enumerate(people) if i % 3 != 2}
    known_landmarks = {lm for i, lm in enumerate(landmarks) if i % 3 != 2}

    face_keys = {p: f"person:{seed}:{slug(p)}" for p in people}
    scene_keys = {lm: f"scene:{seed}:{slug(lm)}" for lm in landmarks}

    # stored vectors first, then re-draw keys for absent identities until separated
    kb_faces = [identity_vector(face_keys[p], "face", face_dim, salt) for p in sorted(known_people)]
    kb_images = [identity_vector(scene_keys[lm], "image", image_dim, salt) for lm in sorted(known_landmarks)]
    extra_images: dict[str, list[str]] = {}
    for p in sorted(known_people):
        extra_images[p] = [f"{face_keys[p]}/photo{j}" for j in range(1 + rng.randrange(3))]
        kb_images += [
            identity_vector(k, "image", image_dim, salt) for k in [f"{face_keys[p]}/portrait", *extra_images[p]]
        ]
    for p in sorted(set(people) - known_people):
        attempt = 0
        while not _separated(identity_vector(face_keys[p], "face", face_dim, salt), kb_faces, margin_floor):
            attempt += 1
            face_keys[p] = f"person:{seed}:{slug(p)}#{attempt}"
    for lm in sorted(set(landmarks) - known_landmarks):
        attempt = 0
        while not _separated(identity_vector(scene_keys[lm], "image", image_dim, salt), kb_images, margin_floor):
            attempt += 1
            scene_keys[lm] = f"scene:{seed}:{slug(lm)}#{attempt}"

    records: list[EntityRecord] = []
    for p in sorted(known_people):
        gpe, org = rng.choice(_GPE), rng.choice(_ORG)
        images = [
            ImageAsset(
                asset_id=f"{slug(p)}-face",
                image_embedding=identity_vector(f"{face_keys[p]}/portrait", "image", image_dim, salt),
                face_embeddings=[identity_vector(face_keys[p], "face", face_dim, salt)],
                source="wikipedia",
                uri=f"fixture://{slug(p)}/portrait",
            )
        ]
        images += [
            ImageAsset(
                asset_id=f"{slug(p)}-photo{j}",
                image_embedding=identity_vector(k, "image", image_dim, salt),
                source="web_search",
                uri=f"fixture://{slug(p)}/photo{j}",
            )
            for j, k in enumerate(extra_images[p])
        ]
        has_graph = rng.random() < 0.7
        subgraph = KnowledgeGraph([p, gpe, org], [(p, org, "member of"), (p, gpe, "lives in")]) if has_graph else KnowledgeGraph()
        records.append(
            EntityRecord(
                entity_id=f"ent-{slug(p)}",
                canonical_name=p,
                entity_type="PERSON",
                images=images,
                background_text=f"{p} is a member of the {org} based in {gpe}." if has_graph else "",
                subgraph=subgraph,
            )
        )
    for lm in sorted(known_landmarks):
        gpe = rng.choice(_GPE)
        records.append(
            EntityRecord(
                entity_id=f"ent-{slug(lm)}",
                canonical_name=lm,
                entity_type="OTHER",
                images=[
                    ImageAsset(
                        asset_id=f"{slug(lm)}-view",
                        image_embedding=identity_vector(scene_keys[lm], "image", image_dim, salt),
                        source="wikipedia",
                        uri=f"fixture://{slug(lm)}/view",
                    )
                ],
                background_text=f"{lm} is a landmark in {gpe}.",
                subgraph=KnowledgeGraph([lm, gpe], [(lm, gpe, "located in")]),
            )
        )
    kb = KnowledgeBase(face_dim, image_dim)
    kb.upsert_many(records)

    corpus: list[ArticleRecord] = []
    expected: dict[str, list[str]] = {}
    for i in range(n):
        aid = f"fx{seed}-{i:05d}"
        person = people[i % len(people)]
        landmark = landmarks[i % len(landmarks)]
        gpe, org = rng.choice(_GPE), rng.choice(_ORG)
        slots = {"person": person, "gpe": gpe, "org": org, "landmark": landmark}
        k = 4 + rng.randrange(3)
        body = " ".join(t.format(**slots) for t in [_BODY[0]] + rng.sample(_BODY[1:], k - 1))
        if i % 4 == 3:
            image = synthetic_image(scene=scene_keys[landmark], note=aid)
            caption = _SCENE_CAPTION.format(**slots)
            expected[aid] = [f"ent-{slug(landmark)}"] if landmark in known_landmarks else []
        else:
            faces = [{"identity": face_keys[person], "confidence": round(0.85 + 0.1 * rng.random(), 3)}]
            if rng.random() < 0.5:
                bystander = people[(i + 1) % len(people)]
                faces.append({"identity": face_keys[bystander], "confidence": 0.5, "bbox": (120.0, 30.0, 40.0, 40.0)})
            image = synthetic_image(faces=faces, note=aid)
            caption = rng.choice(_CAPTION).format(**slots)
            expected[aid] = [f"ent-{slug(person)}"] if person in known_people else []
        corpus.append(
            ArticleRecord(
                article_id=aid,
                body=body,
                image_ref=data_uri(image),
                headline=f"{person} visits {gpe}",
                gold_caption=caption,
                split="test",
            )
        )
    return FixtureSet(corpus, kb, gazetteer, expected)
