import numpy as np
import pytest

from newscap.emkb import EntityRecord, ImageAsset, KnowledgeBase
from newscap.gateways import Gateways, MockChat, MockFaceDetector, MockImageEmbedder
from newscap.graph import KnowledgeGraph
from newscap.ingest import make_fixtures

ACCEPTANCE_RESULTS: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_RESULTS:
            terminalreporter.write_line(line)


def asset(asset_id, image, faces=()):
    return ImageAsset(asset_id=asset_id, image_embedding=np.asarray(image, dtype=np.float32), face_embeddings=[np.asarray(f, dtype=np.float32) for f in faces])


@pytest.fixture
def tiny_kb():
    kb = KnowledgeBase(face_dim=2, image_dim=2)
    kb.upsert_entity(
        EntityRecord(
            "A",
            "Alice Ng",
            "PERSON",
            [asset("a1", [1, 0], [[1, 0]])],
            "Alice Ng leads the Harbor Council.",
            KnowledgeGraph(["Alice Ng", "Harbor Council"], [("Alice Ng", "Harbor Council", "leads")]),
        )
    )
    kb.upsert_entity(EntityRecord("B", "Bob Ray", "PERSON", [asset("b1", [0, 1], [[0, 1]])]))
    return kb


@pytest.fixture(scope="session")
def fixture_set():
    return make_fixtures(42, 12)


@pytest.fixture
def mock_gateways(fixture_set):
    kb = fixture_set.kb
    return Gateways(MockChat(), MockImageEmbedder(kb.image_dim), MockFaceDetector(kb.face_dim))
