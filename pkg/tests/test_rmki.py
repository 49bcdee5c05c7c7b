import random

import numpy as np
import pytest

from conftest import asset
from newscap.emkb import EntityRecord, KnowledgeBase
from newscap.errors import StageError
from newscap.gateways import (
    FaceDetection,
    Gateways,
    MockChat,
    MockFaceDetector,
    MockImageEmbedder,
    ProviderError,
    ScriptRule,
    data_uri,
    identity_vector,
    synthetic_image,
)
from newscap.graph import KnowledgeGraph, Triple
from newscap.ner import GazetteerNER, Mention
from newscap.rmki import (
    MatchConfig,
    build_background_kg,
    construct_base_graph,
    extract_relations,
    filter_relations,
    integrate_graph,
    match_entities,
    parse_relation_list,
)
from oracles import brute_top1, py_cosine


class FixedFaces:
    def __init__(self, embeddings):
        self.embeddings = embeddings

    def detect_faces(self, image_ref, min_confidence=0.8):
        return [FaceDetection((0, 0, 1, 1), 0.99, np.asarray(e, dtype=np.float32)) for e in self.embeddings]


class FixedEmbedder:
    def __init__(self, vec):
        self.vec = np.asarray(vec, dtype=np.float32)

    def embed_image(self, image_ref):
        return self.vec


def gw(faces=(), image=(1, 0, 0), chat=None):
    return Gateways(chat or MockChat(), FixedEmbedder(image), FixedFaces(list(faces)))


@pytest.fixture
def abc_kb():
    kb = KnowledgeBase(3, 3)
    kb.upsert_many(
        [
            EntityRecord("A", "Ann", "PERSON", [asset("a", [0, 0, 1], [[1, 0, 0]])]),
            EntityRecord("B", "Ben", "PERSON", [asset("b", [0, 1, 0], [[0, 1, 0]])]),
            EntityRecord("C", "Cape Town", "GPE", [asset("c", [1, 0, 0])]),
        ]
    )
    return kb


# -- matching -------------------------------------------------------------------

def test_match_identical_face(abc_kb):
    (m,) = match_entities("img", abc_kb, gw([[1, 0, 0]]))
    assert (m.entity_id, m.similarity, m.path) == ("A", 1.0, "face")


def test_match_two_faces(abc_kb):
    ms = match_entities("img", abc_kb, gw([[0.9, 0.1, 0], [0.1, 0.9, 0.1]]))
    assert sorted(m.entity_id for m in ms) == ["A", "B"]


def test_match_same_entity_twice_keeps_max(abc_kb):
    ms = match_entities("img", abc_kb, gw([[0.9, 0.3, 0], [1, 0, 0]]))
    assert [(m.entity_id, m.similarity) for m in ms] == [("A", 1.0)]


def test_match_clip_path(abc_kb):
    (m,) = match_entities("img", abc_kb, gw([], image=[0.9, 0.05, 0.1]))
    assert (m.entity_id, m.path) == ("C", "clip")


def test_face_below_floor_dropped(abc_kb):
    assert match_entities("img", abc_kb, gw([[-1, -1, 0.1]])) == []


def test_faces_present_never_fall_back(abc_kb):
    assert match_entities("img", abc_kb, gw([[0, 0, 1]], image=[1, 0, 0])) == []


def test_empty_kb():
    assert match_entities("img", KnowledgeBase(3, 3), gw([[1, 0, 0]])) == []


def test_match_gateway_failure_labeled(abc_kb):
    class Broken:
        def detect_faces(self, image_ref, min_confidence=0.8):
            raise ProviderError("vision down", 503, True)

    with pytest.raises(StageError) as err:
        match_entities("img", abc_kb, Gateways(MockChat(), FixedEmbedder([1, 0, 0]), Broken()))
    assert err.value.stage == "rmki/match"


def test_match_with_mock_providers():
    kb = KnowledgeBase(16, 16)
    kb.upsert_entity(EntityRecord("P", "Pat", images=[asset("p", identity_vector("x", "image", 16), [identity_vector("pat", "face", 16)])]))
    img = data_uri(synthetic_image([{"identity": "pat", "confidence": 0.95}, {"identity": "nobody", "confidence": 0.5}]))
    g = Gateways(MockChat(), MockImageEmbedder(16), MockFaceDetector(16))
    (m,) = match_entities(img, kb, g)
    assert m.entity_id == "P" and m.similarity == pytest.approx(1.0, abs=1e-6)


def test_face_path_equals_argmax_on_1000_instances():
    rng = np.random.default_rng(5)
    for trial in range(1000):
        n = int(rng.integers(1, 8))
        dim = int(rng.integers(2, 12))
        vecs = rng.standard_normal((n, dim))
        kb = KnowledgeBase(dim, dim)
        kb.upsert_many(EntityRecord(f"e{i}", f"E{i}", images=[asset(f"a{i}", vecs[i], [vecs[i]])]) for i in range(n))
        q = rng.standard_normal(dim)
        (eid, _), sim = brute_top1([(f"e{i}", f"a{i}", [vecs[i]]) for i in range(n)], q)
        cfg = MatchConfig(tau_face=-1.0)
        (m,) = match_entities("img", kb, gw([q]), cfg)
        assert m.entity_id == eid
        assert m.similarity == pytest.approx(sim, abs=1e-5)


# -- relations ------------------------------------------------------------------

def test_parse_tuple_list_and_json():
    assert parse_relation_list('[("Tigers","Royals","defeated")]') == [("Tigers", "Royals", "defeated")]
    assert parse_relation_list('Here: [["A", "B", "r"]]') == [("A", "B", "r")]
    assert not parse_relation_list("none")
    assert not parse_relation_list('[("A", "B")]')


def test_extract_tigers_royals():
    chat = MockChat([ScriptRule("", ['[("Tigers","Royals","defeated")]'], "relations")])
    assert extract_relations(["Tigers", "Royals"], ["The Tigers defeated the Royals."], chat) == [Triple("Tigers", "Royals", "defeated")]


def test_extract_reverse_pair_first_wins():
    chat = MockChat([ScriptRule("", ['[("A","B","r1"), ("B","A","r2")]'], "relations")])
    assert extract_relations(["A", "B"], ["s"], chat) == [Triple("A", "B", "r1")]


def test_extract_relation_truncated():
    chat = MockChat([ScriptRule("", ['[("Leyland","Tigers","was the manager of")]'], "relations")])
    (t,) = extract_relations(["Leyland", "Tigers"], ["s"], chat)
    assert t.relation == "was the manager"


def test_filter_unknown_and_self_pairs():
    out = filter_relations(["A", "B"], [("A", "Z", "r"), ("a", "A", "r"), ("b", "a", "likes"), ("A", "B", " ")])
    assert out == [Triple("B", "A", "likes")]


def test_extract_malformed_exhausted():
    chat = MockChat([ScriptRule("", ["no idea"], "relations")])
    with pytest.raises(StageError) as err:
        extract_relations(["A", "B"], ["s"], chat, retry_limit=1)
    assert err.value.stage == "rmki/relations"
    assert err.value.provenance["raw_outputs"] == ["no idea", "no idea"]


# -- graphs ---------------------------------------------------------------------

def test_base_graph():
    g = construct_base_graph(["A", "B", "C"], [Triple("A", "B", "r"), Triple("A", "B", "r")])
    assert len(g.nodes) == 3 and len(g.edges) == 1 and g.isolated_nodes() == ["C"]
    assert construct_base_graph(["A"], []).edges == []
    with pytest.raises(ValueError):
        construct_base_graph(["A"], [Triple("A", "Q", "r")])


def test_integrate_examples():
    g = integrate_graph(KnowledgeGraph([], [("A", "B", "r")]), [KnowledgeGraph([], [("B", "C", "s")])])
    assert g.node_keys() == {"a", "b", "c"} and len(g.edges) == 2
    assert [tuple(e) for e in g.edges] == [("A", "B", "r"), ("B", "C", "s")]
    g = integrate_graph(KnowledgeGraph([], [("A", "B", "defeated")]), [KnowledgeGraph([], [("a", "b", "defeated")])])
    assert len(g.edges) == 1


def _random_graph(rng):
    names = ["Ann", "Ben", "Cal", "Dee", "Eve", "Fay"]
    rels = ["knows", "beat", "works with"]
    g = KnowledgeGraph()
    for _ in range(rng.randint(0, 6)):
        s, t = rng.sample(names, 2)
        g.add_edge(rng.choice([s, s.upper()]), t, rng.choice(rels))
    for _ in range(rng.randint(0, 2)):
        g.add_node(rng.choice(names))
    return g


def test_integrate_equals_set_union_on_random_graphs():
    rng = random.Random(9)
    graphs = [_random_graph(rng) for _ in range(10)]
    out = integrate_graph(graphs[0], graphs[1:])
    nodes = set().union(*({n.casefold() for n in g.nodes} for g in graphs))
    triples = set().union(*({(s.casefold(), t.casefold(), r) for s, t, r in g.edges} for g in graphs))
    assert out.node_keys() == nodes
    assert out.triple_keys() == triples
    shuffled = graphs[1:]
    rng.shuffle(shuffled)
    assert integrate_graph(graphs[0], shuffled) == out


# -- background graph ---------------------------------------------------------

def _kb_with_subgraph():
    kb = KnowledgeBase(2, 2)
    kb.upsert_entity(EntityRecord("A", "Ann", subgraph=KnowledgeGraph([], [("Ann", "Oslo", "born in")])))
    kb.upsert_entity(EntityRecord("B", "Ben"))
    return kb


def test_background_kg_composes_steps():
    ner = GazetteerNER({"Ann": "PERSON", "Ben": "PERSON"})
    chat = MockChat([ScriptRule("", ['[("Ann","Ben","married")]'], "relations")])
    g = build_background_kg(["Ann met Ben in town."], _kb_with_subgraph(), chat, ner)
    expected = KnowledgeGraph([], [("Ann", "Ben", "married"), ("Ann", "Oslo", "born in")])
    assert g == expected
    assert g.serialize() == "Ann\tborn in\tOslo\nAnn\tmarried\tBen\n"


def test_background_kg_no_entities_no_call():
    chat = MockChat()
    g = build_background_kg(["nothing to see here."], _kb_with_subgraph(), chat, GazetteerNER({"Ann": "PERSON"}))
    assert g.is_empty() and chat.calls == []


def test_background_kg_empty_kb():
    chat = MockChat([ScriptRule("", ['[("Ann","Ben","married")]'], "relations")])
    g = build_background_kg(["Ann and Ben."], KnowledgeBase(2, 2), chat, GazetteerNER({"Ann": "PERSON", "Ben": "PERSON"}))
    assert g == KnowledgeGraph([], [("Ann", "Ben", "married")])


def test_background_kg_ner_failure():
    def broken(text):
        raise RuntimeError("model missing")

    with pytest.raises(StageError) as err:
        build_background_kg(["x"], KnowledgeBase(2, 2), MockChat(), broken)
    assert err.value.stage == "rmki/ner"


def test_background_kg_deterministic():
    ner = GazetteerNER({"Ann": "PERSON", "Ben": "PERSON"})
    outs = {build_background_kg(["Ann met Ben."], _kb_with_subgraph(), MockChat(), ner).serialize() for _ in range(3)}
    assert len(outs) == 1


# -- ner ------------------------------------------------------------------------

def test_gazetteer_longest_match():
    ner = GazetteerNER({"New York": "GPE", "New York Times": "ORG"})
    assert ner("He read The New York Times in New York.") == [Mention("New York Times", "ORG", 12), Mention("New York", "GPE", 30)]


def test_heuristic_tagger():
    ner = GazetteerNER({}, heuristic=True)
    names = [m.surface for m in ner("Reporters saw Jane Doe visit Berlin. The Mayor of Paris spoke.")]
    assert names == ["Jane Doe", "Berlin", "Mayor", "Paris"]


def test_gazetteer_bad_type():
    with pytest.raises(ValueError):
        GazetteerNER({"X": "ANIMAL"})
