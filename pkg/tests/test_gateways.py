import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np
import pytest

from newscap.gateways import (
    BudgetExceededError,
    ChatRequest,
    Completion,
    HttpChat,
    ImageError,
    Message,
    MockChat,
    MockFaceDetector,
    MockImageEmbedder,
    ProviderError,
    RetryingChat,
    RetryPolicy,
    ScriptRule,
    TransportError,
    Usage,
    data_uri,
    identity_vector,
    read_image_bytes,
    synthetic_image,
)
from newscap.gateways.http_chat import request_body


def test_identity_vectors_deterministic_and_unit():
    a = identity_vector("alice", "face", 64)
    assert np.array_equal(a, identity_vector("alice", "face", 64))
    assert np.linalg.norm(a) == pytest.approx(1.0, abs=1e-6)
    assert not np.array_equal(a, identity_vector("alice", "image", 64))
    assert not np.array_equal(a, identity_vector("alice", "face", 64, salt="other"))


def test_no_collisions_over_10k_keys():
    seen = {identity_vector(f"id{i}", "face", 16).tobytes() for i in range(10_000)}
    assert len(seen) == 10_000


def test_face_detector_threshold():
    img = data_uri(synthetic_image([{"identity": "p", "confidence": 0.9}, {"identity": "q", "confidence": 0.5}]))
    faces = MockFaceDetector(8).detect_faces(img, 0.8)
    assert [f.confidence for f in faces] == [0.9]
    assert np.array_equal(faces[0].embedding, identity_vector("p", "face", 8))
    assert len(MockFaceDetector(8).detect_faces(img, 0.4)) == 2


def test_face_detector_non_fixture_image(tmp_path):
    p = tmp_path / "x.png"
    p.write_bytes(b"\x89PNG not really")
    assert MockFaceDetector(8).detect_faces(str(p)) == []
    v = MockImageEmbedder(8).embed_image(str(p))
    assert np.array_equal(v, MockImageEmbedder(8).embed_image("file://" + str(p)))


def test_embedder_scene_and_planted():
    img = data_uri(synthetic_image(scene="tower"))
    assert np.array_equal(MockImageEmbedder(16).embed_image(img), identity_vector("tower", "image", 16))
    with pytest.raises(ProviderError):
        MockImageEmbedder(16, planted={"bad": np.ones(5)}).embed_image("bad")


def test_unreadable_image():
    with pytest.raises(ImageError):
        read_image_bytes("/no/such/file.jpg")
    with pytest.raises(ImageError):
        read_image_bytes("data:image/png;base64,@@@")


def test_mock_chat_script_sequence():
    chat = MockChat([ScriptRule("hello", ["one", "two"])], fallback=None)
    req = ChatRequest([Message.user("hello there")])
    assert [chat.complete(req).text for _ in range(3)] == ["one", "two", "two"]
    with pytest.raises(ProviderError):
        chat.complete(ChatRequest([Message.user("other")]))


def test_mock_chat_truncates_to_max_output():
    chat = MockChat([ScriptRule("", [" ".join(["w"] * 80)])])
    c = chat.complete(ChatRequest([Message.user("x")], max_output_tokens=10))
    assert c.usage.output_tokens == 10


def test_mock_chat_from_file(tmp_path):
    p = tmp_path / "script.json"
    p.write_text(json.dumps({"rules": [{"schema": "summary", "responses": [{"error": "provider", "status": 503}]}]}))
    chat = MockChat.from_file(p)
    with pytest.raises(ProviderError) as err:
        chat.complete(ChatRequest([Message.user("x")], response_schema="summary"))
    assert err.value.retryable


class Flaky:
    def __init__(self, failures, exc=None):
        self.failures = failures
        self.exc = exc or TransportError("down")
        self.calls = 0

    def complete(self, request):
        self.calls += 1
        if self.calls <= self.failures:
            raise self.exc
        return Completion("fine", Usage(1, 1))


def test_retry_twice_then_success():
    sleeps = []
    inner = Flaky(2)
    chat = RetryingChat(inner, RetryPolicy(3, 0.25, sleep=sleeps.append))
    assert chat.complete(ChatRequest([Message.user("x")])).text == "fine"
    assert inner.calls == 3
    assert sleeps == [0.25, 0.5]


def test_retry_exhausted():
    inner = Flaky(10)
    chat = RetryingChat(inner, RetryPolicy(3, 0.0, sleep=lambda s: None))
    with pytest.raises(TransportError):
        chat.complete(ChatRequest([Message.user("x")]))
    assert inner.calls == 4


def test_non_retryable_not_retried():
    inner = Flaky(10, ProviderError("bad request", 400, retryable=False))
    with pytest.raises(ProviderError):
        RetryingChat(inner, RetryPolicy(3, 0.0, sleep=lambda s: None)).complete(ChatRequest([Message.user("x")]))
    assert inner.calls == 1


def test_output_budget_enforced():
    class Verbose:
        def complete(self, request):
            return Completion("x", Usage(1, 99))

    with pytest.raises(BudgetExceededError):
        RetryingChat(Verbose()).complete(ChatRequest([Message.user("x")], max_output_tokens=10))


def test_request_body_shape():
    req = ChatRequest([Message.user("describe")], response_schema="hypothesis")
    body = request_body(req, "m")
    assert body["model"] == "m"
    assert body["response_format"] == {"type": "json_object"}
    assert body["messages"][0]["content"][0] == {"type": "text", "text": "describe"}


class _Stub(BaseHTTPRequestHandler):
    statuses: list[int] = []
    bodies: list[dict] = []

    def do_POST(self):
        body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
        type(self).bodies.append({"path": self.path, "auth": self.headers.get("Authorization"), "body": body})
        status = type(self).statuses.pop(0) if type(self).statuses else 200
        payload = {"choices": [{"message": {"content": "stub caption"}}], "usage": {"prompt_tokens": 7, "completion_tokens": 2}}
        data = json.dumps(payload if status == 200 else {"error": "x"}).encode()
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def log_message(self, *args):
        pass


@pytest.fixture
def stub_server():
    _Stub.statuses = []
    _Stub.bodies = []
    server = ThreadingHTTPServer(("127.0.0.1", 0), _Stub)
    t = threading.Thread(target=server.serve_forever, daemon=True)
    t.start()
    yield f"http://127.0.0.1:{server.server_address[1]}/v1", _Stub
    server.shutdown()
    server.server_close()


def test_http_chat_against_stub(stub_server, monkeypatch):
    url, stub = stub_server
    monkeypatch.setenv("NEWSCAP_API_KEY", "secret")
    chat = HttpChat(url, "model-x")
    c = chat.complete(ChatRequest([Message.user("hi")]))
    assert c.text == "stub caption"
    assert (c.usage.prompt_tokens, c.usage.output_tokens) == (7, 2)
    assert stub.bodies[0]["path"] == "/v1/chat/completions"
    assert stub.bodies[0]["auth"] == "Bearer secret"


def test_http_chat_retries_5xx(stub_server):
    url, stub = stub_server
    stub.statuses = [503, 429]
    chat = RetryingChat(HttpChat(url, "m", api_key=""), RetryPolicy(3, 0.0, sleep=lambda s: None))
    assert chat.complete(ChatRequest([Message.user("hi")])).text == "stub caption"
    assert len(stub.bodies) == 3


def test_http_chat_4xx_not_retryable(stub_server):
    url, stub = stub_server
    stub.statuses = [400]
    with pytest.raises(ProviderError) as err:
        HttpChat(url, "m", api_key="").complete(ChatRequest([Message.user("hi")]))
    assert err.value.status == 400 and not err.value.retryable


def test_http_chat_connection_refused():
    with pytest.raises(TransportError):
        HttpChat("http://127.0.0.1:9", "m", api_key="", timeout=2).complete(ChatRequest([Message.user("hi")]))
