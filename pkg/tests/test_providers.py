from __future__ import annotations

import json
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles
from gatedkg.errors import ProviderError
from gatedkg.providers import HashEmbedder, ProviderConfig, RemoteClient, cosine, hash_embed


class MockState:
    def __init__(self, statuses=(), delay=0.0, dim=4):
        self.statuses = list(statuses)
        self.delay = delay
        self.dim = dim
        self.lock = threading.Lock()
        self.in_flight = 0
        self.peak = 0
        self.requests: list[dict] = []


def _handler(state: MockState):
    class Handler(BaseHTTPRequestHandler):
        def log_message(self, *args):
            pass

        def do_POST(self):
            body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
            with state.lock:
                state.in_flight += 1
                state.peak = max(state.peak, state.in_flight)
                state.requests.append({"path": self.path, "body": body,
                                       "auth": self.headers.get("Authorization")})
                status = state.statuses.pop(0) if state.statuses else 200
            try:
                time.sleep(state.delay)
                if status != 200:
                    payload = {"error": "nope"}
                elif self.path.endswith("/chat/completions"):
                    payload = {"choices": [{"message": {"role": "assistant", "content": "pong"}}]}
                else:
                    data = [{"index": i, "embedding": [float(len(t)), 1.0] + [0.0] * (state.dim - 2)}
                            for i, t in enumerate(body["input"])]
                    payload = {"data": list(reversed(data))}
                raw = json.dumps(payload).encode()
                self.send_response(status)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(raw)))
                self.end_headers()
                self.wfile.write(raw)
            finally:
                with state.lock:
                    state.in_flight -= 1
    return Handler


@contextmanager
def mock_server(state: MockState):
    server = ThreadingHTTPServer(("127.0.0.1", 0), _handler(state))
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    try:
        yield f"http://127.0.0.1:{server.server_address[1]}/v1"
    finally:
        server.shutdown()
        server.server_close()


def client_for(url, **kw) -> RemoteClient:
    cfg = dict(endpoint_url=url, model_name="m", backoff_base=0.0, timeout=5.0, api_key_env_var="GATEDKG_TEST_KEY")
    cfg.update(kw)
    return RemoteClient(ProviderConfig(**cfg))


# -- remote client ---------------------------------------------------------------------

def test_chat_extracts_content_and_sends_wire_shape(monkeypatch):
    monkeypatch.setenv("GATEDKG_TEST_KEY", "sekret")
    state = MockState()
    with mock_server(state) as url, client_for(url) as client:
        assert client.chat([("user", "ping")]) == "pong"
    req = state.requests[0]
    assert req["path"] == "/v1/chat/completions"
    assert req["body"] == {"model": "m", "messages": [{"role": "user", "content": "ping"}], "temperature": 0.0}
    assert req["auth"] == "Bearer sekret"


def test_chat_retries_429_then_succeeds():
    state = MockState(statuses=[429, 429])
    with mock_server(state) as url, client_for(url) as client:
        assert client.chat([("user", "x")]) == "pong"
        assert client.retries == 2


def test_chat_always_500_is_exhausted():
    state = MockState(statuses=[500] * 10)
    with mock_server(state) as url, client_for(url, max_retries=3) as client:
        with pytest.raises(ProviderError) as err:
            client.chat([("user", "x")])
    assert err.value.kind == "exhausted"
    assert len(state.requests) == 4


def test_client_error_is_not_retried():
    state = MockState(statuses=[401])
    with mock_server(state) as url, client_for(url) as client:
        with pytest.raises(ProviderError) as err:
            client.chat([("user", "x")])
    assert err.value.kind == "status" and err.value.status == 401
    assert len(state.requests) == 1


def test_transport_failure_raises_provider_error():
    with client_for("http://127.0.0.1:9/v1", max_retries=0) as client:
        with pytest.raises(ProviderError) as err:
            client.chat([("user", "x")])
    assert err.value.kind == "exhausted"


def test_embed_batch_orders_by_index():
    state = MockState()
    with mock_server(state) as url, client_for(url) as client:
        out = client.embed_batch(["a", "bbb", "cc"])
        assert client.embed_batch([]).shape[0] == 0
    assert out.shape == (3, 4)
    assert out[:, 0].tolist() == [1.0, 3.0, 2.0]
    assert state.requests[0]["body"] == {"model": "m", "input": ["a", "bbb", "cc"]}


def test_concurrency_limit_is_respected():
    state = MockState(delay=0.05)
    with mock_server(state) as url, client_for(url, max_concurrency=2) as client:
        with ThreadPoolExecutor(max_workers=8) as pool:
            results = list(pool.map(lambda _: client.chat([("user", "x")]), range(12)))
    assert results == ["pong"] * 12
    assert state.peak <= 2


def test_provider_config_validation():
    with pytest.raises(ValueError):
        ProviderConfig("http://x", "m", max_retries=-1)
    with pytest.raises(ValueError):
        ProviderConfig("http://x", "m", max_concurrency=0)
    cfg = ProviderConfig("http://x", "m")
    assert (cfg.timeout, cfg.max_retries, cfg.backoff_base, cfg.max_concurrency, cfg.temperature) == \
        (60.0, 3, 1.0, 4, 0.0)


# -- hash embedder ---------------------------------------------------------------------

def test_fnv_matches_published_test_vectors():
    # FNV-1a 64-bit reference values
    assert oracles.fnv1a64(b"") == 0xcbf29ce484222325
    assert oracles.fnv1a64(b"a") == 0xaf63dc4c8601ec8c
    assert oracles.fnv1a64(b"foobar") == 0x85944171f73967e8


def test_hash_embed_matches_reimplementation():
    for text in ["hypertension -[treated_by]-> amlodipine", "vitamin k", "Lyme  Disease", "ünïcödé words"]:
        assert np.allclose(hash_embed(text), oracles.embed(text), atol=1e-12)


def test_self_similarity_and_ordering():
    assert cosine(hash_embed("bilateral renal artery stenosis"), hash_embed("bilateral renal artery stenosis")) == \
        pytest.approx(1.0)
    a = oracles.cos(oracles.embed("hypertension treated_by amlodipine"), oracles.embed("hypertension"))
    b = oracles.cos(oracles.embed("vitamin k"), oracles.embed("hypertension"))
    assert a > b
    assert cosine(hash_embed("hypertension treated_by amlodipine"), hash_embed("hypertension")) == pytest.approx(a)


def test_disjoint_texts_match_oracle_value():
    got = cosine(hash_embed("aspirin"), hash_embed("warfarin"))
    assert got == pytest.approx(oracles.cos(oracles.embed("aspirin"), oracles.embed("warfarin")), abs=1e-12)


def test_empty_text_is_zero_vector():
    v = hash_embed("")
    assert not v.any()
    assert cosine(v, hash_embed("x")) == 0.0


def test_embed_batch_shapes():
    e = HashEmbedder()
    assert e.embed_batch([]).shape == (0, 256)
    out = e.embed_batch(["a", "b", "a"])
    assert out.shape == (3, 256)
    assert np.array_equal(out[0], out[2])


@given(st.lists(st.text(max_size=20), max_size=6))
def test_batch_single_consistency(texts):
    e = HashEmbedder()
    batch = e.embed_batch(texts)
    for i, t in enumerate(texts):
        assert np.array_equal(batch[i], e.embed_batch([t])[0])


@given(st.text(min_size=1).filter(lambda s: s.split()))
def test_nonempty_text_has_unit_norm(text):
    assert np.linalg.norm(hash_embed(text)) == pytest.approx(1.0) or not hash_embed(text).any()
