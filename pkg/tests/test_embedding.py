import json
import random
import string
import threading
from http.server import BaseHTTPRequestHandler, HTTPServer

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from kgfilter.embedding import (
    ENDPOINT_ENV,
    HashEmbeddingProvider,
    MemoizedProvider,
    PrecomputedEmbeddingProvider,
    RemoteEmbeddingProvider,
    cosine,
    cosine_many,
    make_provider,
)
from kgfilter.errors import EmbeddingError, SimilarityError, TransportError, UnknownKeyError

from .oracles import py_cosine


# -- cosine ------------------------------------------------------------------------


@pytest.mark.parametrize(
    "a, b, expected", [([1, 0], [1, 0], 1.0), ([1, 0], [0, 1], 0.0), ([1, 2], [2, 4], 1.0), ([1, 0], [-3, 0], -1.0)]
)
def test_cosine_examples(a, b, expected):
    assert cosine(a, b) == pytest.approx(expected, abs=1e-12)


def test_cosine_rejects_dim_mismatch():
    with pytest.raises(SimilarityError, match="dimension"):
        cosine([1, 0], [1, 0, 0])


def test_cosine_rejects_zero_vector():
    with pytest.raises(SimilarityError, match="undefined similarity"):
        cosine([0, 0], [1, 0])
    with pytest.raises(SimilarityError, match="undefined similarity"):
        cosine_many([1.0, 0.0], [[1.0, 0.0], [0.0, 0.0]])


vectors = arrays(np.float64, 6, elements=st.floats(-1e3, 1e3, allow_nan=False)).filter(
    lambda v: np.linalg.norm(v) > 1e-6
)


@given(vectors, vectors, st.floats(1e-3, 1e3))
def test_cosine_properties(a, b, c):
    ab = cosine(a, b)
    assert ab == cosine(b, a)
    assert abs(ab) <= 1 + 1e-12
    assert cosine(a, c * a) == pytest.approx(1.0, abs=1e-9)
    assert ab == pytest.approx(py_cosine(a, b), abs=1e-9)


@given(vectors, st.lists(vectors, min_size=1, max_size=5))
def test_cosine_many_matches_scalar(q, rows):
    got = cosine_many(q, np.vstack(rows))
    assert got == pytest.approx([cosine(q, r) for r in rows], abs=1e-12)


# -- hash provider ---------------------------------------------------------------------


def test_hash_provider_is_deterministic():
    p = HashEmbeddingProvider(dim=64)
    a1 = p.embed("a")
    assert np.array_equal(a1, p.embed("a"))
    assert np.array_equal(a1, HashEmbeddingProvider(dim=64).embed("a"))


def test_hash_provider_seed_changes_vectors():
    assert not np.array_equal(HashEmbeddingProvider(seed=1).embed("river"), HashEmbeddingProvider(seed=2).embed("river"))


@given(st.text(min_size=1, max_size=40))
def test_hash_vectors_unit_norm_and_finite(text):
    vec = HashEmbeddingProvider(dim=32).embed(text)
    assert vec.shape == (32,)
    assert np.all(np.isfinite(vec))
    assert np.linalg.norm(vec) == pytest.approx(1.0)


def test_hash_provider_rejects_empty_text():
    with pytest.raises(EmbeddingError):
        HashEmbeddingProvider().embed("")


def test_hash_provider_collision_rate_below_one_percent():
    rng = random.Random(0)
    texts = set()
    while len(texts) < 10_000:
        texts.add(" ".join("".join(rng.choices(string.ascii_lowercase, k=rng.randint(2, 8)))
                           for _ in range(rng.randint(1, 5))))
    p = HashEmbeddingProvider(dim=256)
    keys = {p.embed(t).tobytes() for t in texts}
    collisions = len(texts) - len(keys)
    assert collisions / len(texts) < 0.01


def test_hash_provider_treats_mask_token_as_one_token():
    p = HashEmbeddingProvider()
    assert cosine(p.embed("who is <MASK>"), p.embed("Who is <mask>?")) == pytest.approx(1.0)


# -- precomputed -------------------------------------------------------------------------


def test_precomputed_returns_stored_vector_verbatim(tmp_path):
    stored = [0.1, -0.2, 1e-17, 3.141592653589793]
    path = tmp_path / "vec.jsonl"
    path.write_text(json.dumps({"key": "(A, r1, B)", "vector": stored}) + "\n", encoding="utf-8")
    p = PrecomputedEmbeddingProvider.from_jsonl(path)
    assert p.embed("(A, r1, B)").tolist() == stored
    assert p.dim == 4


@given(st.lists(arrays(np.float64, 3, elements=st.floats(-1e6, 1e6, allow_nan=False, width=64)), min_size=1, max_size=5))
def test_precomputed_read_back_is_byte_faithful(tmp_path_factory, rows):
    table = {f"k{i}": r for i, r in enumerate(rows)}
    path = tmp_path_factory.mktemp("emb") / "t.jsonl"
    PrecomputedEmbeddingProvider(table).to_jsonl(path)
    back = PrecomputedEmbeddingProvider.from_jsonl(path)
    for key, row in table.items():
        assert back.embed(key).tobytes() == np.asarray(row, dtype=np.float64).tobytes()


def test_precomputed_miss_lists_missing_texts():
    p = PrecomputedEmbeddingProvider({"a": [1.0, 0.0]})
    with pytest.raises(UnknownKeyError, match="unknown key") as info:
        p.embed_batch(["a", "b", "c"])
    assert info.value.missing == ["b", "c"]
    assert "'b'" in str(info.value)


def test_precomputed_rejects_inconsistent_dims():
    with pytest.raises(EmbeddingError):
        PrecomputedEmbeddingProvider({"a": [1.0, 0.0], "b": [1.0]})


# -- remote ----------------------------------------------------------------------------


class _StubHandler(BaseHTTPRequestHandler):
    calls: list = []
    fail_status: int | None = None

    def do_POST(self):
        length = int(self.headers["Content-Length"])
        body = json.loads(self.rfile.read(length))
        type(self).calls.append((self.path, body["texts"]))
        if type(self).fail_status:
            self.send_response(type(self).fail_status)
            self.end_headers()
            return
        vectors = [[float(len(t)), float(sum(map(ord, t)) % 97), 1.0] for t in body["texts"]]
        payload = json.dumps({"vectors": vectors}).encode()
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(payload)))
        self.end_headers()
        self.wfile.write(payload)

    def log_message(self, *args):
        pass


@pytest.fixture
def stub_server():
    _StubHandler.calls = []
    _StubHandler.fail_status = None
    server = HTTPServer(("127.0.0.1", 0), _StubHandler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    yield f"http://127.0.0.1:{server.server_port}", _StubHandler
    server.shutdown()
    server.server_close()


def _expected(text):
    return [float(len(text)), float(sum(map(ord, text)) % 97), 1.0]


def test_remote_batch_is_order_aligned(stub_server):
    url, handler = stub_server
    texts = ["alpha", "be", "gamma ray"]
    vecs = RemoteEmbeddingProvider(url).embed_batch(texts)
    assert [v.tolist() for v in vecs] == [_expected(t) for t in texts]
    assert handler.calls == [("/embed", texts)]


def test_remote_chunks_requests_by_batch_size(stub_server):
    url, handler = stub_server
    texts = [f"text {i}" for i in range(10)]
    vecs = RemoteEmbeddingProvider(url + "/embed", batch_size=4).embed_batch(texts)
    assert [len(c[1]) for c in handler.calls] == [4, 4, 2]
    assert [v.tolist() for v in vecs] == [_expected(t) for t in texts]


def test_remote_non_200_is_retriable_transport_error(stub_server):
    url, handler = stub_server
    handler.fail_status = 503
    with pytest.raises(TransportError) as info:
        RemoteEmbeddingProvider(url).embed("x")
    assert info.value.retriable and info.value.status == 503


def test_remote_unreachable_is_transport_error():
    with pytest.raises(TransportError):
        RemoteEmbeddingProvider("http://127.0.0.1:9", timeout=1).embed("x")


def test_remote_endpoint_from_environment(stub_server, monkeypatch):
    url, _ = stub_server
    monkeypatch.setenv(ENDPOINT_ENV, url)
    assert make_provider("remote").embed("abc").tolist() == _expected("abc")
    monkeypatch.delenv(ENDPOINT_ENV)
    with pytest.raises(EmbeddingError):
        RemoteEmbeddingProvider()


def test_memoized_provider_calls_inner_once(stub_server):
    url, handler = stub_server
    p = MemoizedProvider(RemoteEmbeddingProvider(url))
    p.embed_batch(["a", "b", "a"])
    p.embed("b")
    p.embed_batch(["b", "c"])
    assert handler.calls == [("/embed", ["a", "b"]), ("/embed", ["c"])]


def test_row_score_independent_of_batch_company():
    rng = np.random.default_rng(0)
    q = rng.normal(size=256)
    rows = rng.normal(size=(40, 256))
    full = cosine_many(q, rows)
    for i in (0, 7, 39):
        assert cosine_many(q, rows[i : i + 1])[0] == full[i]
        assert cosine(q, rows[i]) == full[i]
    perm = rng.permutation(40)
    assert np.array_equal(cosine_many(q, rows[perm]), full[perm])
