import json

import httpx
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from oracles import naive_cosine, naive_matrix
from tagsmith.embed import (
    CachedEncoder,
    EmbeddingMatrix,
    HashingEncoder,
    RemoteEncoder,
    char_trigrams,
    cosine,
    encode_deterministic,
    fnv1a_64,
    similar_pairs,
    similarity_matrix,
    top_k,
)
from tagsmith.llm import RetryPolicy


def test_fnv_published_vectors():
    assert fnv1a_64(b"") == 14695981039346656037
    assert fnv1a_64(b"a") == 0xAF63DC4C8601EC8C
    assert fnv1a_64(b"foobar") == 0x85944171F73967E8


def test_trigrams_are_padded():
    assert char_trigrams("ab") == ["#ab", "ab#"]
    assert char_trigrams("Cat") == ["#ca", "cat", "at#"]


def test_frozen_bucket_layout():
    v = encode_deterministic("kitten", 256)
    nz = [(int(i), int(np.sign(v[i]))) for i in np.nonzero(v)[0]]
    assert nz == [(76, 1), (86, -1), (87, 1), (144, 1), (148, 1), (203, -1)]
    assert np.linalg.norm(v) == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize(
    "a,b,expected",
    [
        ("abcd", "wxyz", 0.25),
        ("abcd", "abce", 0.5),
        ("watercolor", "watercolors", 0.8581163303210331),
        ("recipe", "recipes", 0.7715167498104595),
        ("Cat", "cat", 1.0),
    ],
)
def test_frozen_cosines(a, b, expected):
    assert cosine(encode_deterministic(a), encode_deterministic(b)) == pytest.approx(expected, abs=1e-12)


def test_blank_text_is_zero_and_scores_zero():
    z = encode_deterministic("   ")
    assert not z.any()
    assert cosine(z, encode_deterministic("cat")) == 0.0
    assert cosine(z, z) == 0.0


def test_encoder_name_and_batch():
    enc = HashingEncoder(64)
    assert enc.name == "hashing-fnv1a64-trigram-64"
    m = enc.encode_many(["a cat", "dog"])
    assert m.shape == (2, 64)
    np.testing.assert_array_equal(m[0], enc.encode("a cat"))


def test_cosine_small_example():
    assert cosine(np.array([1.0, 2, 2]), np.array([2.0, 1, 2])) == pytest.approx(8 / 9, abs=1e-12)


vec = hnp.arrays(np.float64, 8, elements=st.floats(-10, 10, allow_nan=False, width=32))


@given(vec, vec)
def test_cosine_symmetric_bounded(v, w):
    c = cosine(v, w)
    assert c == cosine(w, v)
    assert -1.0 <= c <= 1.0
    assert not np.isnan(c)


@given(vec, st.floats(0.01, 100))
def test_cosine_scale_invariant(v, k):
    w = np.arange(8, dtype=float) - 3
    assert cosine(v * k, w) == pytest.approx(cosine(v, w), abs=1e-9)


def test_matrix_against_naive_and_transpose():
    rng = np.random.default_rng(5)
    a = rng.normal(size=(20, 16))
    b = rng.normal(size=(15, 16))
    b[3] = 0
    s = similarity_matrix(a, b)
    assert s.shape == (20, 15)
    np.testing.assert_allclose(s, naive_matrix(a.tolist(), b.tolist()), atol=1e-9)
    np.testing.assert_array_equal(similarity_matrix(b, a), s.T)
    assert not np.isnan(s).any()
    assert (s[:, 3] == 0).all()


def test_matrix_accepts_embedding_matrix():
    enc = HashingEncoder()
    em = EmbeddingMatrix.encode(["cat", "dog"], enc)
    np.testing.assert_allclose(similarity_matrix(em, em).diagonal(), [1.0, 1.0])


def test_top_k_ties_and_floor():
    em = EmbeddingMatrix(["b", "a", "c", "d"], np.array([[1.0, 0], [1, 0], [0, 1], [1, 1]]))
    q = np.array([1.0, 0])
    assert top_k(q, em, 2) == [("a", 1.0), ("b", 1.0)]
    hits = top_k(q, em, 10, floor=0.5)
    assert [k for k, _ in hits] == ["a", "b", "d"]
    assert hits[2][1] == pytest.approx(2**-0.5)
    assert top_k(q, EmbeddingMatrix([], np.zeros((0, 2))), 3) == []
    with pytest.raises(ValueError):
        top_k(q, em, 0)


@settings(max_examples=30)
@given(st.integers(2, 30), st.sampled_from([0.3, 0.8, 0.95]), st.integers(0, 10_000))
def test_similar_pairs_brute_force(n, threshold, seed):
    rng = np.random.default_rng(seed)
    base = rng.normal(size=(3, 6))
    x = base[rng.integers(0, 3, n)] + 0.3 * rng.normal(size=(n, 6))
    got = set(similar_pairs(x, threshold, block=7))
    want = {
        (i, j)
        for i in range(n)
        for j in range(i + 1, n)
        if round(naive_cosine(x[i], x[j]), 12) >= threshold
    }
    assert got == want


def test_cache_round_trip(tmp_path):
    calls = []

    class Counting(HashingEncoder):
        def encode_many(self, texts):
            calls.append(list(texts))
            return super().encode_many(texts)

    path = tmp_path / "cache.jsonl"
    first = CachedEncoder(Counting(), path).encode_many(["cat", "dog", "cat"])
    second_enc = CachedEncoder(Counting(), path)
    second = second_enc.encode_many(["dog", "cat"])
    np.testing.assert_array_equal(first[[1, 0]], second)
    assert len(calls) == 1
    header = json.loads(path.read_text().splitlines()[0])
    assert header == {"format": "tagsmith-embedding-cache", "version": 1, "encoder": second_enc.name}


def test_cache_ignores_foreign_file(tmp_path):
    path = tmp_path / "cache.jsonl"
    path.write_text('{"format": "other"}\n{"key": "x", "vector": [1]}\n')
    enc = CachedEncoder(HashingEncoder(), path)
    np.testing.assert_array_equal(enc.encode("cat"), encode_deterministic("cat"))


def test_remote_encoder_normalizes_and_skips_blank():
    seen = []

    def handler(request):
        body = json.loads(request.content)
        seen.append(body["input"])
        data = [{"index": i, "embedding": [3.0, 4.0]} for i in range(len(body["input"]))]
        return httpx.Response(200, json={"data": data})

    enc = RemoteEncoder("http://emb.test/v1", "e", api_key="k",
                        transport=httpx.MockTransport(handler), retry=RetryPolicy(deterministic=True))
    out = enc.encode_many(["cat", "", "dog"])
    assert seen == [["cat", "dog"]]
    np.testing.assert_allclose(out, [[0.6, 0.8], [0, 0], [0.6, 0.8]])
    assert enc.name == "remote:e"
