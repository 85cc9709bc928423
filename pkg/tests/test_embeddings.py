import struct

import numpy as np
import pytest

from topicrank.corpus import Document
from topicrank.embeddings import (
    CacheMiss,
    CacheProvider,
    EmbeddingError,
    EmbeddingProviderConfig,
    LayeredEmbeddings,
    SyntheticProvider,
    make_provider,
    query_hash,
    read_pairs,
    write_embedding_cache,
)

HEADER = 16  # magic, version, layers, dim


def doc(doc_id, text):
    return Document(doc_id, tuple(text.split()))


def test_synthetic_is_deterministic():
    a = SyntheticProvider(layers=3, dim=16, seed=5).embed_pair(("apple",), doc("d", "red apple pie"))
    b = SyntheticProvider(layers=3, dim=16, seed=5).embed_pair(("apple",), doc("d", "red apple pie"))
    assert np.array_equal(a[0].layers, b[0].layers)
    assert np.array_equal(a[1].layers, b[1].layers)
    assert a[0].layers.dtype == np.float32


def test_window_zero_is_context_free():
    p = SyntheticProvider(layers=2, dim=8, seed=1, window=0)
    _, d1 = p.embed_pair(("q",), doc("a", "x apple y"))
    _, d2 = p.embed_pair(("z",), doc("b", "apple k k k"))
    assert np.array_equal(d1.layers[0, 1], d2.layers[0, 0])
    assert np.allclose(d1.layers[0, 1], p.token_vector("apple"), atol=1e-7)


def test_window_two_mixes_context():
    p = SyntheticProvider(layers=3, dim=8, seed=1, window=2)
    _, d1 = p.embed_pair(("q",), doc("a", "red apple pie"))
    _, d2 = p.embed_pair(("q",), doc("b", "blue apple tart"))
    assert not np.allclose(d1.layers[1, 1], d2.layers[1, 1])
    assert not np.allclose(d1.layers[2, 1], d2.layers[2, 1])


def test_empty_inputs_rejected():
    p = SyntheticProvider(layers=1, dim=4)
    with pytest.raises(EmbeddingError):
        p.embed_pair((), doc("a", "x"))
    with pytest.raises(EmbeddingError):
        p.embed_pair(("q",), Document("a", ()))


def test_layered_embeddings_rejects_nan():
    with pytest.raises(EmbeddingError):
        LayeredEmbeddings(np.full((1, 1, 2), np.nan))


def test_cache_round_trip_bit_exact(tmp_path):
    p = SyntheticProvider(layers=2, dim=8, seed=3)
    d = doc("d1", "red apple pie")
    path = tmp_path / "c.bin"
    assert write_embedding_cache([(("apple", "pie"), d)], p, path) == 1
    cache = CacheProvider(path)
    q1, d1 = cache.embed_pair(("apple", "pie"), d)
    q0, d0 = p.embed_pair(("apple", "pie"), d)
    assert np.array_equal(q1.layers, q0.layers)
    assert np.array_equal(d1.layers, d0.layers)


def test_cache_serves_three_and_misses_fourth(tmp_path):
    p = SyntheticProvider(layers=1, dim=4)
    docs = [doc(f"d{i}", f"w{i} x") for i in range(4)]
    path = tmp_path / "c.bin"
    write_embedding_cache([(("q",), d) for d in docs[:3]], p, path)
    cache = CacheProvider(path)
    assert len(cache) == 3
    for d in docs[:3]:
        assert (("q",), d.doc_id) in cache
        cache.embed_pair(("q",), d)
    with pytest.raises(CacheMiss, match="d3"):
        cache.embed_pair(("q",), docs[3])


def test_cache_size_formula(tmp_path, rng):
    L, dim = 12, 64
    p = SyntheticProvider(layers=L, dim=dim, seed=2)
    pairs, expected = [], HEADER
    for i in range(100):
        m, n = int(rng.integers(1, 4)), int(rng.integers(1, 9))
        q = tuple(f"q{i}_{k}" for k in range(m))
        d = Document(f"d{i}", tuple(f"t{k}" for k in range(n)))
        pairs.append((q, d))
        # record framing: query hash, id length, id bytes, m, n
        expected += 8 + 4 + len(d.doc_id) + 8 + (m + n) * L * dim * 4
    path = tmp_path / "c.bin"
    write_embedding_cache(pairs, p, path)
    assert path.stat().st_size == expected


def test_cache_dedupes_pairs(tmp_path):
    p = SyntheticProvider(layers=1, dim=4)
    d = doc("d", "x y")
    assert write_embedding_cache([(("q",), d), (("q",), d)], p, tmp_path / "c.bin") == 1


def test_cache_rejects_truncated_and_bad_magic(tmp_path):
    p = SyntheticProvider(layers=1, dim=4)
    path = tmp_path / "c.bin"
    write_embedding_cache([(("q",), doc("d", "x y"))], p, path)
    data = path.read_bytes()
    (tmp_path / "t.bin").write_bytes(data[:-3])
    with pytest.raises(EmbeddingError, match="truncated"):
        CacheProvider(tmp_path / "t.bin")
    (tmp_path / "m.bin").write_bytes(b"XXXX" + data[4:])
    with pytest.raises(EmbeddingError, match="magic"):
        CacheProvider(tmp_path / "m.bin")
    (tmp_path / "e.bin").write_bytes(b"")
    with pytest.raises(EmbeddingError):
        CacheProvider(tmp_path / "e.bin")


def test_cache_header_layout(tmp_path):
    p = SyntheticProvider(layers=3, dim=5)
    path = tmp_path / "c.bin"
    write_embedding_cache([(("q",), doc("d", "x"))], p, path)
    magic, version, layers, dim = struct.unpack_from("<4sIII", path.read_bytes())
    assert (magic, version, layers, dim) == (b"TREM", 1, 3, 5)
    assert path.read_bytes()[16:24] == query_hash(("q",))


def test_make_provider_and_read_pairs(tmp_path):
    p = SyntheticProvider(layers=1, dim=4)
    docs = {"d1": doc("d1", "x y")}
    write_embedding_cache([(("q",), docs["d1"])], p, tmp_path / "c.bin")
    assert isinstance(make_provider(EmbeddingProviderConfig(kind="file", path=str(tmp_path / "c.bin"))), CacheProvider)
    assert isinstance(make_provider(EmbeddingProviderConfig(layers=1, dim=4)), SyntheticProvider)
    (tmp_path / "pairs.tsv").write_text("Hello World\td1\n")
    assert read_pairs(tmp_path / "pairs.tsv", docs)[0][0] == ("hello", "world")


def test_config_validation():
    with pytest.raises(EmbeddingError):
        EmbeddingProviderConfig(kind="bert")
    with pytest.raises(EmbeddingError):
        EmbeddingProviderConfig(window=-1)
