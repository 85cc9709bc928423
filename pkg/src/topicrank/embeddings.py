"""Per-layer contextual token vectors behind a small provider interface.

Two providers are available:

``SyntheticProvider``
    Deterministic stand-in for a pretrained encoder.  Every token string
    hashes to a seeded unit vector; each layer mixes every position with its
    neighbours (within ``window``) over the concatenated query+document
    sequence and renormalises.  Identical tokens therefore drift apart with
    depth when their contexts differ.

``CacheProvider``
    Serves vectors produced elsewhere (e.g. by a real encoder) from the
    binary cache written by :func:`write_embedding_cache`.

Cache layout, little-endian throughout::

    header  : magic b"TREM" | u32 version | u32 layers | u32 dim
    record  : 8-byte query hash | u32 len | doc_id utf-8 | u32 m | u32 n
              | float32[layers][m + n][dim]   (query tokens first per layer)
"""

from __future__ import annotations

import hashlib
import mmap
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Sequence, Tuple

import numpy as np

from .corpus import MAX_QUERY_LEN, CorpusError, Document, tokenize

MAGIC = b"TREM"
CACHE_VERSION = 1
_HEADER = struct.Struct("<4sIII")
_U32 = struct.Struct("<I")


class EmbeddingError(ValueError):
    pass


class CacheMiss(KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else ""


@dataclass
class LayeredEmbeddings:
    """Token vectors for one sequence, shape ``(layers, tokens, dim)``."""

    layers: np.ndarray

    def __post_init__(self):
        if self.layers.ndim != 3:
            raise EmbeddingError(f"expected a (layers, tokens, dim) array, got shape {self.layers.shape}")
        if not np.all(np.isfinite(self.layers)):
            raise EmbeddingError("embeddings contain NaN or Inf")

    @property
    def n_layers(self) -> int:
        return self.layers.shape[0]

    @property
    def token_count(self) -> int:
        return self.layers.shape[1]

    @property
    def dim(self) -> int:
        return self.layers.shape[2]


@dataclass
class EmbeddingProviderConfig:
    kind: str = "synthetic"  # or "file"
    layers: int = 12
    dim: int = 768
    seed: int = 7
    window: int = 2
    path: str = ""

    def __post_init__(self):
        if self.layers < 1 or self.dim < 1:
            raise EmbeddingError("layers and dim must be >= 1")
        if self.window < 0:
            raise EmbeddingError("window must be >= 0")
        if self.kind not in ("synthetic", "file"):
            raise EmbeddingError(f"unknown provider kind {self.kind!r}")


def query_hash(tokens: Sequence[str]) -> bytes:
    return hashlib.blake2b("\x1f".join(tokens).encode("utf-8"), digest_size=8).digest()


def _check_nonempty(query: Sequence[str], doc: Document) -> None:
    if not query:
        raise EmbeddingError("empty query")
    if not doc.tokens:
        raise EmbeddingError(f"document {doc.doc_id!r} has no tokens")


class SyntheticProvider:
    def __init__(self, layers: int = 12, dim: int = 768, seed: int = 7, window: int = 2, mix: float = 0.5):
        EmbeddingProviderConfig(layers=layers, dim=dim, seed=seed, window=window)
        self.n_layers = layers
        self.dim = dim
        self.seed = seed
        self.window = window
        self.mix = mix
        self._base: Dict[str, np.ndarray] = {}

    def token_vector(self, token: str) -> np.ndarray:
        vec = self._base.get(token)
        if vec is None:
            h = int.from_bytes(hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest(), "little")
            vec = np.random.default_rng([self.seed, h]).standard_normal(self.dim)
            vec /= np.linalg.norm(vec)
            self._base[token] = vec
        return vec

    def _neighbour_mean(self, h: np.ndarray) -> np.ndarray:
        n, w = h.shape[0], self.window
        csum = np.vstack([np.zeros((1, h.shape[1])), np.cumsum(h, axis=0)])
        idx = np.arange(n)
        lo = np.maximum(idx - w, 0)
        hi = np.minimum(idx + w + 1, n)
        counts = (hi - lo - 1)[:, None]
        sums = csum[hi] - csum[lo] - h
        return np.divide(sums, counts, out=np.zeros_like(h), where=counts > 0)

    def embed_sequence(self, tokens: Sequence[str]) -> np.ndarray:
        h = np.vstack([self.token_vector(t) for t in tokens])
        out = np.empty((self.n_layers, len(tokens), self.dim), dtype=np.float32)
        for layer in range(self.n_layers):
            if self.window > 0:
                h = h + self.mix * self._neighbour_mean(h)
                h /= np.linalg.norm(h, axis=1, keepdims=True)
            out[layer] = h
        return out

    def embed_pair(self, query: Sequence[str], doc: Document) -> Tuple[LayeredEmbeddings, LayeredEmbeddings]:
        _check_nonempty(query, doc)
        seq = self.embed_sequence(list(query) + list(doc.tokens))
        m = len(query)
        return LayeredEmbeddings(seq[:, :m]), LayeredEmbeddings(seq[:, m:])


class CacheProvider:
    """Read-only view over an embedding cache file."""

    def __init__(self, path):
        self.path = Path(path)
        if self.path.stat().st_size < _HEADER.size:
            raise EmbeddingError(f"{path}: too short for an embedding cache")
        with open(self.path, "rb") as fh:
            self._buf = mmap.mmap(fh.fileno(), 0, access=mmap.ACCESS_READ)
        magic, version, layers, dim = _HEADER.unpack_from(self._buf, 0)
        if magic != MAGIC:
            raise EmbeddingError(f"{path}: bad magic {magic!r}")
        if version != CACHE_VERSION:
            raise EmbeddingError(f"{path}: unsupported cache version {version}")
        self.n_layers, self.dim = layers, dim
        self._index: Dict[Tuple[bytes, str], Tuple[int, int, int]] = {}
        pos = _HEADER.size
        size = len(self._buf)
        while pos < size:
            qh = bytes(self._buf[pos:pos + 8])
            (ln,) = _U32.unpack_from(self._buf, pos + 8)
            doc_id = self._buf[pos + 12:pos + 12 + ln].decode("utf-8")
            pos += 12 + ln
            m, n = struct.unpack_from("<II", self._buf, pos)
            pos += 8
            self._index[(qh, doc_id)] = (pos, m, n)
            pos += layers * (m + n) * dim * 4
        if pos != size:
            raise EmbeddingError(f"{path}: truncated record at end of file")

    def __len__(self) -> int:
        return len(self._index)

    def __contains__(self, key) -> bool:
        query, doc_id = key
        return (query_hash(query), doc_id) in self._index

    def embed_pair(self, query: Sequence[str], doc: Document) -> Tuple[LayeredEmbeddings, LayeredEmbeddings]:
        _check_nonempty(query, doc)
        qh = query_hash(query)
        try:
            offset, m, n = self._index[(qh, doc.doc_id)]
        except KeyError:
            raise CacheMiss(
                f"no cached embeddings for query {' '.join(query)!r} (hash {qh.hex()}) and doc {doc.doc_id!r}"
            ) from None
        arr = np.frombuffer(self._buf, dtype="<f4", count=self.n_layers * (m + n) * self.dim, offset=offset)
        arr = arr.reshape(self.n_layers, m + n, self.dim)
        return LayeredEmbeddings(arr[:, :m]), LayeredEmbeddings(arr[:, m:])


def make_provider(config: EmbeddingProviderConfig):
    if config.kind == "file":
        return CacheProvider(config.path)
    return SyntheticProvider(config.layers, config.dim, config.seed, config.window)


def write_embedding_cache(pairs: Iterable[Tuple[Sequence[str], Document]], provider, path) -> int:
    """Embed every (query tokens, document) pair and write them to ``path``.

    Repeated pairs are stored once.  Returns the number of records written.
    """
    seen = set()
    shape = None
    tmp = Path(str(path) + ".part")
    written = 0
    with open(tmp, "wb") as fh:
        for query, doc in pairs:
            key = (query_hash(query), doc.doc_id)
            if key in seen:
                continue
            seen.add(key)
            q, d = provider.embed_pair(query, doc)
            if shape is None:
                shape = (q.n_layers, q.dim)
                fh.write(_HEADER.pack(MAGIC, CACHE_VERSION, *shape))
            if (q.n_layers, q.dim) != shape or (d.n_layers, d.dim) != shape:
                raise EmbeddingError(
                    f"pair ({' '.join(query)!r}, {doc.doc_id!r}) has shape "
                    f"{(q.n_layers, q.dim)}/{(d.n_layers, d.dim)}, expected {shape}"
                )
            did = doc.doc_id.encode("utf-8")
            fh.write(key[0] + _U32.pack(len(did)) + did + struct.pack("<II", q.token_count, d.token_count))
            block = np.concatenate([q.layers, d.layers], axis=1).astype("<f4", copy=False)
            fh.write(block.tobytes(order="C"))
            written += 1
        if shape is None:
            layers = getattr(provider, "n_layers", 1)
            fh.write(_HEADER.pack(MAGIC, CACHE_VERSION, layers, getattr(provider, "dim", 1)))
    tmp.replace(path)
    return written


def read_pairs(path, docs) -> List[Tuple[Tuple[str, ...], Document]]:
    """Read ``query text<TAB>doc_id`` rows, tokenising queries like the click log."""
    pairs = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise CorpusError(f"{path}:{lineno}: expected 'query<TAB>doc_id'")
        text, doc_id = parts
        if doc_id not in docs:
            raise CorpusError(f"{path}:{lineno}: unknown doc_id {doc_id!r}")
        pairs.append((tokenize(text, MAX_QUERY_LEN), docs[doc_id]))
    return pairs
