"""Latent Dirichlet allocation by collapsed Gibbs sampling.

The sampler keeps the usual three count tables (word-topic, doc-topic,
topic totals) in lock-step with the flat token assignment vector.  Uniform
draws come from a seeded ``numpy.random.Generator`` outside the jitted
kernel, so a run is fully determined by ``TopicModelConfig.seed``.
"""

from __future__ import annotations

import hashlib
import logging
import math
from collections import Counter
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Callable, Dict, Iterable, List, Mapping, Optional, Sequence, Union

import numpy as np
from numba import njit
from scipy.special import gammaln

from .corpus import Document

logger = logging.getLogger(__name__)

MODEL_VERSION = 1


class TopicModelError(ValueError):
    pass


@dataclass
class TopicModelConfig:
    n_topics: int = 50
    alpha: Optional[float] = None  # None -> 50 / n_topics
    beta: float = 0.01
    iterations: int = 500
    seed: int = 7
    min_df: int = 5
    top_fraction: float = 0.005  # share of the most frequent terms dropped
    infer_sweeps: int = 20
    infer_burn_in: int = 10

    def __post_init__(self):
        if self.alpha is None:
            self.alpha = 50.0 / self.n_topics
        self.validate()

    def validate(self) -> None:
        if self.n_topics < 2:
            raise TopicModelError("n_topics must be >= 2")
        if not self.alpha > 0 or not self.beta > 0:
            raise TopicModelError("alpha and beta must be positive")
        if self.iterations < 1:
            raise TopicModelError("iterations must be >= 1")
        if not 0 <= self.infer_burn_in < self.infer_sweeps:
            raise TopicModelError("need 0 <= infer_burn_in < infer_sweeps")


@dataclass
class DocumentTopics:
    vector: np.ndarray
    degenerate: bool = False  # no in-vocabulary tokens; vector is uniform


@njit(cache=True)
def _gibbs_sweep(words, doc_of, z, nwt, ndt, nt, alpha, beta, vbeta, u):
    n_topics = nt.shape[0]
    cdf = np.empty(n_topics)
    for i in range(words.shape[0]):
        w = words[i]
        d = doc_of[i]
        k = z[i]
        nwt[w, k] -= 1
        ndt[d, k] -= 1
        nt[k] -= 1
        total = 0.0
        for t in range(n_topics):
            total += (ndt[d, t] + alpha) * (nwt[w, t] + beta) / (nt[t] + vbeta)
            cdf[t] = total
        r = u[i] * total
        k = 0
        while k < n_topics - 1 and cdf[k] <= r:
            k += 1
        z[i] = k
        nwt[w, k] += 1
        ndt[d, k] += 1
        nt[k] += 1


@njit(cache=True)
def _infer_frozen(words, z, nwt, nt, alpha, beta, vbeta, u, burn_in):
    """Gibbs over one document with word-topic counts held fixed.

    Returns doc-topic counts averaged over the sweeps after ``burn_in``.
    """
    n_topics = nt.shape[0]
    nd = np.zeros(n_topics)
    for i in range(words.shape[0]):
        nd[z[i]] += 1
    acc = np.zeros(n_topics)
    cdf = np.empty(n_topics)
    n_sweeps = u.shape[0]
    for s in range(n_sweeps):
        for i in range(words.shape[0]):
            w = words[i]
            nd[z[i]] -= 1
            total = 0.0
            for t in range(n_topics):
                total += (nd[t] + alpha) * (nwt[w, t] + beta) / (nt[t] + vbeta)
                cdf[t] = total
            r = u[s, i] * total
            k = 0
            while k < n_topics - 1 and cdf[k] <= r:
                k += 1
            z[i] = k
            nd[k] += 1
        if s >= burn_in:
            acc += nd
    return acc / (n_sweeps - burn_in)


def _stable_hash(tokens: Sequence[str]) -> int:
    digest = hashlib.blake2b("\x1f".join(tokens).encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def build_vocabulary(token_lists: Iterable[Sequence[str]], min_df: int, top_fraction: float) -> List[str]:
    """Terms in at least ``min_df`` documents, minus the most frequent ``top_fraction``."""
    df: Counter = Counter()
    tf: Counter = Counter()
    for tokens in token_lists:
        tf.update(tokens)
        df.update(set(tokens))
    kept = [w for w, c in df.items() if c >= min_df]
    n_drop = int(math.floor(top_fraction * len(kept)))
    if n_drop:
        by_freq = sorted(kept, key=lambda w: (-tf[w], w))
        dropped = set(by_freq[:n_drop])
        kept = [w for w in kept if w not in dropped]
    return sorted(kept)


@dataclass
class TopicModel:
    """Trained (or loaded) LDA state.

    ``doc_topic_counts`` and the token arrays exist only for a model trained
    in this process; a model read from disk carries just the word-topic
    counts and the per-document distributions.
    """

    config: TopicModelConfig
    vocabulary: List[str]
    word_topic_counts: np.ndarray
    topic_totals: np.ndarray
    doc_ids: List[str]
    doc_topics: np.ndarray
    doc_topic_counts: Optional[np.ndarray] = None
    token_words: Optional[np.ndarray] = None
    token_docs: Optional[np.ndarray] = None
    token_topics: Optional[np.ndarray] = None
    loglik: List[float] = field(default_factory=list)
    source: str = ""

    def __post_init__(self):
        self.word_index = {w: i for i, w in enumerate(self.vocabulary)}
        self.doc_index = {d: i for i, d in enumerate(self.doc_ids)}

    @property
    def n_topics(self) -> int:
        return self.config.n_topics

    @property
    def assignments(self) -> List[np.ndarray]:
        if self.token_topics is None:
            raise TopicModelError("assignments are not kept for a loaded model")
        bounds = np.searchsorted(self.token_docs, np.arange(1, len(self.doc_ids)))
        return np.split(self.token_topics, bounds)

    def top_words(self, topic: int, k: int) -> List[str]:
        col = self.word_topic_counts[:, topic]
        order = np.lexsort((np.arange(len(col)), -col))
        return [self.vocabulary[i] for i in order[:k]]

    def check_invariants(self) -> None:
        """Raise AssertionError if the count tables disagree with the assignments."""
        nwt, nt = self.word_topic_counts, self.topic_totals
        assert np.array_equal(nwt.sum(axis=0), nt), "word-topic column sums != topic totals"
        if self.token_topics is None:
            return
        T = self.n_topics
        V = len(self.vocabulary)
        D = len(self.doc_ids)
        z, w, d = self.token_topics, self.token_words, self.token_docs
        expect_wt = np.zeros((V, T), dtype=np.int64)
        np.add.at(expect_wt, (w, z), 1)
        expect_dt = np.zeros((D, T), dtype=np.int64)
        np.add.at(expect_dt, (d, z), 1)
        assert np.array_equal(expect_wt, nwt), "word-topic counts != assignments"
        assert np.array_equal(expect_dt, self.doc_topic_counts), "doc-topic counts != assignments"
        lengths = np.bincount(d, minlength=D)
        assert np.array_equal(self.doc_topic_counts.sum(axis=1), lengths), "doc row sums != lengths"

    def log_likelihood(self) -> float:
        """Collapsed joint log p(w, z) under the symmetric priors."""
        if self.doc_topic_counts is None:
            raise TopicModelError("likelihood needs doc-topic counts")
        a, b = self.config.alpha, self.config.beta
        V, T = self.word_topic_counts.shape
        D = self.doc_topic_counts.shape[0]
        ll = T * (gammaln(V * b) - V * gammaln(b))
        ll += gammaln(self.word_topic_counts + b).sum() - gammaln(self.topic_totals + V * b).sum()
        ll += D * (gammaln(T * a) - T * gammaln(a))
        ll += gammaln(self.doc_topic_counts + a).sum()
        ll -= gammaln(self.doc_topic_counts.sum(axis=1) + T * a).sum()
        return float(ll)

    def _refresh_doc_topics(self) -> None:
        a = self.config.alpha
        counts = self.doc_topic_counts
        self.doc_topics = (counts + a) / (counts.sum(axis=1, keepdims=True) + self.n_topics * a)


def _as_documents(docs: Union[Mapping[str, Document], Sequence[Document]]) -> List[Document]:
    if isinstance(docs, Mapping):
        return list(docs.values())
    return list(docs)


def train_lda(
    docs: Union[Mapping[str, Document], Sequence[Document]],
    config: TopicModelConfig,
    callback: Optional[Callable[[int, TopicModel], None]] = None,
) -> TopicModel:
    """Run ``config.iterations`` Gibbs sweeps; ``callback(sweep, model)`` fires after each."""
    documents = _as_documents(docs)
    if not documents:
        raise TopicModelError("empty corpus")
    vocab = build_vocabulary((d.tokens for d in documents), config.min_df, config.top_fraction)
    if not vocab:
        raise TopicModelError("vocabulary is empty after frequency filtering")
    T, V, D = config.n_topics, len(vocab), len(documents)
    if T > V:
        raise TopicModelError(f"n_topics={T} exceeds vocabulary size {V}")
    index = {w: i for i, w in enumerate(vocab)}

    words, doc_of = [], []
    for j, doc in enumerate(documents):
        ids = [index[t] for t in doc.tokens if t in index]
        if not ids:
            logger.warning("document %s has no in-vocabulary tokens", doc.doc_id)
        words.extend(ids)
        doc_of.extend([j] * len(ids))
    words_a = np.asarray(words, dtype=np.int64)
    docs_a = np.asarray(doc_of, dtype=np.int64)

    rng = np.random.default_rng(config.seed)
    z = rng.integers(0, T, size=len(words_a)).astype(np.int64)
    nwt = np.zeros((V, T), dtype=np.int64)
    ndt = np.zeros((D, T), dtype=np.int64)
    np.add.at(nwt, (words_a, z), 1)
    np.add.at(ndt, (docs_a, z), 1)
    nt = nwt.sum(axis=0)

    model = TopicModel(
        config=config,
        vocabulary=vocab,
        word_topic_counts=nwt,
        topic_totals=nt,
        doc_ids=[d.doc_id for d in documents],
        doc_topics=np.empty((D, T)),
        doc_topic_counts=ndt,
        token_words=words_a,
        token_docs=docs_a,
        token_topics=z,
    )
    alpha, beta = float(config.alpha), float(config.beta)
    for sweep in range(config.iterations):
        u = rng.random(len(words_a))
        _gibbs_sweep(words_a, docs_a, z, nwt, ndt, nt, alpha, beta, V * beta, u)
        model.loglik.append(model.log_likelihood())
        if callback is not None:
            callback(sweep, model)
    model._refresh_doc_topics()
    logger.info("LDA T=%d V=%d D=%d final loglik %.1f", T, V, D, model.loglik[-1])
    return model


def infer_doc_topics(model: TopicModel, doc: Document) -> DocumentTopics:
    """Topic distribution of ``doc``.

    Training documents get the smoothed ratio of their final counts; unseen
    documents are sampled against frozen word-topic counts.
    """
    T = model.n_topics
    j = model.doc_index.get(doc.doc_id)
    if j is not None:
        return DocumentTopics(model.doc_topics[j].copy())
    ids = np.asarray([model.word_index[t] for t in doc.tokens if t in model.word_index], dtype=np.int64)
    if ids.size == 0:
        return DocumentTopics(np.full(T, 1.0 / T), degenerate=True)
    cfg = model.config
    rng = np.random.default_rng([cfg.seed, _stable_hash(doc.tokens)])
    z = rng.integers(0, T, size=ids.size).astype(np.int64)
    u = rng.random((cfg.infer_sweeps, ids.size))
    V = len(model.vocabulary)
    nd = _infer_frozen(
        ids, z, model.word_topic_counts, model.topic_totals,
        float(cfg.alpha), float(cfg.beta), V * float(cfg.beta), u, cfg.infer_burn_in,
    )
    return DocumentTopics((nd + cfg.alpha) / (ids.size + T * cfg.alpha))


@dataclass
class Coherence:
    per_topic: np.ndarray
    top_words: List[List[str]]

    @property
    def mean(self) -> float:
        return float(np.mean(self.per_topic))


def umass_pair(co_count: int, df_prev: int) -> float:
    return math.log((co_count + 1) / df_prev)


def coherence(
    model: TopicModel,
    docs: Union[Mapping[str, Document], Sequence[Document]],
    top_k: int = 10,
) -> Coherence:
    """UMass coherence over each topic's ``top_k`` words.

    For ranked top words w_1..w_k the score is the mean over i > j of
    log((D(w_i, w_j) + 1) / D(w_j)), with document co-occurrence counts.
    """
    if top_k < 2:
        raise TopicModelError("top_k must be >= 2")
    sets = [set(d.tokens) for d in _as_documents(docs)]
    k = min(top_k, len(model.vocabulary))
    tops = [model.top_words(t, k) for t in range(model.n_topics)]
    needed = sorted({w for ws in tops for w in ws})
    col = {w: i for i, w in enumerate(needed)}
    incidence = np.zeros((len(sets), len(needed)), dtype=np.int64)
    for r, s in enumerate(sets):
        for w in s:
            c = col.get(w)
            if c is not None:
                incidence[r, c] = 1
    co = incidence.T @ incidence
    scores = np.empty(model.n_topics)
    for t, ws in enumerate(tops):
        idx = [col[w] for w in ws]
        pair_scores = []
        for i in range(1, len(idx)):
            for j in range(i):
                df_j = co[idx[j], idx[j]]
                if df_j == 0:
                    raise TopicModelError(f"topic {t}: top word {ws[j]!r} occurs in no document")
                pair_scores.append(umass_pair(int(co[idx[i], idx[j]]), int(df_j)))
        scores[t] = np.mean(pair_scores)
    return Coherence(scores, tops)


@dataclass
class SweepRow:
    n_topics: int
    coherence: float = float("nan")
    map: float = float("nan")
    mrr: float = float("nan")
    p_at_1: float = float("nan")
    a_clk: float = float("nan")
    error: str = ""


SWEEP_COLUMNS = ("T", "coherence", "MAP", "MRR", "P@1", "A.Clk", "error")


def sweep_topic_count(
    docs,
    candidate_ts: Sequence[int],
    base_config: Optional[TopicModelConfig] = None,
    evaluate: Optional[Callable[[TopicModel], object]] = None,
    coherence_docs=None,
    top_k: int = 10,
) -> List[SweepRow]:
    """Train one model per topic count and score it.

    ``evaluate`` maps a trained model to an object with ``map``, ``mrr``,
    ``p_at_1`` and ``a_clk`` attributes (the ranking pipeline's report).
    A failing row records its error and the sweep continues.
    """
    if not candidate_ts:
        raise TopicModelError("no candidate topic counts")
    base = base_config or TopicModelConfig()
    rows = []
    for T in candidate_ts:
        row = SweepRow(int(T))
        try:
            params = {f.name: getattr(base, f.name) for f in fields(base)}
            if _default_alpha(base):
                params["alpha"] = None
            params["n_topics"] = int(T)
            model = train_lda(docs, TopicModelConfig(**params))
            row.coherence = coherence(model, coherence_docs if coherence_docs is not None else docs, top_k).mean
            if evaluate is not None:
                rep = evaluate(model)
                row.map, row.mrr, row.p_at_1, row.a_clk = rep.map, rep.mrr, rep.p_at_1, rep.a_clk
        except Exception as exc:  # noqa: BLE001 - a bad row must not sink the sweep
            logger.warning("sweep row T=%s failed: %s", T, exc)
            row.error = f"{type(exc).__name__}: {exc}"
        rows.append(row)
    return rows


def _default_alpha(cfg: TopicModelConfig) -> bool:
    return math.isclose(cfg.alpha, 50.0 / cfg.n_topics)


def write_sweep(rows: Sequence[SweepRow], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(SWEEP_COLUMNS) + "\n")
        for r in rows:
            vals = [str(r.n_topics)] + [repr(float(v)) for v in (r.coherence, r.map, r.mrr, r.p_at_1, r.a_clk)]
            vals.append(r.error.replace(",", ";").replace("\n", " "))
            fh.write(",".join(vals) + "\n")


# --- model file -------------------------------------------------------------

_CONFIG_KEYS = [f.name for f in fields(TopicModelConfig)]


def save_model(model: TopicModel, path) -> None:
    """Write a line-oriented text model: config, vocabulary, counts, doc topics."""
    cfg = model.config
    lines = ["# topicrank LDA model", f"version {MODEL_VERSION}"]
    for key in _CONFIG_KEYS:
        lines.append(f"{key} {getattr(cfg, key)!r}")
    lines.append(f"source {model.source}")
    lines.append(f"vocabulary {len(model.vocabulary)}")
    lines.extend(model.vocabulary)
    lines.append(f"word_topic_counts {model.word_topic_counts.shape[0]} {model.word_topic_counts.shape[1]}")
    lines.extend(" ".join(map(str, row)) for row in model.word_topic_counts.tolist())
    lines.append(f"doc_topics {len(model.doc_ids)}")
    for doc_id, row in zip(model.doc_ids, model.doc_topics.tolist()):
        lines.append(doc_id + "\t" + " ".join(repr(x) for x in row))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _parse_scalar(text: str):
    if text == "None":
        return None
    try:
        return int(text)
    except ValueError:
        return float(text)


def load_model(path) -> TopicModel:
    lines = Path(path).read_text(encoding="utf-8").split("\n")
    pos = 0

    def take() -> str:
        nonlocal pos
        if pos >= len(lines):
            raise TopicModelError(f"{path}: truncated model file")
        line = lines[pos]
        pos += 1
        return line

    if not take().startswith("#"):
        raise TopicModelError(f"{path}: not a topic model file")
    key, _, val = take().partition(" ")
    if key != "version" or int(val) != MODEL_VERSION:
        raise TopicModelError(f"{path}: unsupported model version {val!r}")
    params = {}
    for expected in _CONFIG_KEYS:
        key, _, val = take().partition(" ")
        if key != expected:
            raise TopicModelError(f"{path}: expected {expected!r}, found {key!r}")
        params[key] = _parse_scalar(val)
    config = TopicModelConfig(**params)
    key, _, source = take().partition(" ")
    key, _, n = take().partition(" ")
    if key != "vocabulary":
        raise TopicModelError(f"{path}: missing vocabulary block")
    vocab = [take() for _ in range(int(n))]
    key, _, shape = take().partition(" ")
    V, T = map(int, shape.split())
    if key != "word_topic_counts" or V != len(vocab) or T != config.n_topics:
        raise TopicModelError(f"{path}: word_topic_counts shape mismatch")
    nwt = np.array([[int(x) for x in take().split()] for _ in range(V)], dtype=np.int64).reshape(V, T)
    key, _, n = take().partition(" ")
    if key != "doc_topics":
        raise TopicModelError(f"{path}: missing doc_topics block")
    doc_ids, rows = [], []
    for _ in range(int(n)):
        doc_id, _, vals = take().partition("\t")
        doc_ids.append(doc_id)
        rows.append([float(x) for x in vals.split()])
    doc_topics = np.array(rows, dtype=np.float64).reshape(len(doc_ids), T)
    return TopicModel(
        config=config,
        vocabulary=vocab,
        word_topic_counts=nwt,
        topic_totals=nwt.sum(axis=0),
        doc_ids=doc_ids,
        doc_topics=doc_topics,
        source=source,
    )


def topic_lookup(model: TopicModel, docs: Mapping[str, Document]) -> Dict[str, np.ndarray]:
    """Topic vectors for every document in ``docs``."""
    return {doc_id: infer_doc_topics(model, doc).vector for doc_id, doc in docs.items()}
