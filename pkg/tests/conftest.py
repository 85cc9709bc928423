import numpy as np
import pytest

from topicrank.corpus import Document, Impression, Query, SplitCorpus


def make_impression(user, ts, query, candidates, clicked, seq=0):
    return Impression(Query(tuple(query.split()), user, ts), tuple(candidates), frozenset(clicked), seq=seq)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def tiny_docs():
    texts = {
        "d1": "red apple fruit sweet",
        "d2": "green apple fruit sour",
        "d3": "fast car engine road",
        "d4": "slow car wheel road",
    }
    return {k: Document(k, tuple(v.split())) for k, v in texts.items()}


@pytest.fixture
def tiny_split():
    hist = {
        "u1": [make_impression("u1", 1, "apple", ["d1", "d3"], ["d1"])],
        "u2": [make_impression("u2", 2, "car", ["d3", "d1"], ["d3"])],
    }
    train = [
        make_impression("u1", 10, "apple", ["d1", "d2", "d3"], ["d2"]),
        make_impression("u2", 11, "road", ["d3", "d4", "d1"], ["d4"]),
    ]
    val = [make_impression("u1", 20, "fruit", ["d1", "d4"], ["d1"])]
    test = [make_impression("u2", 30, "car", ["d2", "d3"], ["d3"])]
    return SplitCorpus(hist, train, val, test, set())


def disjoint_topic_corpus(seed, n_topics=3, words_per_topic=20, docs_per_topic=30, doc_len=40):
    """Documents each drawn from one topic; topics have disjoint vocabularies.

    Returns the documents and, per topic, its words in descending probability.
    The first five words of a topic carry triple weight, so its top five is
    unambiguous rather than left to sampling noise.
    """
    g = np.random.default_rng(seed)
    weights = np.ones(words_per_topic)
    weights[:5] = 3.0
    weights /= weights.sum()
    vocab = [[f"k{k}w{i:02d}" for i in range(words_per_topic)] for k in range(n_topics)]
    docs = {}
    for k in range(n_topics):
        for j in range(docs_per_topic):
            idx = g.choice(words_per_topic, size=doc_len, p=weights)
            doc_id = f"t{k}d{j:03d}"
            docs[doc_id] = Document(doc_id, tuple(vocab[k][i] for i in idx))
    return docs, vocab


def top5_overlap(model, true_vocab):
    """Per true topic, top-5 overlap with its best-matched learned topic (one-to-one)."""
    from scipy.optimize import linear_sum_assignment

    learned = [set(model.top_words(t, 5)) for t in range(model.n_topics)]
    truth = [set(words[:5]) for words in true_vocab]
    overlap = np.array([[len(a & b) / 5 for b in learned] for a in truth])
    rows, cols = linear_sum_assignment(-overlap)
    return overlap[rows, cols]


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(results):
        terminalreporter.write_line(results[number])
