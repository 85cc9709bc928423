"""Synthetic click logs with topical users and ambiguous queries.

Each document has a dominant latent topic and mentions one "entity" term;
entities are spread over every topic, so a query naming an entity matches
documents from several topics.  A user prefers one topic.  Among the shown
candidates the user clicks the document maximising

    affinity_weight * <user preference, doc topic mix> + overlap_weight * query overlap

or, with probability ``click_noise``, a uniformly random candidate.  Lexical
overlap therefore narrows the field and topical affinity picks the winner.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Tuple

import numpy as np

from .corpus import Document, Impression, Query, sort_impressions, write_docs, write_log

EPOCH_START = 1_141_171_200  # 2006-03-01 00:00 UTC
WEEK = 7 * 24 * 3600


class SyntheticSpecError(ValueError):
    pass


@dataclass
class SyntheticSpec:
    user_count: int = 60
    true_topic_count: int = 5
    vocab_size: int = 600
    docs_per_user: int = 30  # logged impressions (one click each) per user
    candidates_per_impression: int = 10
    click_noise: float = 0.1
    seed: int = 7
    doc_count: int = 600
    doc_length: int = 40
    entity_count: int = 20
    preference_focus: float = 0.8
    weeks: int = 13
    affinity_weight: float = 4.0
    overlap_weight: float = 2.0

    def __post_init__(self):
        counts = (self.user_count, self.true_topic_count, self.vocab_size, self.docs_per_user,
                  self.candidates_per_impression, self.doc_count, self.doc_length, self.entity_count, self.weeks)
        if min(counts) < 1:
            raise SyntheticSpecError("all counts must be >= 1")
        if not 0.0 <= self.click_noise < 1.0:
            raise SyntheticSpecError("click_noise must lie in [0, 1)")
        if not 0.0 < self.preference_focus <= 1.0:
            raise SyntheticSpecError("preference_focus must lie in (0, 1]")
        # every topic needs a few words of its own besides the entity block
        if self.vocab_size < self.entity_count + 5 * self.true_topic_count:
            raise SyntheticSpecError(
                f"vocab_size={self.vocab_size} too small for {self.true_topic_count} topics "
                f"and {self.entity_count} entity terms"
            )
        if self.candidates_per_impression > self.doc_count:
            raise SyntheticSpecError("more candidates per impression than documents")


@dataclass
class SyntheticCorpus:
    docs: Dict[str, Document]
    impressions: List[Impression]
    doc_topic: Dict[str, int]  # dominant topic per document
    user_topic: Dict[str, int]  # preferred topic per user
    entities: List[str]

    def write(self, out_dir) -> Tuple[Path, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        log_path, docs_path = out / "log.tsv", out / "docs.tsv"
        write_docs(self.docs, docs_path)
        write_log(self.impressions, log_path)
        return log_path, docs_path


def _topic_word_dists(spec: SyntheticSpec, rng: np.random.Generator) -> np.ndarray:
    """Each topic owns a contiguous block of the non-entity vocabulary."""
    K = spec.true_topic_count
    n_words = spec.vocab_size - spec.entity_count
    blocks = np.array_split(np.arange(n_words), K)
    dists = np.zeros((K, n_words))
    for k, block in enumerate(blocks):
        dists[k, block] = rng.dirichlet(np.full(len(block), 0.5))
    return dists


def generate_synthetic(spec: SyntheticSpec) -> SyntheticCorpus:
    rng = np.random.default_rng(spec.seed)
    K = spec.true_topic_count
    width = len(str(spec.vocab_size))
    words = [f"w{i:0{width}d}" for i in range(spec.vocab_size - spec.entity_count)]
    entities = [f"e{i:0{len(str(spec.entity_count))}d}" for i in range(spec.entity_count)]
    word_dists = _topic_word_dists(spec, rng)

    docs: Dict[str, Document] = {}
    doc_topic: Dict[str, int] = {}
    doc_mix = np.zeros((spec.doc_count, K))
    doc_entity = np.zeros(spec.doc_count, dtype=np.int64)
    dw = len(str(spec.doc_count))
    for j in range(spec.doc_count):
        main = j % K
        mix = 0.15 * rng.dirichlet(np.ones(K))
        mix[main] += 0.85
        doc_mix[j] = mix
        topics = rng.choice(K, size=spec.doc_length, p=mix)
        word_ids = np.empty(spec.doc_length, dtype=np.int64)
        for t in np.unique(topics):
            slots = np.flatnonzero(topics == t)
            word_ids[slots] = rng.choice(len(words), size=len(slots), p=word_dists[t])
        tokens = [words[i] for i in word_ids]
        ent = (j // K) % spec.entity_count
        doc_entity[j] = ent
        for _ in range(2):
            tokens.insert(int(rng.integers(len(tokens) + 1)), entities[ent])
        doc_id = f"d{j:0{dw}d}"
        docs[doc_id] = Document(doc_id, tuple(tokens))
        doc_topic[doc_id] = main
    doc_ids = list(docs)
    by_entity = [np.flatnonzero(doc_entity == e) for e in range(spec.entity_count)]

    impressions: List[Impression] = []
    user_topic: Dict[str, int] = {}
    uw = len(str(spec.user_count))
    span = spec.weeks * WEEK
    n_cand = spec.candidates_per_impression
    for u in range(spec.user_count):
        user = f"u{u:0{uw}d}"
        main = u % K
        user_topic[user] = main
        pref = (1.0 - spec.preference_focus) * rng.dirichlet(np.ones(K))
        pref[main] += spec.preference_focus
        times = np.sort(rng.integers(0, span, size=spec.docs_per_user))
        for ts in times:
            ent = int(rng.integers(spec.entity_count))
            matching = by_entity[ent]
            own = matching[matching % K == main]
            n_match = min(len(matching), max(1, n_cand // 2))
            picked = list(rng.choice(matching, size=n_match, replace=False))
            if len(own) and not any(p % K == main for p in picked):
                picked[0] = int(rng.choice(own))
            others = np.setdiff1d(np.arange(spec.doc_count), matching)
            n_rest = min(n_cand - len(picked), len(others))
            picked += list(rng.choice(others, size=n_rest, replace=False))
            cand = [int(c) for c in rng.permutation(picked)]
            if rng.random() < spec.click_noise:
                click = cand[int(rng.integers(len(cand)))]
            else:
                utility = [
                    spec.affinity_weight * float(pref @ doc_mix[c])
                    + spec.overlap_weight * float(doc_entity[c] == ent)
                    for c in cand
                ]
                click = cand[int(np.argmax(utility))]
            query = Query((entities[ent],), user, EPOCH_START + int(ts))
            impressions.append(
                Impression(query, tuple(doc_ids[c] for c in cand), frozenset([doc_ids[click]]), seq=len(impressions))
            )
    return SyntheticCorpus(docs, sort_impressions(impressions), doc_topic, user_topic, entities)
