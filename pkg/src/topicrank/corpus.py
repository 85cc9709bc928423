"""Click-log ingestion, tokenization and chronological partitioning.

Two TSV inputs are understood:

* click log, one impression per row::

      user_id <TAB> timestamp <TAB> query text <TAB> d1,d2,d3 <TAB> d2

* document table::

      doc_id <TAB> document text
"""

from __future__ import annotations

import logging
import string
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Sequence, Set, Tuple

logger = logging.getLogger(__name__)

MAX_QUERY_LEN = 10
MAX_DOC_LEN = 500
DEFAULT_HISTORY_FRACTION = 0.38
DEFAULT_RATIOS = (6, 1, 1)

PARTITIONS = ("history", "train", "validation", "test")

_PUNCT_TABLE = str.maketrans({c: " " for c in string.punctuation})


class CorpusError(ValueError):
    """Malformed or inconsistent input data."""


def tokenize(text: str, max_len: int | None = None) -> Tuple[str, ...]:
    """Lowercase, split on whitespace and ASCII punctuation, keep a prefix."""
    tokens = text.lower().translate(_PUNCT_TABLE).split()
    if max_len is not None:
        tokens = tokens[:max_len]
    return tuple(tokens)


@dataclass(frozen=True)
class Document:
    doc_id: str
    tokens: Tuple[str, ...]


@dataclass(frozen=True)
class Query:
    tokens: Tuple[str, ...]
    user_id: str
    timestamp: int

    @property
    def text(self) -> str:
        return " ".join(self.tokens)


@dataclass(frozen=True)
class Impression:
    query: Query
    candidates: Tuple[str, ...]
    clicked: frozenset
    seq: int = field(default=0, compare=False)  # source line, for tie-breaking

    @property
    def user_id(self) -> str:
        return self.query.user_id

    @property
    def timestamp(self) -> int:
        return self.query.timestamp

    @property
    def unclicked(self) -> Tuple[str, ...]:
        return tuple(d for d in self.candidates if d not in self.clicked)

    def describe(self) -> str:
        return f"impression #{self.seq} (user {self.user_id!r}, query {self.query.text!r})"


@dataclass
class SplitCorpus:
    history: Dict[str, List[Impression]]
    train: List[Impression]
    validation: List[Impression]
    test: List[Impression]
    # users with post-history impressions but nothing in history
    cold_users: Set[str] = field(default_factory=set)

    def partition(self, name: str) -> List[Impression]:
        if name == "history":
            return [imp for user in sorted(self.history) for imp in self.history[user]]
        if name in ("train", "validation", "test"):
            return getattr(self, name)
        raise KeyError(f"unknown partition {name!r}; expected one of {PARTITIONS}")

    @property
    def users(self) -> List[str]:
        seen = set(self.history)
        for imp in self.train + self.validation + self.test:
            seen.add(imp.user_id)
        return sorted(seen)


def _split_ids(field_text: str) -> Tuple[str, ...]:
    return tuple(x.strip() for x in field_text.split(",") if x.strip())


def parse_log_row(line: str, lineno: int, max_query_len: int = MAX_QUERY_LEN) -> Impression:
    parts = line.rstrip("\r\n").split("\t")
    if len(parts) != 5:
        raise CorpusError(f"line {lineno}: expected 5 tab-separated columns, got {len(parts)}")
    user_id, ts, text, cands, clicks = parts
    if not user_id:
        raise CorpusError(f"line {lineno}: empty user_id")
    try:
        timestamp = int(ts)
    except ValueError:
        raise CorpusError(f"line {lineno}: timestamp {ts!r} is not an integer") from None
    candidates = _split_ids(cands)
    if not candidates:
        raise CorpusError(f"line {lineno}: empty candidate list")
    if len(set(candidates)) != len(candidates):
        raise CorpusError(f"line {lineno}: duplicate doc_id in candidate list")
    clicked = frozenset(_split_ids(clicks))
    query = Query(tokenize(text, max_query_len), user_id, timestamp)
    imp = Impression(query, candidates, clicked, seq=lineno)
    stray = clicked.difference(candidates)
    if stray:
        raise CorpusError(
            f"line {lineno}: {imp.describe()} has clicked doc_id(s) "
            f"{sorted(stray)} not among its candidates"
        )
    return imp


def read_log(path, max_query_len: int = MAX_QUERY_LEN) -> List[Impression]:
    """Read a click log; rows are returned in time order (stable on ties)."""
    impressions = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            impressions.append(parse_log_row(line, lineno, max_query_len))
    return sort_impressions(impressions)


def read_docs(path, max_doc_len: int = MAX_DOC_LEN) -> Dict[str, Document]:
    docs: Dict[str, Document] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            parts = line.rstrip("\r\n").split("\t")
            if len(parts) != 2 or not parts[0]:
                raise CorpusError(f"line {lineno}: expected 'doc_id<TAB>text'")
            doc_id, text = parts
            if doc_id in docs:
                logger.debug("duplicate doc_id %s on line %d ignored", doc_id, lineno)
                continue
            docs[doc_id] = Document(doc_id, tokenize(text, max_doc_len))
    return docs


def ingest(
    log_path,
    docs_path,
    max_query_len: int = MAX_QUERY_LEN,
    max_doc_len: int = MAX_DOC_LEN,
) -> Tuple[Dict[str, Document], List[Impression]]:
    docs = read_docs(docs_path, max_doc_len)
    impressions = read_log(log_path, max_query_len)
    for imp in impressions:
        missing = [d for d in imp.candidates if d not in docs]
        if missing:
            raise CorpusError(f"{imp.describe()} references unknown doc_id(s) {missing[:5]}")
    return docs, impressions


def sort_impressions(impressions: Iterable[Impression]) -> List[Impression]:
    return sorted(impressions, key=lambda imp: (imp.timestamp, imp.user_id, imp.seq))


def format_log_row(imp: Impression) -> str:
    clicked = [d for d in imp.candidates if d in imp.clicked]
    return "\t".join(
        [imp.user_id, str(imp.timestamp), imp.query.text, ",".join(imp.candidates), ",".join(clicked)]
    )


def write_log(impressions: Iterable[Impression], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for imp in impressions:
            fh.write(format_log_row(imp) + "\n")


def write_docs(docs: Mapping[str, Document], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for doc in docs.values():
            fh.write(f"{doc.doc_id}\t{' '.join(doc.tokens)}\n")


def split(
    impressions: Sequence[Impression],
    history_fraction: float = DEFAULT_HISTORY_FRACTION,
    ratios: Tuple[int, int, int] = DEFAULT_RATIOS,
) -> SplitCorpus:
    """Cut history at a fraction of the log's time span, then split the rest 6:1:1 by time.

    Validation and test sizes are floored; train takes the remainder.
    """
    if not 0.0 < history_fraction < 1.0:
        raise ValueError("history_fraction must lie in (0, 1)")
    if len(ratios) != 3 or min(ratios) < 0 or sum(ratios) <= 0:
        raise ValueError("ratios must be three non-negative numbers with positive sum")
    ordered = sort_impressions(impressions)
    history: Dict[str, List[Impression]] = {}
    rest: List[Impression] = []
    if ordered:
        t0, t1 = ordered[0].timestamp, ordered[-1].timestamp
        cutoff = t0 + history_fraction * (t1 - t0)
        for imp in ordered:
            if imp.timestamp < cutoff:
                history.setdefault(imp.user_id, []).append(imp)
            else:
                rest.append(imp)

    n = len(rest)
    total = sum(ratios)
    n_val = n * ratios[1] // total
    n_test = n * ratios[2] // total
    n_train = n - n_val - n_test
    train = rest[:n_train]
    validation = rest[n_train:n_train + n_val]
    test = rest[n_train + n_val:]

    cold = {imp.user_id for imp in rest} - set(history)
    if cold:
        logger.info("%d user(s) have no history impressions", len(cold))
    return SplitCorpus(history, train, validation, test, cold)


def write_split(corpus: SplitCorpus, docs: Mapping[str, Document], out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_docs(docs, out / "docs.tsv")
    for name in PARTITIONS:
        write_log(corpus.partition(name), out / f"{name}.tsv")


def read_split(corpus_dir, max_query_len: int = MAX_QUERY_LEN, max_doc_len: int = MAX_DOC_LEN):
    """Load a directory written by :func:`write_split` as ``(docs, SplitCorpus)``."""
    src = Path(corpus_dir)
    docs = read_docs(src / "docs.tsv", max_doc_len)
    parts = {name: read_log(src / f"{name}.tsv", max_query_len) for name in PARTITIONS}
    history: Dict[str, List[Impression]] = {}
    for imp in parts["history"]:
        history.setdefault(imp.user_id, []).append(imp)
    rest_users = {imp.user_id for name in PARTITIONS[1:] for imp in parts[name]}
    return docs, SplitCorpus(
        history, parts["train"], parts["validation"], parts["test"], rest_users - set(history)
    )
