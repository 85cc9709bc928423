"""User topical profiles: the mean topic vector of a user's clicked history."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, Iterable, List, Mapping, Sequence, Tuple, Union

import numpy as np

from .corpus import Impression, SplitCorpus

logger = logging.getLogger(__name__)

TopicLookup = Union[Mapping[str, np.ndarray], Callable[[str], np.ndarray]]


class ProfileError(KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else ""


@dataclass(frozen=True)
class ClickHistory:
    user_id: str
    docs: Tuple[str, ...]  # sorted; repeats only when built as a multiset


@dataclass
class UserProfile:
    user_id: str
    vector: np.ndarray
    cold_start: bool = False


def click_histories(
    history: Mapping[str, Sequence[Impression]],
    users: Iterable[str] = (),
    multiset: bool = False,
) -> Dict[str, ClickHistory]:
    """Per-user clicked documents from history impressions.

    ``users`` lists extra users (e.g. cold-start ones) who should get an
    empty history.
    """
    out = {}
    for user in sorted(set(history) | set(users)):
        clicks: List[str] = []
        for imp in history.get(user, ()):
            clicks.extend(d for d in imp.candidates if d in imp.clicked)
        if not multiset:
            clicks = sorted(set(clicks))
        else:
            clicks.sort()
        out[user] = ClickHistory(user, tuple(clicks))
    return out


def histories_from_corpus(corpus: SplitCorpus, multiset: bool = False) -> Dict[str, ClickHistory]:
    return click_histories(corpus.history, corpus.users, multiset)


def _resolve(lookup: TopicLookup, doc_id: str) -> np.ndarray:
    try:
        if callable(lookup):
            return np.asarray(lookup(doc_id), dtype=np.float64)
        return np.asarray(lookup[doc_id], dtype=np.float64)
    except KeyError:
        raise ProfileError(f"doc_id {doc_id!r} has no topic distribution") from None


def build_profile(history: ClickHistory, lookup: TopicLookup, n_topics: int) -> UserProfile:
    if not history.docs:
        return UserProfile(history.user_id, np.full(n_topics, 1.0 / n_topics), cold_start=True)
    total = np.zeros(n_topics)
    for doc_id in history.docs:
        vec = _resolve(lookup, doc_id)
        if vec.shape != (n_topics,):
            raise ProfileError(f"doc_id {doc_id!r}: topic vector has shape {vec.shape}, expected ({n_topics},)")
        total += vec
    return UserProfile(history.user_id, total / len(history.docs))


def build_profiles(
    histories: Mapping[str, ClickHistory], lookup: TopicLookup, n_topics: int
) -> Dict[str, UserProfile]:
    profiles = {u: build_profile(h, lookup, n_topics) for u, h in histories.items()}
    n_cold = sum(p.cold_start for p in profiles.values())
    if n_cold:
        logger.info("%d cold-start user(s) given the uniform profile", n_cold)
    return profiles


def write_profiles(profiles: Mapping[str, UserProfile], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for user in sorted(profiles):
            p = profiles[user]
            fh.write(user + "\t" + "\t".join(repr(float(x)) for x in p.vector) + "\n")


def read_profiles(path) -> Dict[str, UserProfile]:
    profiles = {}
    width = None
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        user, *vals = line.split("\t")
        if width is None:
            width = len(vals)
        if len(vals) != width or width < 2:
            raise ProfileError(f"{path}:{lineno}: expected {width} topic weights, got {len(vals)}")
        vec = np.array([float(v) for v in vals])
        profiles[user] = UserProfile(user, vec, cold_start=bool(np.all(vec == vec[0])))
    return profiles


@dataclass
class ScatterPoint:
    user_id: str
    x: float
    y: float


def export_profile_scatter(profiles: Sequence[UserProfile]) -> Tuple[List[ScatterPoint], bool]:
    """Project profiles onto their top two principal components.

    Each component's sign is fixed so its largest-magnitude loading is
    positive.  Returns the points and a flag that is True when the profiles
    have no variance at all (every coordinate is then zero).
    """
    if len(profiles) < 2:
        raise ValueError("need at least two profiles")
    X = np.vstack([p.vector for p in profiles]).astype(np.float64)
    if X.shape[1] < 2:
        raise ValueError("profiles must have at least two topics")
    Xc = X - X.mean(axis=0)
    cov = Xc.T @ Xc / (len(X) - 1)
    if not np.any(np.abs(cov) > 1e-15):
        logger.warning("all profiles identical; scatter is degenerate")
        return [ScatterPoint(p.user_id, 0.0, 0.0) for p in profiles], True
    evals, evecs = np.linalg.eigh(cov)
    comps = evecs[:, np.argsort(evals)[::-1][:2]]
    for c in range(2):
        lead = np.argmax(np.abs(comps[:, c]))
        if comps[lead, c] < 0:
            comps[:, c] = -comps[:, c]
    coords = Xc @ comps
    return [ScatterPoint(p.user_id, float(x), float(y)) for p, (x, y) in zip(profiles, coords)], False


def write_scatter(points: Sequence[ScatterPoint], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("user_id,x,y\n")
        for pt in points:
            fh.write(f"{pt.user_id},{pt.x!r},{pt.y!r}\n")
