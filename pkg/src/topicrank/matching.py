"""Gaussian kernel pooling over cosine similarities.

Two feature blocks feed the scorer:

* interest features: one cosine between the user profile and the document's
  topic vector, passed through every kernel and logged (length Z);
* semantic features: per layer, the query-by-document cosine matrix is
  soft-counted per query token by every kernel, logged, and summed over
  query tokens; layers are concatenated shallow to deep (length L*Z).

Logs are floored at ``EPS`` so kernels far from every similarity value give
``log(EPS)`` instead of ``-inf``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np

from .embeddings import EmbeddingError, LayeredEmbeddings

EPS = 1e-10
LOG_EPS = math.log(EPS)


class DegenerateVectorWarning(RuntimeWarning):
    """A zero vector took part in a cosine; its similarity was set to 0."""


@dataclass(frozen=True)
class KernelBank:
    mus: Tuple[float, ...]
    sigmas: Tuple[float, ...]

    def __post_init__(self):
        if len(self.mus) < 1 or len(self.mus) != len(self.sigmas):
            raise ValueError("need Z >= 1 kernels with one sigma per mu")
        if any(not s > 0 for s in self.sigmas):
            raise ValueError("kernel widths must be positive")

    @classmethod
    def default(cls) -> "KernelBank":
        """Ten soft-match kernels at -0.9..0.9 (sigma 0.1) plus an exact-match kernel at 1.0."""
        mus = tuple(round(-0.9 + 0.2 * i, 1) for i in range(10)) + (1.0,)
        sigmas = (0.1,) * 10 + (1e-3,)
        return cls(mus, sigmas)

    @property
    def size(self) -> int:
        return len(self.mus)

    @property
    def mu(self) -> np.ndarray:
        return np.asarray(self.mus, dtype=np.float64)

    @property
    def sigma(self) -> np.ndarray:
        return np.asarray(self.sigmas, dtype=np.float64)

    def __call__(self, m) -> np.ndarray:
        """Kernel values for similarity ``m`` (scalar or array); kernels on the last axis."""
        m = np.asarray(m, dtype=np.float64)[..., None]
        return np.exp(-((m - self.mu) ** 2) / (2.0 * self.sigma ** 2))


def cosine(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"length mismatch: {a.shape} vs {b.shape}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        warnings.warn("cosine of a zero vector; using 0", DegenerateVectorWarning, stacklevel=2)
        return 0.0
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


def interest_features(profile, doc_topics, bank: KernelBank) -> np.ndarray:
    """log-kernel response to cos(profile, doc topics); length ``bank.size``."""
    m = cosine(profile, doc_topics)
    return np.log(np.maximum(bank(m), EPS))


def _unit_rows(x: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(x, axis=-1, keepdims=True)
    if np.any(norms == 0.0):
        warnings.warn("zero token vector in translation matrix; its cosines are 0",
                      DegenerateVectorWarning, stacklevel=3)
    return np.divide(x, norms, out=np.zeros_like(x), where=norms > 0)


def translation_matrix(q_emb, d_emb) -> np.ndarray:
    """Cosine between every query token (rows) and document token (columns) of one layer."""
    q = np.asarray(q_emb, dtype=np.float64)
    d = np.asarray(d_emb, dtype=np.float64)
    if q.shape[-1] != d.shape[-1]:
        raise ValueError(f"embedding widths differ: {q.shape[-1]} vs {d.shape[-1]}")
    return np.clip(_unit_rows(q) @ np.swapaxes(_unit_rows(d), -1, -2), -1.0, 1.0)


def semantic_features(q: LayeredEmbeddings, d: LayeredEmbeddings, bank: KernelBank) -> np.ndarray:
    if q.n_layers != d.n_layers:
        raise EmbeddingError(f"layer count mismatch: query {q.n_layers}, document {d.n_layers}")
    M = translation_matrix(q.layers, d.layers)  # (L, m, n)
    soft_tf = bank(M).sum(axis=2)  # (L, m, Z)
    return np.log(np.maximum(soft_tf, EPS)).sum(axis=1).ravel()


def layer_activations(phi: np.ndarray, bank: KernelBank) -> np.ndarray:
    """Reshape a semantic feature vector to ``(layers, kernels)``."""
    return np.asarray(phi).reshape(-1, bank.size)


def export_kernel_heatmaps(pipeline, user_id: str, query: Sequence[str], doc_ids: Sequence[str]):
    """Kernel activations for one user/query over ``doc_ids``.

    ``pipeline`` must provide ``interest_features(user_id, doc_id)``,
    ``semantic_features(query, doc_id)`` and ``bank``.  Returns
    ``(interest_rows, layer_rows)``: ``(doc_id, kernel_mu, value)`` for each
    document and kernel, and ``(layer, kernel_mu, value)`` with the value
    averaged over the documents.
    """
    bank = pipeline.bank
    interest_rows: List[Tuple[str, float, float]] = []
    layer_sum = None
    for doc_id in doc_ids:
        theta = pipeline.interest_features(user_id, doc_id)
        interest_rows.extend((doc_id, mu, float(v)) for mu, v in zip(bank.mus, theta))
        acts = layer_activations(pipeline.semantic_features(query, doc_id), bank)
        layer_sum = acts if layer_sum is None else layer_sum + acts
    layer_rows: List[Tuple[int, float, float]] = []
    if layer_sum is not None:
        mean = layer_sum / len(doc_ids)
        for layer in range(mean.shape[0]):
            layer_rows.extend((layer + 1, mu, float(v)) for mu, v in zip(bank.mus, mean[layer]))
    return interest_rows, layer_rows


def write_heatmap_csv(rows, header: str, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(header + "\n")
        for key, mu, value in rows:
            fh.write(f"{key},{mu!r},{value!r}\n")
