"""Affine scoring head over [interest; semantic] features, trained pairwise.

The head is a single dense layer, ``score = w . f + b``.  Training draws
(clicked, unclicked) pairs from the same impression and minimises the hinge
``max(0, margin - s+ + s-)`` with Adam; after every epoch the head is scored
by validation MRR and the best epoch is kept.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from .corpus import Impression, Query, SplitCorpus
from .evaluation import evaluate
from .matching import KernelBank

logger = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1

# (user_id, query tokens, doc_id) -> concatenated feature vector
FeatureFn = Callable[[str, Tuple[str, ...], str], np.ndarray]


class NumericError(ArithmeticError):
    pass


class CheckpointError(ValueError):
    pass


@dataclass
class ScoringHead:
    weights: np.ndarray
    bias: float = 0.0

    @property
    def dim(self) -> int:
        return self.weights.shape[0]

    @classmethod
    def initial(cls, dim: int, rng: np.random.Generator, scale: float = 0.01) -> "ScoringHead":
        return cls(rng.uniform(-scale, scale, size=dim), 0.0)

    def __call__(self, features) -> float:
        f = np.asarray(features, dtype=np.float64)
        if f.shape != self.weights.shape:
            raise ValueError(f"feature length {f.shape[0] if f.ndim else 0} != head dimension {self.dim}")
        return float(self.weights @ f + self.bias)

    def copy(self) -> "ScoringHead":
        return ScoringHead(self.weights.copy(), self.bias)


def score(head: ScoringHead, theta, phi) -> float:
    return head(np.concatenate([np.asarray(theta, dtype=np.float64), np.asarray(phi, dtype=np.float64)]))


def hinge_loss(s_pos: float, s_neg: float, margin: float = 1.0) -> float:
    # np.maximum keeps NaN; the builtin max would turn it into 0
    return float(np.maximum(0.0, margin - s_pos + s_neg))


def pair_gradient(head: ScoringHead, f_pos, f_neg, margin: float = 1.0):
    """Hinge loss of one pair and its gradient in (weights, bias).

    The bias cancels in the score difference, so its gradient is always 0.
    """
    f_pos = np.asarray(f_pos, dtype=np.float64)
    f_neg = np.asarray(f_neg, dtype=np.float64)
    loss = hinge_loss(head(f_pos), head(f_neg), margin)
    if loss > 0.0:
        return loss, f_neg - f_pos, 0.0
    return loss, np.zeros_like(head.weights), 0.0


@dataclass
class TrainConfig:
    epochs: int = 10
    batches_per_epoch: int = 16
    pairs_per_batch: int = 8
    learning_rate: float = 1e-3
    optimizer: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    margin: float = 1.0
    seed: int = 7
    init_scale: float = 0.01
    scale_epoch: bool = False  # grow batches per epoch to cover every eligible impression

    def __post_init__(self):
        if min(self.epochs, self.batches_per_epoch, self.pairs_per_batch) < 1:
            raise ValueError("epochs, batches_per_epoch and pairs_per_batch must be >= 1")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if not self.margin > 0:
            raise ValueError("margin must be > 0")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")


@dataclass(frozen=True)
class TrainingPair:
    user_id: str
    query: Query
    positive: str
    negative: str


def eligible_impressions(impressions: Sequence[Impression]) -> List[Impression]:
    return [imp for imp in impressions if imp.clicked and len(imp.clicked) < len(imp.candidates)]


def sample_pairs(
    impressions: Sequence[Impression], config: TrainConfig, rng: np.random.Generator
) -> List[List[TrainingPair]]:
    """One epoch of pair batches: pick an impression uniformly, then a clicked and an unclicked doc."""
    pool = eligible_impressions(impressions)
    if not pool:
        raise ValueError("no impression has both a clicked and an unclicked candidate")
    n_batches = config.batches_per_epoch
    if config.scale_epoch:
        n_batches = max(n_batches, math.ceil(len(pool) / config.pairs_per_batch))
    batches = []
    for _ in range(n_batches):
        batch = []
        for _ in range(config.pairs_per_batch):
            imp = pool[rng.integers(len(pool))]
            pos = sorted(imp.clicked)
            neg = imp.unclicked
            batch.append(
                TrainingPair(imp.user_id, imp.query, pos[rng.integers(len(pos))], neg[rng.integers(len(neg))])
            )
        batches.append(batch)
    return batches


class _Adam:
    def __init__(self, dim: int, config: TrainConfig):
        self.cfg = config
        self.m = np.zeros(dim + 1)
        self.v = np.zeros(dim + 1)
        self.t = 0

    def step(self, grad: np.ndarray) -> np.ndarray:
        c = self.cfg
        self.t += 1
        self.m = c.beta1 * self.m + (1 - c.beta1) * grad
        self.v = c.beta2 * self.v + (1 - c.beta2) * grad * grad
        m_hat = self.m / (1 - c.beta1 ** self.t)
        v_hat = self.v / (1 - c.beta2 ** self.t)
        return c.learning_rate * m_hat / (np.sqrt(v_hat) + c.adam_eps)


def rank(head: ScoringHead, features: FeatureFn, user_id: str, query, candidates: Sequence[str]):
    """Candidates with scores, best first; equal scores fall back to doc_id order."""
    if not candidates:
        raise ValueError("no candidates to rank")
    tokens = tuple(query.tokens if isinstance(query, Query) else query)
    scored = [(d, head(features(user_id, tokens, d))) for d in candidates]
    return sorted(scored, key=lambda item: (-item[1], item[0]))


def ranking_fn(head: ScoringHead, features: FeatureFn):
    return lambda imp: [d for d, _ in rank(head, features, imp.user_id, imp.query, imp.candidates)]


@dataclass
class EpochLog:
    epoch: int
    mean_loss: float
    active_pairs: int
    pairs: int
    val_mrr: float


@dataclass
class TrainResult:
    head: ScoringHead
    initial: ScoringHead
    best_epoch: int
    log: List[EpochLog] = field(default_factory=list)


def train(
    corpus: SplitCorpus,
    features: FeatureFn,
    config: TrainConfig,
    dim: Optional[int] = None,
) -> TrainResult:
    """Mini-batch pairwise training, keeping the epoch with the best validation MRR.

    Ties in validation MRR keep the earliest epoch.
    """
    rng = np.random.default_rng(config.seed)
    pool = eligible_impressions(corpus.train)
    if not pool:
        raise ValueError("training partition has no impression with both clicked and unclicked candidates")
    if dim is None:
        imp = pool[0]
        dim = len(features(imp.user_id, imp.query.tokens, imp.candidates[0]))
    head = ScoringHead.initial(dim, rng, config.init_scale)
    initial = head.copy()
    adam = _Adam(dim, config) if config.optimizer == "adam" else None
    validation = [imp for imp in corpus.validation if imp.clicked]

    best, best_mrr, best_epoch = head.copy(), -math.inf, 0
    log: List[EpochLog] = []
    for epoch in range(1, config.epochs + 1):
        batches = sample_pairs(pool, config, rng)
        losses, active = [], 0
        for batch in batches:
            grad = np.zeros(dim + 1)
            batch_loss = 0.0
            for pair in batch:
                f_pos = features(pair.user_id, pair.query.tokens, pair.positive)
                f_neg = features(pair.user_id, pair.query.tokens, pair.negative)
                loss, g_w, g_b = pair_gradient(head, f_pos, f_neg, config.margin)
                if not math.isfinite(loss):
                    raise NumericError(
                        f"non-finite loss {loss} at epoch {epoch} for user {pair.user_id!r}, "
                        f"docs {pair.positive!r}/{pair.negative!r}"
                    )
                batch_loss += loss
                active += loss > 0.0
                grad[:-1] += g_w
                grad[-1] += g_b
            grad /= len(batch)
            losses.append(batch_loss / len(batch))
            update = adam.step(grad) if adam is not None else config.learning_rate * grad
            head.weights -= update[:-1]
            head.bias -= update[-1]
        if validation:
            val_mrr = evaluate(validation, ranking_fn(head, features)).mrr
        else:
            val_mrr = float("nan")
        n_pairs = sum(len(b) for b in batches)
        log.append(EpochLog(epoch, float(np.mean(losses)), int(active), n_pairs, val_mrr))
        logger.info("epoch %d loss %.4f val MRR %.4f", epoch, log[-1].mean_loss, val_mrr)
        # without a validation set the last epoch wins
        if not validation or val_mrr > best_mrr:
            best, best_mrr, best_epoch = head.copy(), val_mrr, epoch
    return TrainResult(best, initial, best_epoch, log)


def write_train_log(log: Sequence[EpochLog], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("epoch,mean_loss,active_pairs,pairs,val_mrr\n")
        for e in log:
            fh.write(f"{e.epoch},{e.mean_loss!r},{e.active_pairs},{e.pairs},{e.val_mrr!r}\n")


# --- checkpoints ------------------------------------------------------------

@dataclass
class Checkpoint:
    head: ScoringHead
    bank: KernelBank
    n_layers: int
    n_topics: int


def save_head(head: ScoringHead, path, bank: KernelBank, n_layers: int, n_topics: int) -> None:
    expected = bank.size * (1 + n_layers)
    if head.dim != expected:
        raise CheckpointError(f"head dimension {head.dim} != Z*(1+L) = {expected}")
    lines = [
        "# topicrank scoring head",
        f"version {CHECKPOINT_VERSION}",
        f"dim {head.dim}",
        f"L {n_layers}",
        f"T {n_topics}",
        "kernel_bank " + " ".join(f"{m!r}:{s!r}" for m, s in zip(bank.mus, bank.sigmas)),
        "weights " + " ".join(repr(float(w)) for w in head.weights),
        f"bias {float(head.bias)!r}",
    ]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_head(path, n_layers: Optional[int] = None, bank: Optional[KernelBank] = None) -> Checkpoint:
    """Read a checkpoint; if ``n_layers``/``bank`` are given they must match it."""
    fields_ = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line or line.startswith("#"):
            continue
        key, _, val = line.partition(" ")
        fields_[key] = val
    try:
        version = int(fields_["version"])
        dim = int(fields_["dim"])
        L = int(fields_["L"])
        T = int(fields_["T"])
        pairs = [kv.split(":") for kv in fields_["kernel_bank"].split()]
        ckpt_bank = KernelBank(tuple(float(m) for m, _ in pairs), tuple(float(s) for _, s in pairs))
        weights = np.array([float(w) for w in fields_["weights"].split()])
        bias = float(fields_["bias"])
    except (KeyError, ValueError) as exc:
        raise CheckpointError(f"{path}: malformed checkpoint ({exc})") from None
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    if weights.shape[0] != dim or dim != ckpt_bank.size * (1 + L):
        raise CheckpointError(f"{path}: dim {dim} inconsistent with {weights.shape[0]} weights, L={L}")
    if n_layers is not None and n_layers != L:
        raise CheckpointError(f"{path}: checkpoint has L={L}, pipeline has L={n_layers}")
    if bank is not None and bank != ckpt_bank:
        raise CheckpointError(f"{path}: kernel bank differs from the pipeline's")
    return Checkpoint(ScoringHead(weights, bias), ckpt_bank, L, T)
