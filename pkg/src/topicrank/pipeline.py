"""Wiring of the ranking pipeline and the staged end-to-end run.

:class:`Pipeline` holds the trained upstream artifacts (documents, topic
model, profiles, embedding provider, kernel bank) and turns a
``(user, query, doc)`` triple into the concatenated feature vector the
scoring head consumes.  Topic vectors and semantic features are memoised.

:func:`run_pipeline` executes every stage into a work directory, skipping
stages whose outputs already exist unless ``force`` is set.
"""

from __future__ import annotations

import configparser
import dataclasses
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from . import corpus as corpus_mod
from .corpus import Document, Impression, SplitCorpus
from .embeddings import EmbeddingProviderConfig, make_provider
from .evaluation import MetricReport, evaluate, format_table, read_report, write_report
from .matching import KernelBank, export_kernel_heatmaps, interest_features, semantic_features, write_heatmap_csv
from .profiles import (
    UserProfile,
    build_profiles,
    export_profile_scatter,
    histories_from_corpus,
    read_profiles,
    write_profiles,
    write_scatter,
)
from .ranker import TrainConfig, TrainResult, load_head, ranking_fn, save_head, train, write_train_log
from .synthetic import SyntheticSpec, generate_synthetic
from .topics import TopicModel, TopicModelConfig, infer_doc_topics, load_model, save_model, train_lda

logger = logging.getLogger(__name__)

MODEL_NAMES = {False: "personalized", True: "semantic-only"}


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause


class Pipeline:
    def __init__(
        self,
        docs: Mapping[str, Document],
        topic_model: TopicModel,
        profiles: Mapping[str, UserProfile],
        provider,
        bank: Optional[KernelBank] = None,
        ablate_interest: bool = False,
    ):
        self.docs = docs
        self.topic_model = topic_model
        self.profiles = profiles
        self.provider = provider
        self.bank = bank or KernelBank.default()
        self.ablate_interest = ablate_interest
        self._topics: Dict[str, np.ndarray] = {}
        self._phi: Dict[Tuple[Tuple[str, ...], str], np.ndarray] = {}

    @property
    def n_layers(self) -> int:
        return self.provider.n_layers

    @property
    def n_topics(self) -> int:
        return self.topic_model.n_topics

    @property
    def feature_dim(self) -> int:
        return self.bank.size * (1 + self.n_layers)

    def with_ablation(self, ablate_interest: bool) -> "Pipeline":
        """Same artifacts and caches, different ablation switch."""
        other = Pipeline(self.docs, self.topic_model, self.profiles, self.provider, self.bank, ablate_interest)
        other._topics, other._phi = self._topics, self._phi
        return other

    def document(self, doc_id: str) -> Document:
        try:
            return self.docs[doc_id]
        except KeyError:
            raise KeyError(f"unknown doc_id {doc_id!r}") from None

    def doc_topics(self, doc_id: str) -> np.ndarray:
        vec = self._topics.get(doc_id)
        if vec is None:
            vec = infer_doc_topics(self.topic_model, self.document(doc_id)).vector
            self._topics[doc_id] = vec
        return vec

    def profile(self, user_id: str) -> np.ndarray:
        p = self.profiles.get(user_id)
        if p is None:
            return np.full(self.n_topics, 1.0 / self.n_topics)
        return p.vector

    def interest_features(self, user_id: str, doc_id: str) -> np.ndarray:
        return interest_features(self.profile(user_id), self.doc_topics(doc_id), self.bank)

    def semantic_features(self, query: Sequence[str], doc_id: str) -> np.ndarray:
        key = (tuple(query), doc_id)
        phi = self._phi.get(key)
        if phi is None:
            q, d = self.provider.embed_pair(key[0], self.document(doc_id))
            phi = semantic_features(q, d, self.bank)
            self._phi[key] = phi
        return phi

    def features(self, user_id: str, query: Sequence[str], doc_id: str) -> np.ndarray:
        phi = self.semantic_features(query, doc_id)
        if self.ablate_interest:
            theta = np.zeros(self.bank.size)
        else:
            theta = self.interest_features(user_id, doc_id)
        return np.concatenate([theta, phi])

    def preload_semantic(self, table: Mapping[Tuple[Tuple[str, ...], str], np.ndarray]) -> None:
        self._phi.update(table)


def topic_training_docs(docs: Mapping[str, Document], split: SplitCorpus) -> Dict[str, Document]:
    """Documents clicked in the history partition (all documents if there are none)."""
    clicked = sorted({d for imps in split.history.values() for imp in imps for d in imp.clicked})
    if not clicked:
        logger.warning("no history clicks; training the topic model on every document")
        return dict(docs)
    return {d: docs[d] for d in clicked}


def build_pipeline(
    docs: Mapping[str, Document],
    split: SplitCorpus,
    topic_config: TopicModelConfig,
    embedding_config: EmbeddingProviderConfig,
    bank: Optional[KernelBank] = None,
    multiset: bool = False,
) -> Pipeline:
    model = train_lda(topic_training_docs(docs, split), topic_config)
    pipe = Pipeline(docs, model, {}, make_provider(embedding_config), bank)
    pipe.profiles = build_profiles(histories_from_corpus(split, multiset), pipe.doc_topics, model.n_topics)
    return pipe


def fit_and_evaluate(
    pipe: Pipeline, split: SplitCorpus, train_config: TrainConfig, ablate_interest: bool = False
) -> Tuple[TrainResult, MetricReport]:
    """Train a head (optionally with interest features zeroed) and score it on the test partition."""
    p = pipe.with_ablation(ablate_interest)
    result = train(split, p.features, train_config, dim=p.feature_dim)
    report = evaluate([imp for imp in split.test if imp.clicked], ranking_fn(result.head, p.features))
    return result, report


# --- configuration ----------------------------------------------------------

@dataclass
class RunConfig:
    workdir: str = "run"
    log: str = ""  # empty -> generate a synthetic log
    docs: str = ""
    history_fraction: float = corpus_mod.DEFAULT_HISTORY_FRACTION
    max_query_len: int = corpus_mod.MAX_QUERY_LEN
    max_doc_len: int = corpus_mod.MAX_DOC_LEN
    multiset_profiles: bool = False
    synthetic: SyntheticSpec = field(default_factory=SyntheticSpec)
    topics: TopicModelConfig = field(default_factory=TopicModelConfig)
    embeddings: EmbeddingProviderConfig = field(default_factory=EmbeddingProviderConfig)
    training: TrainConfig = field(default_factory=TrainConfig)
    seed: Optional[int] = None  # overrides every component seed when set

    def __post_init__(self):
        if self.seed is not None:
            self.apply_seed(self.seed)

    def apply_seed(self, seed: int) -> None:
        self.seed = seed
        self.synthetic.seed = seed
        self.topics.seed = seed
        self.embeddings.seed = seed
        self.training.seed = seed

    def path(self, name: str) -> Path:
        return Path(self.workdir) / name


_SECTIONS = {"synthetic": SyntheticSpec, "topics": TopicModelConfig,
             "embeddings": EmbeddingProviderConfig, "train": TrainConfig}


def _coerce(value: str, current, name: str):
    if isinstance(current, bool):
        low = value.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"{name}: not a boolean: {value!r}")
    if isinstance(current, int):
        return int(value)
    if isinstance(current, float) or current is None:
        return None if value.strip().lower() == "none" else float(value)
    return value.strip()


def load_config(path=None, overrides: Optional[Mapping[str, str]] = None) -> RunConfig:
    """Read an INI config (sections ``run``, ``synthetic``, ``topics``, ``embeddings``, ``train``).

    ``overrides`` maps ``section.key`` to a string value and wins over the file.
    """
    parser = configparser.ConfigParser()
    if path is not None:
        if not parser.read(path, encoding="utf-8"):
            raise FileNotFoundError(f"config file {path} not found")
    for dotted, value in (overrides or {}).items():
        section, _, key = dotted.partition(".")
        if not parser.has_section(section):
            parser.add_section(section)
        parser.set(section, key, str(value))

    cfg = RunConfig()
    for section in parser.sections():
        if section == "run":
            target = cfg
        elif section in _SECTIONS:
            target = {"synthetic": cfg.synthetic, "topics": cfg.topics,
                      "embeddings": cfg.embeddings, "train": cfg.training}[section]
        else:
            raise ValueError(f"unknown config section [{section}]")
        names = {f.name for f in dataclasses.fields(target)}
        for key, value in parser.items(section):
            if key not in names:
                raise ValueError(f"unknown key {key!r} in [{section}]")
            current = 0 if (target is cfg and key == "seed") else getattr(target, key)
            setattr(target, key, _coerce(value, current, f"{section}.{key}"))
    # re-run validation on the mutated dataclasses
    cfg.synthetic = SyntheticSpec(**dataclasses.asdict(cfg.synthetic))
    topic_params = dataclasses.asdict(cfg.topics)
    if not parser.has_option("topics", "alpha"):
        topic_params["alpha"] = None
    cfg.topics = TopicModelConfig(**topic_params)
    cfg.embeddings = EmbeddingProviderConfig(**dataclasses.asdict(cfg.embeddings))
    cfg.training = TrainConfig(**dataclasses.asdict(cfg.training))
    if cfg.seed is not None:
        cfg.apply_seed(int(cfg.seed))
    return cfg


# --- staged run -------------------------------------------------------------

def save_semantic_table(table: Mapping[Tuple[Tuple[str, ...], str], np.ndarray], path) -> None:
    keys = sorted(table)
    np.savez(
        path,
        queries=np.array(["\x1f".join(q) for q, _ in keys], dtype=str),
        doc_ids=np.array([d for _, d in keys], dtype=str),
        phi=np.vstack([table[k] for k in keys]) if keys else np.zeros((0, 0)),
    )


def load_semantic_table(path) -> Dict[Tuple[Tuple[str, ...], str], np.ndarray]:
    with np.load(path) as data:
        return {
            (tuple(q.split("\x1f")), str(d)): row
            for q, d, row in zip(data["queries"], data["doc_ids"], data["phi"])
        }


@dataclass
class RunResult:
    report: MetricReport
    model_name: str
    report_path: Path
    stages_run: List[str]
    artifacts: Dict[str, Path]


def _stage(name: str, outputs: Sequence[Path], force: bool, ran: List[str]):
    """True when the stage must run."""
    if force or not all(p.exists() for p in outputs):
        ran.append(name)
        logger.info("stage %s", name)
        return True
    logger.info("stage %s: up to date", name)
    return False


def run_pipeline(config: RunConfig, force: bool = False, ablate_interest: bool = False,
                 figures: bool = True) -> RunResult:
    """Run every stage into ``config.workdir``; see module docstring."""
    from . import plots  # matplotlib is only needed when figures are drawn

    work = Path(config.workdir)
    work.mkdir(parents=True, exist_ok=True)
    suffix = "-semantic" if ablate_interest else ""
    art = {
        "log": Path(config.log) if config.log else work / "data" / "log.tsv",
        "docs": Path(config.docs) if config.docs else work / "data" / "docs.tsv",
        "corpus": work / "corpus",
        "model": work / "lda.model",
        "profiles": work / "profiles.tsv",
        "semantic": work / "semantic.npz",
        "head": work / f"head{suffix}.ckpt",
        "train_log": work / f"train_log{suffix}.csv",
        "report": work / f"report{suffix}.csv",
        "scatter": work / "scatter.csv",
    }
    ran: List[str] = []
    current = "generate-synthetic"
    t_start = time.perf_counter()
    try:
        if not config.log:
            if _stage(current, [art["log"], art["docs"]], force, ran):
                generate_synthetic(config.synthetic).write(art["log"].parent)

        current = "ingest"
        split_files = [art["corpus"] / f"{p}.tsv" for p in corpus_mod.PARTITIONS] + [art["corpus"] / "docs.tsv"]
        if _stage(current, split_files, force, ran):
            docs, imps = corpus_mod.ingest(art["log"], art["docs"], config.max_query_len, config.max_doc_len)
            split = corpus_mod.split(imps, config.history_fraction)
            corpus_mod.write_split(split, docs, art["corpus"])
        docs, split = corpus_mod.read_split(art["corpus"], config.max_query_len, config.max_doc_len)

        current = "train-lda"
        if _stage(current, [art["model"]], force, ran):
            model = train_lda(topic_training_docs(docs, split), config.topics)
            model.source = str(art["corpus"] / "docs.tsv")
            save_model(model, art["model"])
        model = load_model(art["model"])

        current = "build-profiles"
        pipe = Pipeline(docs, model, {}, make_provider(config.embeddings))
        if _stage(current, [art["profiles"]], force, ran):
            profiles = build_profiles(
                histories_from_corpus(split, config.multiset_profiles), pipe.doc_topics, model.n_topics
            )
            write_profiles(profiles, art["profiles"])
        pipe.profiles = read_profiles(art["profiles"])

        current = "semantic-features"
        if _stage(current, [art["semantic"]], force, ran):
            for imp in split.train + split.validation + split.test:
                for d in imp.candidates:
                    pipe.semantic_features(imp.query.tokens, d)
            save_semantic_table(pipe._phi, art["semantic"])
        pipe.preload_semantic(load_semantic_table(art["semantic"]))

        current = "train"
        scoring = pipe.with_ablation(ablate_interest)
        if _stage(current, [art["head"], art["train_log"]], force, ran):
            result = train(split, scoring.features, config.training, dim=scoring.feature_dim)
            save_head(result.head, art["head"], pipe.bank, pipe.n_layers, model.n_topics)
            write_train_log(result.log, art["train_log"])
            if figures:
                plots.plot_training_curve(result.log, art["train_log"].with_suffix(".png"))
        head = load_head(art["head"], pipe.n_layers, pipe.bank).head

        current = "evaluate"
        name = MODEL_NAMES[ablate_interest]
        if _stage(current, [art["report"]], force, ran):
            test = [imp for imp in split.test if imp.clicked]
            report = evaluate(test, ranking_fn(head, scoring.features))
            write_report([(name, report)], art["report"])
            art["report"].with_suffix(".txt").write_text(format_table([(name, report)]) + "\n")
            if figures:
                plots.plot_report([(name, report)], art["report"].with_suffix(".png"))
        report = read_report(art["report"])[0][1]

        current = "export-analyses"
        heat_dir = work / "heatmaps"
        if _stage(current, [art["scatter"], heat_dir / "interest.csv", heat_dir / "layers.csv"], force, ran):
            export_analyses(pipe, split, art["scatter"], heat_dir, figures)
    except Exception as exc:
        raise StageError(current, exc) from exc
    logger.info("run finished in %.1fs (stages run: %s)", time.perf_counter() - t_start, ", ".join(ran) or "none")
    return RunResult(report, MODEL_NAMES[ablate_interest], art["report"], ran, art)


def export_analyses(pipe: Pipeline, split: SplitCorpus, scatter_path: Path, heat_dir: Path,
                    figures: bool = True) -> None:
    from . import plots

    profiles = [pipe.profiles[u] for u in sorted(pipe.profiles)]
    if len(profiles) >= 2:
        points, _ = export_profile_scatter(profiles)
        write_scatter(points, scatter_path)
        if figures:
            plots.plot_profile_scatter(points, scatter_path.with_suffix(".png"))
    heat_dir.mkdir(parents=True, exist_ok=True)
    imp = next((i for i in split.test if i.clicked and i.unclicked), None)
    if imp is None:
        logger.warning("no test impression with clicked and unclicked candidates; heatmaps skipped")
        return
    # one clicked document and up to four unclicked ones
    doc_ids = sorted(imp.clicked)[:1] + list(imp.unclicked[:4])
    interest, layers = export_kernel_heatmaps(pipe, imp.user_id, imp.query.tokens, doc_ids)
    write_heatmap_csv(interest, "doc_id,kernel_mu,value", heat_dir / "interest.csv")
    write_heatmap_csv(layers, "layer,kernel_mu,value", heat_dir / "layers.csv")
    if figures:
        plots.plot_interest_heatmap(interest, heat_dir / "interest.png", clicked=set(imp.clicked))
        plots.plot_layer_heatmap(layers, heat_dir / "layers.png")
