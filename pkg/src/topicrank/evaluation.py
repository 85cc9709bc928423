"""Click-based ranking metrics: MAP, MRR, P@1 and average click position.

Ranks are 1-based.  Impressions without clicks are skipped and counted.
A.Clk pools every click across every impression before averaging.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Iterable, List, Sequence, Tuple

from .corpus import Impression

REPORT_COLUMNS = ("model", "MAP", "MRR", "P@1", "A.Clk")


class EvaluationError(ValueError):
    pass


@dataclass(frozen=True)
class RankedImpression:
    impression: Impression
    ranking: Tuple[str, ...]

    def __post_init__(self):
        if sorted(self.ranking) != sorted(self.impression.candidates):
            raise ValueError(f"ranking is not a permutation of the candidates of {self.impression.describe()}")

    @property
    def click_ranks(self) -> List[int]:
        clicked = self.impression.clicked
        return [r for r, d in enumerate(self.ranking, start=1) if d in clicked]


def average_precision(ranked: RankedImpression) -> float:
    ranks = ranked.click_ranks
    if not ranks:
        raise ValueError("average precision needs at least one click")
    # exact rational sum, rounded once
    return float(sum(Fraction(i, r) for i, r in enumerate(ranks, start=1)) / len(ranks))


def reciprocal_rank(ranked: RankedImpression) -> float:
    ranks = ranked.click_ranks
    if not ranks:
        raise ValueError("reciprocal rank needs at least one click")
    return 1.0 / ranks[0]


def precision_at_1(ranked: RankedImpression) -> int:
    return int(ranked.ranking[0] in ranked.impression.clicked)


def average_click_position(ranked: Iterable[RankedImpression]) -> float:
    positions = [r for item in ranked for r in item.click_ranks]
    if not positions:
        raise ValueError("no clicks to average")
    return sum(positions) / len(positions)


@dataclass
class MetricReport:
    map: float
    mrr: float
    p_at_1: float
    a_clk: float
    query_count: int
    excluded: int = 0

    def row(self, model: str) -> str:
        return f"{model},{self.map!r},{self.mrr!r},{self.p_at_1!r},{self.a_clk!r}"


def aggregate(ranked: Sequence[RankedImpression]) -> MetricReport:
    scored = [r for r in ranked if r.click_ranks]
    excluded = len(ranked) - len(scored)
    if not scored:
        raise ValueError("no impression with clicks to evaluate")
    n = len(scored)
    return MetricReport(
        map=sum(average_precision(r) for r in scored) / n,
        mrr=sum(reciprocal_rank(r) for r in scored) / n,
        p_at_1=sum(precision_at_1(r) for r in scored) / n,
        a_clk=average_click_position(scored),
        query_count=n,
        excluded=excluded,
    )


def evaluate(
    impressions: Sequence[Impression],
    rank_fn: Callable[[Impression], Sequence[str]],
) -> MetricReport:
    """Rank every impression with ``rank_fn`` and aggregate the four metrics."""
    ranked = []
    for imp in impressions:
        try:
            order = tuple(rank_fn(imp))
        except (KeyError, ValueError) as exc:
            raise EvaluationError(f"while ranking {imp.describe()}: {exc}") from exc
        ranked.append(RankedImpression(imp, order))
    return aggregate(ranked)


def write_report(rows: Sequence[Tuple[str, MetricReport]], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(REPORT_COLUMNS) + "\n")
        for model, rep in rows:
            fh.write(rep.row(model) + "\n")


def read_report(path) -> List[Tuple[str, MetricReport]]:
    out = []
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
        if tuple(header) != REPORT_COLUMNS:
            raise ValueError(f"{path}: unexpected header {header}")
        for line in fh:
            if line.strip():
                model, *vals = line.strip().split(",")
                m, r, p, a = map(float, vals)
                out.append((model, MetricReport(m, r, p, a, query_count=0)))
    return out


def format_table(rows: Sequence[Tuple[str, MetricReport]]) -> str:
    """Aligned plain-text version of the report."""
    width = max([len("model")] + [len(m) for m, _ in rows])
    lines = [f"{'model':<{width}}  {'MAP':>6}  {'MRR':>6}  {'P@1':>6}  {'A.Clk':>7}"]
    for model, rep in rows:
        lines.append(f"{model:<{width}}  {rep.map:6.3f}  {rep.mrr:6.3f}  {rep.p_at_1:6.3f}  {rep.a_clk:7.3f}")
    return "\n".join(lines)
