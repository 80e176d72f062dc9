"""IR effectiveness metrics and the forgetting measures (BWT, REM, PR).

All metric functions are pure. Queries with no judged-relevant document are
excluded from averages, matching the usual trec-eval behavior.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

from .errors import ConfigError, ContractError


def average_precision(ranking: Sequence[str], qrels: Mapping[str, int],
                      cutoff: int = 100) -> float:
    """AP over the top ``cutoff`` positions, normalized by min(#relevant, cutoff)."""
    if cutoff < 1:
        raise ConfigError("cutoff must be >= 1")
    relevant = {d for d, g in qrels.items() if g >= 1}
    if not relevant:
        return 0.0
    hits = 0
    total = 0.0
    for rank, doc_id in enumerate(ranking[:cutoff], 1):
        if doc_id in relevant:
            hits += 1
            total += hits / rank
    return total / min(len(relevant), cutoff)


def p_at_k(ranking: Sequence[str], qrels: Mapping[str, int], k: int = 20) -> float:
    if k < 1:
        raise ConfigError("k must be >= 1")
    relevant = {d for d, g in qrels.items() if g >= 1}
    return sum(1 for d in ranking[:k] if d in relevant) / k


def ndcg_at_k(ranking: Sequence[str], qrels: Mapping[str, int], k: int = 20) -> float:
    """NDCG with gain 2^grade - 1 and log2 rank discount; 0 when no gain exists."""
    if k < 1:
        raise ConfigError("k must be >= 1")
    dcg = sum(
        (2 ** qrels.get(d, 0) - 1) / math.log2(rank + 1)
        for rank, d in enumerate(ranking[:k], 1)
    )
    ideal_grades = sorted((g for g in qrels.values() if g > 0), reverse=True)
    idcg = sum(
        (2 ** g - 1) / math.log2(rank + 1)
        for rank, g in enumerate(ideal_grades[:k], 1)
    )
    if idcg == 0.0:
        return 0.0
    return dcg / idcg


def parse_metric_id(metric: str) -> tuple[str, int]:
    """'map@100' -> ('map', 100); bare 'map' defaults to cutoff 100."""
    name, _, cut = metric.lower().partition("@")
    defaults = {"map": 100, "p": 20, "ndcg": 20}
    if name not in defaults:
        raise ConfigError(f"unknown metric id {metric!r}")
    try:
        cutoff = int(cut) if cut else defaults[name]
    except ValueError:
        raise ConfigError(f"bad cutoff in metric id {metric!r}") from None
    return name, cutoff


def metric_fn(metric: str) -> Callable[[Sequence[str], Mapping[str, int]], float]:
    name, cutoff = parse_metric_id(metric)
    fn = {"map": average_precision, "p": p_at_k, "ndcg": ndcg_at_k}[name]
    return lambda ranking, qrels: fn(ranking, qrels, cutoff)


def evaluate_run(run: Mapping[str, Sequence[str]],
                 qrels_by_query: Mapping[str, Mapping[str, int]],
                 metric: str = "map@100") -> float:
    """Mean metric over the run's queries that have at least one relevant doc."""
    fn = metric_fn(metric)
    values = [
        fn(ranking, qrels_by_query.get(qid, {}))
        for qid, ranking in run.items()
        if any(g >= 1 for g in qrels_by_query.get(qid, {}).values())
    ]
    if not values:
        return 0.0
    return sum(values) / len(values)


def evaluate_ranking_fn(rank_query, queries, qrels_by_query, metric: str = "map@100") -> float:
    """Like evaluate_run, but produces each ranking on demand with rank_query(q)."""
    fn = metric_fn(metric)
    values = []
    for q in queries:
        qrels = qrels_by_query.get(q.query_id, {})
        if not any(g >= 1 for g in qrels.values()):
            continue
        values.append(fn(rank_query(q), qrels))
    if not values:
        return 0.0
    return sum(values) / len(values)


# ---------------------------------------------------------------------------
# TREC run file I/O
# ---------------------------------------------------------------------------

def write_run_file(path: str | Path, run: Mapping[str, Sequence[tuple[str, float]]],
                   tag: str = "rankstream") -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for qid in run:
            for rank, (doc_id, score) in enumerate(run[qid], 1):
                fh.write(f"{qid} Q0 {doc_id} {rank} {score:.6f} {tag}\n")


def read_run_file(path: str | Path) -> dict[str, list[tuple[str, float]]]:
    run: dict[str, list[tuple[str, float]]] = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            qid, _, doc_id, _, score, *_ = line.split()
            run.setdefault(qid, []).append((doc_id, float(score)))
    return run


# ---------------------------------------------------------------------------
# Forgetting measures over the performance matrix
# ---------------------------------------------------------------------------

@dataclass
class PerformanceMatrix:
    """R[i, j] cells (1-based stream positions), oracle diagonal and BM25 references."""

    n: int
    R: dict[tuple[int, int], float] = field(default_factory=dict)
    R_star: dict[int, float] = field(default_factory=dict)
    bm25_ref: dict[int, float] = field(default_factory=dict)
    metric: str = "map@100"

    def _cell(self, i: int, j: int) -> float:
        if (i, j) not in self.R:
            raise ContractError(f"missing matrix cell R[{i},{j}]")
        return self.R[(i, j)]

    def _star(self, j: int) -> float:
        if j not in self.R_star:
            raise ContractError(f"missing oracle cell R*[{j},{j}]")
        return self.R_star[j]

    def _ref(self, j: int) -> float:
        if j not in self.bm25_ref:
            raise ContractError(f"missing BM25 reference for dataset {j}")
        if self.bm25_ref[j] == 0.0:
            raise ContractError(f"BM25 reference for dataset {j} is zero")
        return self.bm25_ref[j]


def bwt(matrix: PerformanceMatrix) -> float:
    """Mean over the n(n-1)/2 pairs of (R[i,j] - R*[j,j]) / bm25_ref[j]."""
    n = matrix.n
    if n < 2:
        raise ContractError("BWT needs a stream of length >= 2")
    total = 0.0
    for i in range(2, n + 1):
        for j in range(1, i):
            total += (matrix._cell(i, j) - matrix._star(j)) / matrix._ref(j)
    return total / (n * (n - 1) / 2)


def rem(bwt_value: float) -> float:
    """1 - |min(BWT, 0)|; equals 1 whenever backward transfer is nonnegative."""
    return 1.0 - abs(min(bwt_value, 0.0))


def pr(matrix: PerformanceMatrix) -> float:
    """Mean over i >= 2 of R[i,i] / R*[i,i]: transferred model vs its oracle."""
    n = matrix.n
    if n < 2:
        raise ContractError("PR needs a stream of length >= 2")
    total = 0.0
    for i in range(2, n + 1):
        star = matrix._star(i)
        if star == 0.0:
            raise ContractError(f"oracle performance R*[{i},{i}] is zero")
        total += matrix._cell(i, i) / star
    return total / (n - 1)


def delta_map(model_perf: float, bm25_perf: float) -> float:
    """Relative improvement over BM25, in percent."""
    if bm25_perf == 0.0:
        raise ContractError("BM25 reference performance is zero")
    return 100.0 * (model_perf - bm25_perf) / bm25_perf
