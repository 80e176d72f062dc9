"""Inverted index, Okapi BM25 scoring, top-k pre-ranking and pair sampling."""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field
from collections import Counter
from typing import Sequence

from .corpus import Dataset, Query
from .errors import ConfigError, ValidationError

DEFAULT_K1_GRID = (0.6, 0.9, 1.2, 1.5, 2.0)
DEFAULT_B_GRID = (0.3, 0.5, 0.75, 0.9)


@dataclass(frozen=True)
class BM25Params:
    k1: float = 1.2
    b: float = 0.75

    def __post_init__(self):
        if self.k1 < 0:
            raise ConfigError(f"k1 must be >= 0, got {self.k1}")
        if not (0.0 <= self.b <= 1.0):
            raise ConfigError(f"b must be in [0, 1], got {self.b}")


@dataclass
class BM25Index:
    postings: dict[str, list[tuple[str, int]]]
    doc_lengths: dict[str, int]
    n_docs: int
    avg_doc_len: float
    doc_freqs: dict[str, int]
    # per-term tf lookup, derived from postings
    _tf: dict[str, dict[str, int]] = field(repr=False, default_factory=dict)

    def __post_init__(self):
        if not self._tf:
            self._tf = {t: dict(plist) for t, plist in self.postings.items()}

    def tf(self, term: str, doc_id: str) -> int:
        return self._tf.get(term, {}).get(doc_id, 0)

    def df(self, term: str) -> int:
        return self.doc_freqs.get(term, 0)

    def idf(self, term: str) -> float:
        """ln(1 + (N - df + 0.5)/(df + 0.5)); nonnegative for every df."""
        df = self.df(term)
        return math.log(1.0 + (self.n_docs - df + 0.5) / (df + 0.5))


@dataclass(frozen=True)
class TrainingPair:
    query_id: str
    positive_doc: str
    negative_doc: str


def build_index(dataset: Dataset) -> BM25Index:
    if not dataset.documents:
        raise ValidationError(f"{dataset.name}: cannot index an empty document collection")
    postings: dict[str, list[tuple[str, int]]] = {}
    doc_lengths: dict[str, int] = {}
    for doc in dataset.documents:
        if doc.doc_id in doc_lengths:
            raise ValidationError(f"duplicate doc_id {doc.doc_id!r}")
        doc_lengths[doc.doc_id] = len(doc.tokens)
        for term, tf in Counter(doc.tokens).items():
            postings.setdefault(term, []).append((doc.doc_id, tf))
    n_docs = len(doc_lengths)
    return BM25Index(
        postings=postings,
        doc_lengths=doc_lengths,
        n_docs=n_docs,
        avg_doc_len=sum(doc_lengths.values()) / n_docs,
        doc_freqs={t: len(p) for t, p in postings.items()},
    )


def bm25_score(index: BM25Index, params: BM25Params, query: Query, doc_id: str) -> float:
    if doc_id not in index.doc_lengths:
        raise LookupError(f"unknown doc_id {doc_id!r}")
    dl = index.doc_lengths[doc_id]
    norm = params.k1 * (1.0 - params.b + params.b * dl / index.avg_doc_len)
    score = 0.0
    for term in query.tokens:
        tf = index.tf(term, doc_id)
        if tf == 0:
            continue
        score += index.idf(term) * tf * (params.k1 + 1.0) / (tf + norm)
    return score


def search_topk(index: BM25Index, params: BM25Params, query: Query,
                k: int) -> list[tuple[str, float]]:
    """Top-k by BM25, descending score, ties broken by ascending doc_id.

    Only documents with a strictly positive score are returned.
    """
    if k < 1:
        raise ConfigError(f"k must be >= 1, got {k}")
    scores: dict[str, float] = {}
    for term, count in Counter(query.tokens).items():
        plist = index.postings.get(term)
        if not plist:
            continue
        idf = index.idf(term)
        for doc_id, tf in plist:
            dl = index.doc_lengths[doc_id]
            norm = params.k1 * (1.0 - params.b + params.b * dl / index.avg_doc_len)
            contrib = idf * tf * (params.k1 + 1.0) / (tf + norm)
            scores[doc_id] = scores.get(doc_id, 0.0) + count * contrib
    ranked = sorted(
        ((d, s) for d, s in scores.items() if s > 0.0),
        key=lambda x: (-x[1], x[0]),
    )
    return ranked[:k]


def run_to_trec_lines(query_id: str, ranked: Sequence[tuple[str, float]],
                      tag: str = "rankstream") -> list[str]:
    """Format a ranked list as standard TREC run lines."""
    return [
        f"{query_id} Q0 {doc_id} {rank} {score:.6f} {tag}"
        for rank, (doc_id, score) in enumerate(ranked, 1)
    ]


def grid_search_bm25(dataset: Dataset, index: BM25Index,
                     k1_grid: Sequence[float] = DEFAULT_K1_GRID,
                     b_grid: Sequence[float] = DEFAULT_B_GRID,
                     metric: str = "map@100") -> BM25Params:
    """Pick the grid point maximizing the metric on the training queries.

    Ties go to the smallest (k1, b) lexicographically.
    """
    from .metrics import evaluate_ranking_fn  # avoid cycle

    if not k1_grid or not b_grid:
        raise ConfigError("grid must be non-empty")
    train_queries = [
        q for q in dataset.train_queries
        if any(g >= 1 for g in dataset.qrels_by_query.get(q.query_id, {}).values())
    ]
    if not train_queries:
        raise ConfigError(f"{dataset.name}: no judged training queries for grid search")
    best: tuple[float, float, float] | None = None  # (-score, k1, b)
    for k1 in sorted(k1_grid):
        for b in sorted(b_grid):
            params = BM25Params(k1=k1, b=b)
            score = evaluate_ranking_fn(
                lambda q: [d for d, _ in search_topk(index, params, q, 100)],
                train_queries, dataset.qrels_by_query, metric,
            )
            key = (-score, k1, b)
            if best is None or key < best:
                best = key
    return BM25Params(k1=best[1], b=best[2])


def sample_training_pairs(dataset: Dataset, index: BM25Index, params: BM25Params,
                          k: int, seed: int,
                          query_ids: Sequence[str] | None = None) -> list[TrainingPair]:
    """One pair per (train query, relevant doc in its top-k pre-ranking).

    The negative is drawn uniformly (seeded) from the same query's top-k
    documents with a strictly lower grade; unjudged documents count as grade 0.
    """
    if k < 1:
        raise ConfigError(f"pre-ranking depth must be >= 1, got {k}")
    rng = random.Random(seed)
    if query_ids is None:
        query_ids = sorted(dataset.train_ids)
    pairs: list[TrainingPair] = []
    for qid in query_ids:
        query = dataset.query_map[qid]
        grades = dataset.qrels_by_query.get(qid, {})
        topk = [d for d, _ in search_topk(index, params, query, k)]
        for doc_id in topk:
            grade = grades.get(doc_id, 0)
            if grade < 1:
                continue
            candidates = [d for d in topk if grades.get(d, 0) < grade]
            if not candidates:
                continue
            pairs.append(TrainingPair(qid, doc_id, rng.choice(candidates)))
    return pairs
