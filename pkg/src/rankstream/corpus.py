"""Datasets, dataset streams, TREC-format ingestion and synthetic generation.

File formats:
  documents : one per line, "doc_id<TAB>text"
  queries   : one per line, "query_id<TAB>text"
  qrels     : standard four-column "query_id 0 doc_id grade", space separated
  split spec: "train_count/test_count" or "path_to_train_ids,path_to_test_ids"
"""

from __future__ import annotations

import random
import re
import warnings
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError, ParseError, ValidationError

_TOKEN_RE = re.compile(r"[a-z0-9]+")


def tokenize(text: str) -> tuple[str, ...]:
    """Lowercase and split on any non-alphanumeric run; empty tokens dropped."""
    return tuple(_TOKEN_RE.findall(text.lower()))


@dataclass(frozen=True)
class Document:
    doc_id: str
    tokens: tuple[str, ...]


@dataclass(frozen=True)
class Query:
    query_id: str
    tokens: tuple[str, ...]


@dataclass(frozen=True)
class QrelEntry:
    query_id: str
    doc_id: str
    grade: int


@dataclass(frozen=True)
class Dataset:
    """One retrieval domain: documents, queries, graded judgments and a query split."""

    name: str
    documents: tuple[Document, ...]
    queries: tuple[Query, ...]
    qrels: tuple[QrelEntry, ...]
    train_ids: frozenset[str]
    test_ids: frozenset[str]

    def __post_init__(self):
        doc_ids = [d.doc_id for d in self.documents]
        if len(set(doc_ids)) != len(doc_ids):
            raise ValidationError(f"{self.name}: duplicate doc_id in documents")
        query_ids = [q.query_id for q in self.queries]
        if len(set(query_ids)) != len(query_ids):
            raise ValidationError(f"{self.name}: duplicate query_id in queries")
        if self.train_ids & self.test_ids:
            raise ValidationError(f"{self.name}: train/test query sets overlap")
        known_q, known_d = set(query_ids), set(doc_ids)
        seen = set()
        for e in self.qrels:
            if e.query_id not in known_q:
                raise ValidationError(f"{self.name}: qrel references unknown query {e.query_id!r}")
            if e.doc_id not in known_d:
                raise ValidationError(f"{self.name}: qrel references unknown doc {e.doc_id!r}")
            if (e.query_id, e.doc_id) in seen:
                raise ValidationError(f"{self.name}: duplicate qrel ({e.query_id}, {e.doc_id})")
            seen.add((e.query_id, e.doc_id))

    @cached_property
    def doc_map(self) -> dict[str, Document]:
        return {d.doc_id: d for d in self.documents}

    @cached_property
    def query_map(self) -> dict[str, Query]:
        return {q.query_id: q for q in self.queries}

    @cached_property
    def qrels_by_query(self) -> dict[str, dict[str, int]]:
        out: dict[str, dict[str, int]] = {}
        for e in self.qrels:
            out.setdefault(e.query_id, {})[e.doc_id] = e.grade
        return out

    @property
    def train_queries(self) -> list[Query]:
        return [q for q in self.queries if q.query_id in self.train_ids]

    @property
    def test_queries(self) -> list[Query]:
        return [q for q in self.queries if q.query_id in self.test_ids]


@dataclass(frozen=True)
class StreamSetting:
    """Ordered dataset sequence D1 -> ... -> Dn defining a transfer experiment."""

    name: str
    datasets: tuple[Dataset, ...]

    def __post_init__(self):
        if len(self.datasets) < 2:
            raise ValidationError(f"{self.name}: a stream needs at least 2 datasets")
        names = [d.name for d in self.datasets]
        if len(set(names)) != len(names):
            raise ValidationError(f"{self.name}: dataset names must be distinct")

    @property
    def n(self) -> int:
        return len(self.datasets)


def order_by_training_size(datasets: Sequence[Dataset]) -> list[Dataset]:
    """Largest training split first; the conventional ordering for streams."""
    return sorted(datasets, key=lambda d: (-len(d.train_ids), d.name))


# ---------------------------------------------------------------------------
# TREC-format ingestion
# ---------------------------------------------------------------------------

def _read_id_text_file(path: str | Path) -> list[tuple[str, tuple[str, ...]]]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            if "\t" not in line:
                raise ParseError(f"{path}:{lineno}: expected 'id<TAB>text'")
            ident, text = line.split("\t", 1)
            tokens = tokenize(text)
            if not ident or not tokens:
                raise ParseError(f"{path}:{lineno}: empty id or empty text after tokenization")
            out.append((ident, tokens))
    return out


def read_qrels_file(path: str | Path) -> list[QrelEntry]:
    entries = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            parts = line.split()
            if len(parts) != 4:
                raise ParseError(f"{path}:{lineno}: expected 4 columns, got {len(parts)}")
            qid, _, did, grade_s = parts
            try:
                grade = int(grade_s)
            except ValueError:
                raise ParseError(f"{path}:{lineno}: grade {grade_s!r} is not an integer") from None
            if grade < 0:
                raise ParseError(f"{path}:{lineno}: negative grade {grade}")
            entries.append(QrelEntry(qid, did, grade))
    return entries


def _parse_split_spec(split_spec: str, query_ids: Sequence[str], seed: int):
    m = re.fullmatch(r"(\d+)/(\d+)", split_spec.strip())
    if m:
        n_train, n_test = int(m.group(1)), int(m.group(2))
        if n_train + n_test > len(query_ids):
            raise ConfigError(
                f"split {split_spec!r} needs {n_train + n_test} queries, "
                f"only {len(query_ids)} available"
            )
        ids = sorted(query_ids)
        random.Random(seed).shuffle(ids)
        return frozenset(ids[:n_train]), frozenset(ids[n_train:n_train + n_test])
    if "," in split_spec:
        train_path, test_path = (p.strip() for p in split_spec.split(",", 1))
        read = lambda p: frozenset(ln.strip() for ln in open(p, encoding="utf-8") if ln.strip())
        return read(train_path), read(test_path)
    raise ConfigError(f"unrecognized split spec {split_spec!r}")


def load_trec_dataset(
    doc_path: str | Path,
    query_path: str | Path,
    qrels_path: str | Path,
    split_spec: str,
    name: str | None = None,
    seed: int = 0,
) -> Dataset:
    """Load a dataset from delimited text files and apply a deterministic query split."""
    documents = tuple(Document(i, t) for i, t in _read_id_text_file(doc_path))
    queries = tuple(Query(i, t) for i, t in _read_id_text_file(query_path))
    qrels = tuple(read_qrels_file(qrels_path))
    if not qrels:
        warnings.warn(f"{qrels_path}: no relevance judgments loaded", stacklevel=2)
    train_ids, test_ids = _parse_split_spec(split_spec, [q.query_id for q in queries], seed)
    return Dataset(
        name=name or Path(doc_path).stem,
        documents=documents,
        queries=queries,
        qrels=qrels,
        train_ids=train_ids,
        test_ids=test_ids,
    )


def save_trec_dataset(dataset: Dataset, out_dir: str | Path) -> dict[str, Path]:
    """Write a dataset back to the delimited formats (plus split id lists)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "docs": out / "docs.tsv",
        "queries": out / "queries.tsv",
        "qrels": out / "qrels.txt",
        "train_ids": out / "train_ids.txt",
        "test_ids": out / "test_ids.txt",
    }
    with open(paths["docs"], "w", encoding="utf-8") as fh:
        for d in dataset.documents:
            fh.write(f"{d.doc_id}\t{' '.join(d.tokens)}\n")
    with open(paths["queries"], "w", encoding="utf-8") as fh:
        for q in dataset.queries:
            fh.write(f"{q.query_id}\t{' '.join(q.tokens)}\n")
    with open(paths["qrels"], "w", encoding="utf-8") as fh:
        for e in dataset.qrels:
            fh.write(f"{e.query_id} 0 {e.doc_id} {e.grade}\n")
    with open(paths["train_ids"], "w", encoding="utf-8") as fh:
        fh.writelines(f"{i}\n" for i in sorted(dataset.train_ids))
    with open(paths["test_ids"], "w", encoding="utf-8") as fh:
        fh.writelines(f"{i}\n" for i in sorted(dataset.test_ids))
    return paths


def load_saved_dataset(in_dir: str | Path, name: str | None = None) -> Dataset:
    """Inverse of :func:`save_trec_dataset`."""
    in_dir = Path(in_dir)
    return load_trec_dataset(
        in_dir / "docs.tsv",
        in_dir / "queries.tsv",
        in_dir / "qrels.txt",
        f"{in_dir / 'train_ids.txt'},{in_dir / 'test_ids.txt'}",
        name=name or in_dir.name,
    )


# ---------------------------------------------------------------------------
# Synthetic multi-domain generator
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SyntheticSpec:
    """Knobs for one synthetic retrieval domain.

    ``domain_vocab_offset`` shifts the term ids so that domains with distant
    offsets share little or no vocabulary, which is what makes a stream of
    generated domains behave like a cross-domain transfer problem.
    """

    n_docs: int
    n_queries: int
    vocab_size: int
    doc_len_mean: float = 20.0
    query_len_mean: float = 3.0
    relevance_density: float = 0.02
    domain_vocab_offset: int = 0
    train_fraction: float = 0.6

    def __post_init__(self):
        for f in ("n_docs", "n_queries", "vocab_size"):
            if getattr(self, f) < 1:
                raise ConfigError(f"{f} must be >= 1")
        if not (0.0 < self.relevance_density <= 1.0):
            raise ConfigError("relevance_density must be in (0, 1]")
        if self.vocab_size < self.query_len_mean:
            raise ConfigError("vocab_size must be at least query_len_mean")
        if not (0.0 < self.train_fraction < 1.0):
            raise ConfigError("train_fraction must be in (0, 1)")


def generate_synthetic_domain(seed: int, spec: SyntheticSpec, name: str | None = None) -> Dataset:
    """Generate one synthetic domain; a pure function of (seed, spec).

    Documents draw terms from a Zipf-like distribution over the domain
    vocabulary. Each query gets ``relevance_density * n_docs`` relevant
    documents (at least one) built by injecting the query terms into them.
    """
    rng = np.random.default_rng(seed)
    vocab = [f"t{spec.domain_vocab_offset + i}" for i in range(spec.vocab_size)]
    probs = 1.0 / (np.arange(spec.vocab_size) + 2.0)
    probs /= probs.sum()

    doc_tokens: list[list[str]] = []
    for _ in range(spec.n_docs):
        length = max(1, int(rng.poisson(spec.doc_len_mean)))
        idx = rng.choice(spec.vocab_size, size=length, p=probs)
        doc_tokens.append([vocab[i] for i in idx])

    queries = []
    qrels = []
    n_rel = max(1, round(spec.relevance_density * spec.n_docs))
    for qi in range(spec.n_queries):
        q_len = max(1, int(rng.poisson(spec.query_len_mean)))
        # query terms from the rarer half of the vocabulary so they discriminate
        lo = spec.vocab_size // 4
        q_idx = rng.choice(np.arange(lo, spec.vocab_size), size=q_len, replace=False)
        q_terms = [vocab[i] for i in q_idx]
        query_id = f"q{qi}"
        queries.append(Query(query_id, tuple(q_terms)))
        rel_docs = rng.choice(spec.n_docs, size=min(n_rel, spec.n_docs), replace=False)
        for rank, di in enumerate(sorted(rel_docs)):
            toks = doc_tokens[di]
            for term in q_terms:
                reps = 1 + int(rng.integers(0, 3))
                for _ in range(reps):
                    toks.insert(int(rng.integers(0, len(toks) + 1)), term)
            grade = 2 if rank == 0 else 1
            qrels.append(QrelEntry(query_id, f"d{di}", grade))

    documents = tuple(Document(f"d{i}", tuple(t)) for i, t in enumerate(doc_tokens))
    qids = [q.query_id for q in queries]
    shuffled = list(qids)
    random.Random(seed).shuffle(shuffled)
    n_train = max(1, int(spec.train_fraction * len(qids)))
    if n_train >= len(qids):
        n_train = len(qids) - 1
    train_ids = frozenset(shuffled[:n_train])
    test_ids = frozenset(shuffled[n_train:])
    return Dataset(
        name=name or f"synth{spec.domain_vocab_offset}_{seed}",
        documents=documents,
        queries=tuple(queries),
        qrels=tuple(qrels),
        train_ids=train_ids,
        test_ids=test_ids,
    )


def sample_subdataset(dataset: Dataset, n_queries: int, index, bm25_params,
                      k: int, seed: int, name: str | None = None) -> Dataset:
    """Sample queries and keep the union of their BM25 top-k documents.

    The returned dataset restricts qrels to the sampled queries and kept
    documents; train/test membership of the sampled queries is preserved.
    """
    from .bm25 import search_topk  # local import to avoid a module cycle

    if k <= 0:
        raise ConfigError("k must be >= 1")
    if n_queries > len(dataset.queries):
        raise ConfigError(
            f"cannot sample {n_queries} queries from {len(dataset.queries)}"
        )
    rng = random.Random(seed)
    sampled = rng.sample(sorted(dataset.queries, key=lambda q: q.query_id), n_queries)
    kept_docs: set[str] = set()
    for q in sampled:
        for doc_id, _ in search_topk(index, bm25_params, q, k):
            kept_docs.add(doc_id)
    sampled_ids = {q.query_id for q in sampled}
    documents = tuple(d for d in dataset.documents if d.doc_id in kept_docs)
    qrels = tuple(
        e for e in dataset.qrels
        if e.query_id in sampled_ids and e.doc_id in kept_docs
    )
    return Dataset(
        name=name or f"{dataset.name}_sub{seed}",
        documents=documents,
        queries=tuple(sampled),
        qrels=qrels,
        train_ids=frozenset(dataset.train_ids & sampled_ids),
        test_ids=frozenset(dataset.test_ids & sampled_ids),
    )
