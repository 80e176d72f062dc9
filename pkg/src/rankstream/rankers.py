"""Interaction-based neural rankers (KNRM, DRMM) and the BM25 interpolation.

Both models score a (query, document) token pair through an embedding table.
KNRM backpropagates into the embeddings when the table is trainable; DRMM's
matching histograms are counts and block that path, so only its feed-forward
and gating weights are trained.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .autodiff import ParamVector, Value, cosine_similarity_matrix, gather_rows
from .bm25 import BM25Index, BM25Params, search_topk
from .corpus import Query
from .errors import ConfigError, ContractError, ParseError, ScoringError

DEFAULT_KNRM_MUS = (1.0,) + tuple(round(0.9 - 0.2 * i, 1) for i in range(10))
EXACT_MATCH_SIGMA = 1e-3
SOFT_MATCH_SIGMA = 0.1
KERNEL_LOG_EPS = 1e-10


@dataclass
class EmbeddingTable:
    """Token embeddings with a seeded, per-token fixed vector for OOV tokens."""

    vocab: dict[str, int]
    matrix: np.ndarray
    trainable: bool = False
    oov_seed: int = 0
    _oov_cache: dict[str, np.ndarray] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if not np.all(np.isfinite(self.matrix)):
            raise ConfigError("embedding matrix contains non-finite entries")
        if sorted(self.vocab.values()) != list(range(len(self.vocab))):
            raise ConfigError("vocab indices must be dense 0..|V|-1")

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    def _oov_vector(self, token: str) -> np.ndarray:
        vec = self._oov_cache.get(token)
        if vec is None:
            digest = hashlib.sha256(f"{self.oov_seed}:{token}".encode()).digest()
            rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
            vec = rng.uniform(-0.1, 0.1, size=self.dim)
            self._oov_cache[token] = vec
        return vec

    def indices_and_fill(self, tokens: Sequence[str]) -> tuple[np.ndarray, np.ndarray]:
        """Row indices (-1 for OOV) plus a fill matrix carrying the OOV vectors."""
        idx = np.array([self.vocab.get(t, -1) for t in tokens], dtype=np.int64)
        fill = np.zeros((len(tokens), self.dim))
        for i, t in enumerate(tokens):
            if idx[i] < 0:
                fill[i] = self._oov_vector(t)
        return idx, fill

    def embed_constant(self, tokens: Sequence[str]) -> np.ndarray:
        idx, fill = self.indices_and_fill(tokens)
        out = fill
        mask = idx >= 0
        out[mask] = self.matrix[idx[mask]]
        return out

    @classmethod
    def random(cls, tokens: Sequence[str], dim: int, seed: int,
               trainable: bool = True) -> "EmbeddingTable":
        """A seeded random table over the given token set (synthetic runs)."""
        vocab = {t: i for i, t in enumerate(sorted(set(tokens)))}
        rng = np.random.default_rng(seed)
        matrix = rng.uniform(-0.1, 0.1, size=(len(vocab), dim))
        return cls(vocab=vocab, matrix=matrix, trainable=trainable, oov_seed=seed)


def load_embeddings_text(path: str | Path, trainable: bool = False,
                         oov_seed: int = 0) -> EmbeddingTable:
    """Read whitespace-delimited pretrained vectors: token then d floats per line."""
    vocab: dict[str, int] = {}
    rows: list[np.ndarray] = []
    dim = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.rstrip("\n").split()
            if not parts:
                continue
            token, vals = parts[0], parts[1:]
            if dim is None:
                dim = len(vals)
            if len(vals) != dim or dim == 0:
                raise ParseError(f"{path}:{lineno}: expected {dim} components")
            if token in vocab:
                raise ParseError(f"{path}:{lineno}: duplicate token {token!r}")
            vocab[token] = len(rows)
            try:
                rows.append(np.array([float(v) for v in vals]))
            except ValueError:
                raise ParseError(f"{path}:{lineno}: non-numeric component") from None
    if not rows:
        raise ParseError(f"{path}: no embedding rows found")
    return EmbeddingTable(vocab=vocab, matrix=np.vstack(rows),
                          trainable=trainable, oov_seed=oov_seed)


@dataclass(frozen=True)
class RankerConfig:
    kind: str  # "knrm" | "drmm"
    embed_dim: int = 300
    kernel_mus: tuple[float, ...] = DEFAULT_KNRM_MUS
    kernel_sigmas: tuple[float, ...] | None = None  # default derived from mus
    n_bins: int = 30
    hidden_sizes: tuple[int, ...] = (10, 1)
    train_embeddings: bool = False

    def __post_init__(self):
        if self.kind not in ("knrm", "drmm"):
            raise ConfigError(f"unknown model kind {self.kind!r}")
        if self.kind == "knrm":
            mus = self.kernel_mus
            if any(mus[i] <= mus[i + 1] for i in range(len(mus) - 1)):
                raise ConfigError("kernel mus must be strictly decreasing")
            if self.kernel_sigmas is not None:
                if len(self.kernel_sigmas) != len(mus):
                    raise ConfigError("kernel_sigmas length must match kernel_mus")
                if any(s <= 0 for s in self.kernel_sigmas):
                    raise ConfigError("kernel sigmas must be positive")
        if self.kind == "drmm" and self.n_bins < 2:
            raise ConfigError("DRMM needs at least 2 histogram bins")
        if self.hidden_sizes and self.hidden_sizes[-1] != 1:
            raise ConfigError("last hidden layer must have size 1")

    @property
    def sigmas(self) -> tuple[float, ...]:
        if self.kernel_sigmas is not None:
            return self.kernel_sigmas
        return tuple(
            EXACT_MATCH_SIGMA if mu >= 1.0 else SOFT_MATCH_SIGMA
            for mu in self.kernel_mus
        )


def init_params(config: RankerConfig, embedding: EmbeddingTable, seed: int) -> ParamVector:
    """Uniform [-0.1, 0.1] initialization; embeddings included only for
    trainable-KNRM runs (DRMM histograms are not differentiable in them)."""
    rng = np.random.default_rng(seed)
    u = lambda *shape: rng.uniform(-0.1, 0.1, size=shape)
    arrays: dict[str, np.ndarray] = {}
    if config.kind == "knrm":
        arrays["w"] = u(len(config.kernel_mus))
        arrays["b"] = u()
    else:
        sizes = (config.n_bins,) + config.hidden_sizes
        for li in range(len(config.hidden_sizes)):
            arrays[f"W{li}"] = u(sizes[li + 1], sizes[li])
            arrays[f"c{li}"] = u(sizes[li + 1])
        arrays["w_gate"] = u()
    if config.kind == "knrm" and config.train_embeddings and embedding.trainable:
        arrays["embeddings"] = embedding.matrix.copy()
    return ParamVector(arrays)


def _embed(tokens: Sequence[str], embedding: EmbeddingTable,
           leaves: Mapping[str, Value]) -> Value:
    if "embeddings" in leaves:
        idx, fill = embedding.indices_and_fill(tokens)
        return gather_rows(leaves["embeddings"], idx, fill)
    return Value(embedding.embed_constant(tokens))


def knrm_forward(config: RankerConfig, embedding: EmbeddingTable,
                 leaves: Mapping[str, Value], query_tokens: Sequence[str],
                 doc_tokens: Sequence[str]) -> Value:
    """tanh(w . phi + b) with RBF-kernel soft-TF pooling of cosine similarities."""
    if not query_tokens:
        raise ScoringError("empty query after tokenization")
    if not doc_tokens:
        raise ScoringError("empty document after tokenization")
    q = _embed(query_tokens, embedding, leaves)
    d = _embed(doc_tokens, embedding, leaves)
    m = cosine_similarity_matrix(q, d)
    w, b = leaves["w"], leaves["b"]
    s = b + 0.0
    for k, (mu, sigma) in enumerate(zip(config.kernel_mus, config.sigmas)):
        diff = m - mu
        kernel = (-(diff * diff) * (1.0 / (2.0 * sigma * sigma))).exp()
        soft_tf = kernel.sum(axis=1)
        phi_k = (soft_tf + KERNEL_LOG_EPS).log().sum()
        s = s + w[k] * phi_k
    return s.tanh()


def matching_histograms(config: RankerConfig, embedding: EmbeddingTable,
                        query_tokens: Sequence[str],
                        doc_tokens: Sequence[str]) -> np.ndarray:
    """Per-query-term log-count histograms (LCH) of cosine similarities."""
    q = embedding.embed_constant(query_tokens)
    d = embedding.embed_constant(doc_tokens)
    qn = q / np.linalg.norm(q, axis=1, keepdims=True)
    dn = d / np.linalg.norm(d, axis=1, keepdims=True)
    sims = qn @ dn.T  # (m, n)
    edges = np.linspace(-1.0, 1.0, config.n_bins + 1)
    hist = np.zeros((len(query_tokens), config.n_bins))
    for i in range(sims.shape[0]):
        # similarity 1.0 lands in the top bin
        bins = np.clip(np.digitize(sims[i], edges[1:-1]), 0, config.n_bins - 1)
        counts = np.bincount(bins, minlength=config.n_bins)
        hist[i] = np.log1p(counts)
    return hist


def drmm_forward(config: RankerConfig, embedding: EmbeddingTable,
                 leaves: Mapping[str, Value], query_tokens: Sequence[str],
                 doc_tokens: Sequence[str],
                 idf: Mapping[str, float]) -> Value:
    """Histogram -> feed-forward score per query term, idf-softmax gating."""
    if not query_tokens:
        raise ScoringError("empty query after tokenization")
    if not doc_tokens:
        raise ScoringError("empty document after tokenization")
    hist = matching_histograms(config, embedding, query_tokens, doc_tokens)
    w_gate = leaves["w_gate"]
    exps: list[Value] = []
    zs: list[Value] = []
    for i, term in enumerate(query_tokens):
        x = Value(hist[i])
        for li in range(len(config.hidden_sizes)):
            x = (leaves[f"W{li}"] @ x + leaves[f"c{li}"]).tanh()
        zs.append(x[0])
        exps.append((w_gate * idf.get(term, 0.0)).exp())
    denom = exps[0]
    for e in exps[1:]:
        denom = denom + e
    score = (exps[0] / denom) * zs[0]
    for e, z in zip(exps[1:], zs[1:]):
        score = score + (e / denom) * z
    return score


def forward(config: RankerConfig, embedding: EmbeddingTable,
            leaves: Mapping[str, Value], query_tokens: Sequence[str],
            doc_tokens: Sequence[str],
            idf: Mapping[str, float] | None = None) -> Value:
    if config.kind == "knrm":
        return knrm_forward(config, embedding, leaves, query_tokens, doc_tokens)
    return drmm_forward(config, embedding, leaves, query_tokens, doc_tokens, idf or {})


def combined_score(s_nn: float, s_bm25: float, alpha: float) -> float:
    """score_G = alpha * s_nn + (1 - alpha) * s_bm25."""
    if not (0.0 <= alpha <= 1.0):
        raise ConfigError(f"alpha must be in [0, 1], got {alpha}")
    return alpha * s_nn + (1.0 - alpha) * s_bm25


def minmax_normalize(scores: Sequence[float]) -> list[float]:
    """Per-query min-max scaling of BM25 scores onto [0, 1]; constant -> 0."""
    lo, hi = min(scores), max(scores)
    if hi == lo:
        return [0.0 for _ in scores]
    return [(s - lo) / (hi - lo) for s in scores]


def rerank(config: RankerConfig, embedding: EmbeddingTable, params: ParamVector,
           index: BM25Index, bm25_params: BM25Params, query: Query, k: int,
           alpha: float, idf: Mapping[str, float] | None = None) -> list[tuple[str, float]]:
    """Re-rank the BM25 top-k by the interpolated global score.

    BM25 scores are min-max normalized over the candidate list before
    interpolation; ties break by ascending doc_id.
    """
    if k < 1:
        raise ConfigError(f"k must be >= 1, got {k}")
    if not (0.0 <= alpha <= 1.0):
        raise ConfigError(f"alpha must be in [0, 1], got {alpha}")
    candidates = search_topk(index, bm25_params, query, k)
    if not candidates:
        return []
    if idf is None:
        idf = {t: index.idf(t) for t in query.tokens}
    normalized = minmax_normalize([s for _, s in candidates])
    leaves = params.leaves()
    from .corpus import Dataset  # not needed; doc tokens come from the index caller
    scored = []
    for (doc_id, _), s_bm25 in zip(candidates, normalized):
        doc_tokens = _doc_tokens_from_index(index, doc_id)
        s_nn = float(forward(config, embedding, leaves, query.tokens, doc_tokens, idf).data)
        scored.append((doc_id, combined_score(s_nn, s_bm25, alpha)))
    scored.sort(key=lambda x: (-x[1], x[0]))
    return scored


def _doc_tokens_from_index(index: BM25Index, doc_id: str) -> list[str]:
    raise NotImplementedError
