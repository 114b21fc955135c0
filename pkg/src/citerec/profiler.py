"""Non-learnable first-stage retrieval over profile-enriched document vectors.

Each document's base vector is augmented with the average of signals from the
papers that cite it: for every inward citation, a weighted mix of the citation
context vector (weight ``alpha``) and the citing paper's own vector (weight
``beta``). Uncited documents keep their base vector bit-for-bit, which handles
the cold start for new papers. Queries are scored by exact cosine similarity
against the enriched matrix.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

import numpy as np

from . import _kernels
from .corpus import Corpus, Query
from .encoder import EncoderConfig, encode_text
from .errors import NotFoundError, ValidationError
from .vectors import EmbeddingMatrix, load_embeddings, write_embeddings

_WEIGHT_TOL = 1e-9


@dataclass(frozen=True)
class ProfileWeights:
    """Mixing weights: (alpha, beta) for enrichment, (gamma, delta) for queries.

    Each pair must sum to 1. ``alpha = beta = 0`` is additionally allowed as
    the explicit enrichment-off ablation, under which every profiled vector
    equals its base vector.
    """

    alpha: float = 0.7
    beta: float = 0.3
    gamma: float = 0.7
    delta: float = 0.3

    def __post_init__(self):
        for name, v in (("alpha", self.alpha), ("beta", self.beta), ("gamma", self.gamma), ("delta", self.delta)):
            if not (0.0 <= v <= 1.0):
                raise ValidationError(f"{name} must be in [0, 1], got {v}")
        ab = self.alpha + self.beta
        if abs(ab - 1.0) > _WEIGHT_TOL and ab != 0.0:
            raise ValidationError(f"alpha + beta must equal 1 (or both be 0), got {ab}")
        if abs(self.gamma + self.delta - 1.0) > _WEIGHT_TOL:
            raise ValidationError(f"gamma + delta must equal 1, got {self.gamma + self.delta}")

    @property
    def enrichment_disabled(self) -> bool:
        return self.alpha == 0.0 and self.beta == 0.0

    def as_dict(self) -> dict:
        return {"alpha": self.alpha, "beta": self.beta, "gamma": self.gamma, "delta": self.delta}


@dataclass
class RetrievalList:
    """Top-k candidates for one query, scores descending, doc_id tie-break."""

    query_id: str
    entries: list[tuple[str, float]]
    k: int

    def doc_ids(self) -> list[str]:
        return [doc_id for doc_id, _ in self.entries]


class ProfiledIndex:
    """Profile-enriched document matrix, rows sorted by doc id."""

    def __init__(self, doc_ids: list[str], vectors: np.ndarray, weights_used: ProfileWeights):
        if sorted(doc_ids) != doc_ids:
            raise ValidationError("ProfiledIndex doc_ids must be sorted ascending")
        self.doc_ids = doc_ids
        self.vectors = np.ascontiguousarray(vectors, dtype=np.float32)
        if self.vectors.shape[0] != len(doc_ids):
            raise ValidationError("index row count does not match doc_ids")
        if not np.isfinite(self.vectors).all():
            raise ValidationError("profiled index contains NaN or Inf")
        self.weights_used = weights_used
        self.row_of = {doc_id: i for i, doc_id in enumerate(doc_ids)}
        self.norms = np.linalg.norm(self.vectors.astype(np.float64), axis=1)

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def vector(self, doc_id: str) -> np.ndarray:
        try:
            return self.vectors[self.row_of[doc_id]]
        except KeyError:
            raise NotFoundError(f"doc id {doc_id!r} not in index") from None

    def save(self, directory: str | Path, corpus_hash: str = "") -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        write_embeddings(
            directory / "index.cvec",
            EmbeddingMatrix(dim=self.dim, keys=self.doc_ids, vectors=self.vectors),
        )
        manifest = {
            "dim": self.dim,
            "n_docs": len(self.doc_ids),
            "weights": self.weights_used.as_dict(),
            "corpus_hash": corpus_hash,
        }
        with open(directory / "manifest.json", "w", encoding="utf-8") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, directory: str | Path) -> "ProfiledIndex":
        directory = Path(directory)
        matrix = load_embeddings(directory / "index.cvec")
        with open(directory / "manifest.json", "r", encoding="utf-8") as fh:
            manifest = json.load(fh)
        weights = ProfileWeights(**manifest["weights"])
        return cls(doc_ids=matrix.keys, vectors=matrix.vectors, weights_used=weights)


def corpus_fingerprint(corpus: Corpus) -> str:
    h = hashlib.sha256()
    for doc_id in sorted(corpus.documents):
        doc = corpus.documents[doc_id]
        h.update(f"{doc.doc_id}\x1f{doc.title}\x1f{doc.abstract}\x1f{doc.pub_date}\n".encode())
    for e in corpus.edges:
        h.update(f"{e.citing_id}\x1f{e.cited_id}\x1f{e.context_text}\n".encode())
    return h.hexdigest()[:16]


def _context_lookup(context_vectors, context_text: str) -> np.ndarray:
    if isinstance(context_vectors, EmbeddingMatrix):
        return context_vectors.row(context_text)
    try:
        return context_vectors[context_text]
    except KeyError:
        raise NotFoundError(f"no vector for context {context_text!r}") from None


def enrichment_sums(
    corpus: Corpus,
    base_vectors: EmbeddingMatrix,
    context_vectors: Mapping[str, np.ndarray] | EmbeddingMatrix,
) -> tuple[list[str], np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Precompute the weight-independent parts of profile enrichment.

    Returns (doc_ids, base_matrix, sum_ctx, sum_citer, counts); a profiled
    matrix for any (alpha, beta) then follows from one fused multiply-add.
    Splitting it this way keeps weight sweeps cheap: the edge pass runs once.
    """
    doc_ids = sorted(corpus.documents)
    dim = base_vectors.dim
    base = np.empty((len(doc_ids), dim), dtype=np.float32)
    row_of = {}
    for i, doc_id in enumerate(doc_ids):
        base[i] = base_vectors.row(doc_id)
        row_of[doc_id] = i

    ctx_texts: list[str] = []
    ctx_row_of: dict[str, int] = {}
    cited_rows = np.empty(len(corpus.edges), dtype=np.int64)
    citing_rows = np.empty(len(corpus.edges), dtype=np.int64)
    ctx_rows = np.empty(len(corpus.edges), dtype=np.int64)
    for e, edge in enumerate(corpus.edges):
        cited_rows[e] = row_of[edge.cited_id]
        citing_rows[e] = row_of[edge.citing_id]
        if edge.context_text not in ctx_row_of:
            ctx_row_of[edge.context_text] = len(ctx_texts)
            ctx_texts.append(edge.context_text)
        ctx_rows[e] = ctx_row_of[edge.context_text]
    if ctx_texts:
        ctx_matrix = np.empty((len(ctx_texts), dim), dtype=np.float32)
        for i, text in enumerate(ctx_texts):
            vec = np.asarray(_context_lookup(context_vectors, text), dtype=np.float32)
            if vec.shape != (dim,):
                raise ValidationError(
                    f"context vector dim {vec.shape} != base dim {dim} for {text!r}"
                )
            ctx_matrix[i] = vec
    else:
        ctx_matrix = np.empty((0, dim), dtype=np.float32)

    sum_ctx, sum_citer, counts = _kernels.accumulate_profile_sums(
        cited_rows, citing_rows, ctx_rows, base, ctx_matrix
    )
    return doc_ids, base, sum_ctx, sum_citer, counts


def profiled_matrix_from_sums(
    base: np.ndarray,
    sum_ctx: np.ndarray,
    sum_citer: np.ndarray,
    counts: np.ndarray,
    weights: ProfileWeights,
) -> np.ndarray:
    """Combine precomputed sums into the enriched matrix for given weights.

    Uncited rows are copied from the base matrix untouched (bit-identical);
    cited rows get base + (alpha * mean context + beta * mean citer).
    """
    out = base.copy()
    cited = counts > 0
    if weights.enrichment_disabled or not cited.any():
        return out
    denom = counts[cited, None].astype(np.float64)
    add = (weights.alpha * sum_ctx[cited] + weights.beta * sum_citer[cited]) / denom
    out[cited] = (base[cited].astype(np.float64) + add).astype(np.float32)
    return out


def build_profiled_index(
    corpus: Corpus,
    base_vectors: EmbeddingMatrix,
    context_vectors: Mapping[str, np.ndarray] | EmbeddingMatrix,
    weights: ProfileWeights,
) -> ProfiledIndex:
    doc_ids, base, sum_ctx, sum_citer, counts = enrichment_sums(corpus, base_vectors, context_vectors)
    matrix = profiled_matrix_from_sums(base, sum_ctx, sum_citer, counts, weights)
    return ProfiledIndex(doc_ids=doc_ids, vectors=matrix, weights_used=weights)


def compose_query_vector(
    query: Query,
    encoder,
    weights: ProfileWeights,
) -> np.ndarray:
    """gamma * vec(context) + delta * vec(title + abstract), float32.

    ``encoder`` may be an EncoderConfig, a CVEC EmbeddingMatrix (keyed
    ``qctx:<qid>`` / ``qmeta:<qid>``), or any pipeline vector provider.
    """
    meta_text = f"{query.title} {query.abstract}"
    if isinstance(encoder, EncoderConfig):
        ctx_vec = encode_text(encoder, query.context_text).astype(np.float64)
        meta_vec = encode_text(encoder, meta_text).astype(np.float64)
    elif isinstance(encoder, EmbeddingMatrix):
        ctx_vec = encoder.row(f"qctx:{query.query_id}").astype(np.float64)
        meta_vec = encoder.row(f"qmeta:{query.query_id}").astype(np.float64)
    else:
        ctx_vec = encoder.query_context_vector(query.query_id, query.context_text).astype(np.float64)
        meta_vec = encoder.query_meta_vector(query.query_id, meta_text).astype(np.float64)
    if ctx_vec.shape != meta_vec.shape:
        raise ValidationError("query context/meta vector dims differ")
    return (weights.gamma * ctx_vec + weights.delta * meta_vec).astype(np.float32)


def retrieve(
    index: ProfiledIndex,
    query_vector: np.ndarray,
    admissible: set[str],
    k: int,
    query_id: str = "",
) -> RetrievalList:
    """Exact top-k by cosine over the admissible documents only."""
    if k < 1:
        raise ValidationError(f"k must be >= 1, got {k}")
    if not admissible:
        raise ValidationError("admissible set is empty")
    rows = np.empty(len(admissible), dtype=np.int64)
    for i, doc_id in enumerate(sorted(admissible)):
        r = index.row_of.get(doc_id)
        if r is None:
            raise NotFoundError(f"admissible doc id {doc_id!r} not in index")
        rows[i] = r
    scores = _kernels.cosine_scores(
        index.vectors, index.norms, rows, np.asarray(query_vector, dtype=np.float64)
    )
    # rows are in ascending doc_id order, so a stable sort on -score breaks
    # ties by ascending doc id
    order = np.argsort(-scores, kind="stable")[: min(k, rows.shape[0])]
    entries = [(index.doc_ids[rows[i]], float(scores[i])) for i in order]
    return RetrievalList(query_id=query_id, entries=entries, k=k)


def sweep_profile_weights(
    corpus: Corpus,
    base_vectors: EmbeddingMatrix,
    context_vectors: Mapping[str, np.ndarray] | EmbeddingMatrix,
    queries: list[Query],
    query_vector_fn,
    admissible_fn,
    grid: list[ProfileWeights],
    metric: str,
    k: int,
) -> list[dict]:
    """Evaluate one retrieval metric for every weight setting in the grid.

    ``query_vector_fn(query, weights)`` and ``admissible_fn(query)`` decouple
    the sweep from encoder provenance and from the split protocol. Returns one
    row per grid point: the weights, the metric value, and the metric name.
    """
    from .metrics import evaluate  # local import to avoid a cycle

    if not grid:
        raise ValidationError("sweep grid is empty")
    if not queries:
        raise ValidationError("sweep needs at least one query")
    metric_key = metric.lower()
    doc_ids, base, sum_ctx, sum_citer, counts = enrichment_sums(corpus, base_vectors, context_vectors)
    golds = {q.query_id: q.gold_cited_id for q in queries}
    rows = []
    for weights in grid:
        matrix = profiled_matrix_from_sums(base, sum_ctx, sum_citer, counts, weights)
        index = ProfiledIndex(doc_ids=doc_ids, vectors=matrix, weights_used=weights)
        rankings = {}
        for q in queries:
            rl = retrieve(index, query_vector_fn(q, weights), admissible_fn(q), k, query_id=q.query_id)
            rankings[q.query_id] = rl.doc_ids()
        report = evaluate(rankings, golds, ks=_metric_ks(metric_key))
        rows.append({**weights.as_dict(), "metric": metric_key, "value": report.metric_value(metric_key)})
    return rows


def _metric_ks(metric_key: str) -> list[int]:
    if metric_key == "mrr":
        return [10]
    try:
        _, k_str = metric_key.split("@", 1)
        return [int(k_str)]
    except ValueError:
        raise ValidationError(f"unknown metric {metric_key!r} (use mrr, recall@K or ndcg@K)") from None
