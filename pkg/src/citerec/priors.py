"""Turning raw retrieval scores into discriminative confidence priors.

Dense-retrieval scores are heavily compressed, so the reranker is fed a
rank-derived signal instead: candidates are reduced to their 1-indexed rank,
then remapped through an exponential decay ``prior = decay ** rank``. Two
ablation modes bypass the transform: ``raw_score`` passes scores through
unchanged and ``softmax`` normalizes them over the candidate list.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .profiler import RetrievalList

EXP_RANK = "exp_rank"
RAW_SCORE = "raw_score"
SOFTMAX = "softmax"
MODES = (EXP_RANK, RAW_SCORE, SOFTMAX)


@dataclass(frozen=True)
class PriorConfig:
    lambda_decay: float = 0.95
    mode: str = EXP_RANK
    k: int = 300

    def __post_init__(self):
        if not (0.0 < self.lambda_decay < 1.0):
            raise ValidationError(f"lambda_decay must be in (0, 1), got {self.lambda_decay}")
        if self.mode not in MODES:
            raise ValidationError(f"unknown prior mode {self.mode!r}")
        if self.k < 1:
            raise ValidationError(f"k must be >= 1, got {self.k}")


@dataclass
class PriorList:
    """(doc_id, rank, prior) per candidate, in retrieval order.

    An injected gold absent from the list is appended with rank ``len + 1``.
    """

    entries: list[tuple[str, int, float]]

    def doc_ids(self) -> list[str]:
        return [doc_id for doc_id, _, _ in self.entries]

    def priors(self) -> list[float]:
        return [p for _, _, p in self.entries]

    def prior_of(self, doc_id: str) -> float:
        for d, _, p in self.entries:
            if d == doc_id:
                return p
        raise ValidationError(f"doc id {doc_id!r} not in prior list")


def ranks_from_scores(scores: RetrievalList) -> list[tuple[str, int]]:
    """1-indexed ranks; the list is already sorted with the doc-id tie-break."""
    return [(doc_id, i + 1) for i, (doc_id, _) in enumerate(scores.entries)]


def prior_from_rank(config: PriorConfig, rank: int) -> float:
    if rank < 1:
        raise ValidationError(f"rank must be >= 1, got {rank}")
    return config.lambda_decay**rank


def priors_for_candidates(
    config: PriorConfig,
    scores: RetrievalList,
    injected: str | None = None,
) -> PriorList:
    """Priors for a candidate list, optionally force-including a gold doc.

    A gold already in the list keeps its earned rank. When absent it is
    appended at rank ``len(list) + 1``; under the score-based ablation modes
    it enters with score -1 (the cosine floor) before the transform.
    """
    doc_ids = [doc_id for doc_id, _ in scores.entries]
    raw = [score for _, score in scores.entries]
    inject = injected is not None and injected not in doc_ids
    if inject:
        doc_ids.append(injected)
        raw.append(-1.0)
    ranks = list(range(1, len(doc_ids) + 1))

    if config.mode == EXP_RANK:
        priors = [config.lambda_decay**r for r in ranks]
    elif config.mode == RAW_SCORE:
        priors = raw
    else:
        arr = np.asarray(raw, dtype=np.float64)
        shifted = np.exp(arr - arr.max())
        priors = list(shifted / shifted.sum())
    return PriorList(entries=list(zip(doc_ids, ranks, priors)))
