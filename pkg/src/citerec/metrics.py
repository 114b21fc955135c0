"""Ranking metrics for single-gold retrieval: MRR, Recall@K, NDCG@K.

Every query has exactly one relevant document, so NDCG@K reduces to the
closed form 1/log2(1 + rank) when the gold appears within the top K and 0
otherwise. A gold missing from a ranking contributes 0 to every metric.
All values are fractions in [0, 1]; the CLI formats percent tables.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

from .errors import ValidationError


@dataclass
class EvalReport:
    mrr: float
    recall_at: dict[int, float]
    ndcg_at: dict[int, float]
    n_queries: int
    per_query_ranks: dict[str, int | None] = field(default_factory=dict)

    def metric_value(self, key: str) -> float:
        key = key.lower()
        if key == "mrr":
            return self.mrr
        name, _, k_str = key.partition("@")
        k = int(k_str)
        if name == "recall":
            return self.recall_at[k]
        if name == "ndcg":
            return self.ndcg_at[k]
        raise ValidationError(f"unknown metric {key!r}")

    def as_dict(self, include_ranks: bool = False) -> dict:
        out = {
            "mrr": self.mrr,
            "recall_at": {str(k): v for k, v in sorted(self.recall_at.items())},
            "ndcg_at": {str(k): v for k, v in sorted(self.ndcg_at.items())},
            "n_queries": self.n_queries,
        }
        if include_ranks:
            out["per_query_ranks"] = dict(sorted(self.per_query_ranks.items()))
        return out

    def to_json(self, include_ranks: bool = False) -> str:
        return json.dumps(self.as_dict(include_ranks=include_ranks), indent=2, sort_keys=True) + "\n"

    def format_table(self, title: str = "") -> str:
        """Percent-formatted one-row table, metrics as columns."""
        ks = sorted(self.recall_at)
        headers = ["MRR"] + [f"R@{k}" for k in ks] + [f"N@{k}" for k in ks]
        values = [self.mrr] + [self.recall_at[k] for k in ks] + [self.ndcg_at[k] for k in ks]
        width = max(7, *(len(h) + 1 for h in headers))
        lines = []
        if title:
            lines.append(title)
        lines.append("".join(h.rjust(width) for h in headers))
        lines.append("".join(f"{100.0 * v:.2f}".rjust(width) for v in values))
        return "\n".join(lines) + "\n"


def evaluate(
    rankings: dict[str, list[str]],
    golds: dict[str, str],
    ks: list[int],
) -> EvalReport:
    """Aggregate metrics over per-query ranked doc-id lists.

    ``rankings`` and ``golds`` must cover exactly the same query ids.
    """
    if not ks or any(k < 1 for k in ks):
        raise ValidationError(f"ks must be positive integers, got {ks}")
    missing_rank = sorted(set(golds) - set(rankings))
    missing_gold = sorted(set(rankings) - set(golds))
    if missing_rank or missing_gold:
        raise ValidationError(
            f"queries without rankings: {missing_rank[:5]}; without golds: {missing_gold[:5]}"
        )
    if not rankings:
        raise ValidationError("no queries to evaluate")

    ks = sorted(set(ks))
    n = len(rankings)
    rr_sum = 0.0
    hit_counts = {k: 0 for k in ks}
    ndcg_sums = {k: 0.0 for k in ks}
    per_query: dict[str, int | None] = {}
    for qid in sorted(rankings):
        ranked = rankings[qid]
        gold = golds[qid]
        try:
            rank = ranked.index(gold) + 1
        except ValueError:
            rank = None
        per_query[qid] = rank
        if rank is None:
            continue
        rr_sum += 1.0 / rank
        gain = 1.0 / math.log2(1.0 + rank)
        for k in ks:
            if rank <= k:
                hit_counts[k] += 1
                ndcg_sums[k] += gain

    return EvalReport(
        mrr=rr_sum / n,
        recall_at={k: hit_counts[k] / n for k in ks},
        ndcg_at={k: ndcg_sums[k] / n for k in ks},
        n_queries=n,
        per_query_ranks=per_query,
    )
