"""Train/validation/test construction and the inductive candidate protocol.

In the inductive setting every evaluation query may only be answered from
documents published strictly before it (day granularity), and never from the
query's own citing paper. Evaluation queries whose gold citation is not
reachable under those constraints are dropped and counted; training queries
are kept regardless because training injects the gold into candidate lists.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from datetime import date as Date
from pathlib import Path

from .corpus import Corpus, Query
from .errors import NotFoundError, ValidationError

TRANSDUCTIVE = "transductive"
INDUCTIVE = "inductive"


@dataclass(frozen=True)
class SplitConfig:
    mode: str = INDUCTIVE
    val_fraction: float = 0.1
    test_fraction: float = 0.1
    strategy: str = "by_date"  # or "by_random"
    seed: int = 0
    # When true, training queries also get temporally filtered candidate
    # corpora (their golds are still never dropped).
    filter_train: bool = False

    def __post_init__(self):
        if self.mode not in (TRANSDUCTIVE, INDUCTIVE):
            raise ValidationError(f"unknown split mode {self.mode!r}")
        if self.strategy not in ("by_date", "by_random"):
            raise ValidationError(f"unknown split strategy {self.strategy!r}")
        if not (0.0 < self.val_fraction < 1.0 and 0.0 < self.test_fraction < 1.0):
            raise ValidationError("val/test fractions must be in (0, 1)")
        if self.val_fraction + self.test_fraction >= 1.0:
            raise ValidationError("val_fraction + test_fraction must be < 1")


@dataclass
class SplitResult:
    config: SplitConfig
    train_queries: list[Query]
    val_queries: list[Query]
    test_queries: list[Query]
    corpus_ids: set[str]
    dropped: dict[str, int]
    _doc_dates: dict[str, Date] = field(repr=False, default_factory=dict)
    _membership: dict[str, str] = field(init=False, repr=False)

    def __post_init__(self):
        self._membership = {}
        for name, queries in (
            ("train", self.train_queries),
            ("val", self.val_queries),
            ("test", self.test_queries),
        ):
            for q in queries:
                self._membership[q.query_id] = name

    def split_of(self, query: Query) -> str:
        try:
            return self._membership[query.query_id]
        except KeyError:
            raise NotFoundError(f"query {query.query_id!r} is not part of this split") from None

    def admissible_corpus(self, query: Query) -> set[str]:
        """Doc ids this query is allowed to retrieve from."""
        part = self.split_of(query)
        if self.config.mode == TRANSDUCTIVE:
            return set(self._doc_dates)
        if part == "train" and not self.config.filter_train:
            return set(self._doc_dates)
        q_date = query.pub_date
        source = query.source_doc_id
        return {
            doc_id
            for doc_id, d in self._doc_dates.items()
            if d < q_date and doc_id != source
        }

    def queries_of(self, part: str) -> list[Query]:
        try:
            return {"train": self.train_queries, "val": self.val_queries, "test": self.test_queries}[part]
        except KeyError:
            raise ValidationError(f"unknown split part {part!r}") from None

    def manifest(self) -> dict:
        return {
            "mode": self.config.mode,
            "strategy": self.config.strategy,
            "counts": {
                "train": len(self.train_queries),
                "val": len(self.val_queries),
                "test": len(self.test_queries),
            },
            "dropped": dict(self.dropped),
            "corpus_size": len(self.corpus_ids),
            "query_ids": {
                "train": [q.query_id for q in self.train_queries],
                "val": [q.query_id for q in self.val_queries],
                "test": [q.query_id for q in self.test_queries],
            },
        }

    def write_manifest(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.manifest(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def admissible_corpus(split: SplitResult, query: Query) -> set[str]:
    return split.admissible_corpus(query)


def build_split(corpus: Corpus, queries: list[Query], config: SplitConfig) -> SplitResult:
    if not queries:
        raise ValidationError("cannot build a split from an empty query list")
    unresolved = sorted(q.query_id for q in queries if q.gold_cited_id not in corpus.documents)
    if unresolved:
        raise ValidationError(
            f"{len(unresolved)} queries have golds outside the corpus, e.g. {unresolved[:5]}"
        )

    if config.strategy == "by_date":
        ordered = sorted(queries, key=lambda q: (q.pub_date, q.query_id))
    else:
        ordered = sorted(queries, key=lambda q: q.query_id)
        random.Random(config.seed).shuffle(ordered)

    n = len(ordered)
    n_val = int(round(n * config.val_fraction))
    n_test = int(round(n * config.test_fraction))
    n_train = n - n_val - n_test
    train = ordered[:n_train]
    val = ordered[n_train : n_train + n_val]
    test = ordered[n_train + n_val :]

    doc_dates = {doc_id: doc.pub_date for doc_id, doc in corpus.documents.items()}
    dropped = {"val": 0, "test": 0}

    if config.mode == TRANSDUCTIVE:
        corpus_ids = set(doc_dates)
        result_val, result_test = val, test
    else:
        eval_dates = [q.pub_date for q in val + test]
        if eval_dates:
            earliest = min(eval_dates)
            corpus_ids = {doc_id for doc_id, d in doc_dates.items() if d < earliest}
        else:
            corpus_ids = set(doc_dates)

        def keep(q: Query) -> bool:
            gold_date = doc_dates[q.gold_cited_id]
            return gold_date < q.pub_date and q.gold_cited_id != q.source_doc_id

        result_val = [q for q in val if keep(q)]
        result_test = [q for q in test if keep(q)]
        dropped["val"] = len(val) - len(result_val)
        dropped["test"] = len(test) - len(result_test)
        if (val or test) and not (result_val or result_test):
            raise ValidationError(
                "all evaluation queries were dropped: no gold citation predates its "
                "query; check the date fields of the corpus and queries"
            )

    return SplitResult(
        config=config,
        train_queries=train,
        val_queries=result_val,
        test_queries=result_test,
        corpus_ids=corpus_ids,
        dropped=dropped,
        _doc_dates=doc_dates,
    )
