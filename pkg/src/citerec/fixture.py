"""Synthetic corpus generator with a planted citation-context signal.

The generated world has clustered topics, each split into subtopics. The
community describes every paper with "tag" words that appear only in the
citation contexts written by its citers, never in the paper's own text, so
retrieval that ignores the citation graph cannot separate a tagged query's
gold from its topic peers while profile enrichment can.

Every document's text has the same token budget: a handle word repeated three
times (papers name their own method), one "related work" mention of an
earlier paper's handle, and fixed-vocabulary topic/subtopic words. Constant
candidate length makes lexical overlap between a query and a candidate the
only thing that moves the pair-encoding norm, which is exactly the signal a
reranker can pick up from hashed features without per-document weights.

Queries come in two styles. Tagged queries (the majority) lean on the gold's
community tags and carry a variable amount of filler, which spreads raw
cosine scales across queries. Contrast-style queries originate from follow-up
papers whose own abstract mentions the parent's handle: their contexts carry
contrast markers but neither tags nor the handle, so the first stage sees the
match only through the down-weighted metadata side and ranks the gold poorly,
while the pair text (metadata at full strength) exposes it clearly. A
reranker whose gate reads the contrast markers can learn to distrust the
prior exactly there. Topic surveys accumulate broad tag-smeared profiles and
crowd the top ranks without ever being the right answer.

Everything derives from one seed; identical arguments give identical files.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from datetime import date as Date
from pathlib import Path

import numpy as np

from .corpus import Query, write_queries

SCAFFOLD = ["method", "model", "results", "analysis", "evaluation", "data", "approach", "setting"]
SURVEY_MARKERS = ["survey", "overview", "landscape"]
CONTRAST_MARKERS = ["contrast", "unlike", "departs", "differs"]


@dataclass
class FixtureSpec:
    n_topics: int = 20
    docs_per_topic: int = 100
    surveys_per_topic: int = 3
    subtopics: int = 4
    n_queries: int = 900
    topic_vocab: int = 18
    subtopic_vocab: int = 6
    tags_per_doc: int = 4
    contrast_fraction: float = 0.3
    seed: int = 7

    @property
    def n_docs(self) -> int:
        return self.n_topics * (self.docs_per_topic + self.surveys_per_topic)


def _rand_date(rng: np.random.Generator, lo: Date, hi: Date) -> Date:
    return Date.fromordinal(int(rng.integers(lo.toordinal(), hi.toordinal() + 1)))


def _pick(rng: np.random.Generator, pool: list[str], n: int) -> list[str]:
    n = min(n, len(pool))
    idx = rng.choice(len(pool), size=n, replace=False)
    return [pool[i] for i in idx]


def generate_fixture(out_dir: str | Path, spec: FixtureSpec | None = None) -> dict:
    """Write documents/edges/queries JSONL plus a runnable config; returns stats."""
    spec = spec or FixtureSpec()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(spec.seed)

    topic_words = [[f"t{t}w{j}" for j in range(spec.topic_vocab)] for t in range(spec.n_topics)]
    sub_words = [
        [[f"t{t}s{s}w{j}" for j in range(spec.subtopic_vocab)] for s in range(spec.subtopics)]
        for t in range(spec.n_topics)
    ]
    all_noise = SCAFFOLD + [w for words in topic_words for w in words[:3]]

    documents: list[dict] = []
    tags: dict[str, list[str]] = {}
    handle: dict[str, str] = {}
    regulars: list[list[dict]] = [[] for _ in range(spec.n_topics)]
    surveys: list[list[dict]] = [[] for _ in range(spec.n_topics)]

    doc_idx = 0
    for t in range(spec.n_topics):
        for _ in range(spec.docs_per_topic):
            doc_id = f"D{doc_idx:05d}"
            doc = {
                "id": doc_id,
                "date": _rand_date(rng, Date(1995, 1, 1), Date(2015, 12, 31)).isoformat(),
                "topic": t,
                "sub": int(rng.integers(spec.subtopics)),
                "survey": False,
            }
            tags[doc_id] = [f"g{doc_idx:05d}x{j}" for j in range(spec.tags_per_doc)]
            handle[doc_id] = f"h{doc_idx:05d}"
            regulars[t].append(doc)
            documents.append(doc)
            doc_idx += 1
        for _ in range(spec.surveys_per_topic):
            doc_id = f"S{doc_idx:05d}"
            doc = {
                "id": doc_id,
                "date": _rand_date(rng, Date(1995, 1, 1), Date(2008, 12, 31)).isoformat(),
                "topic": t,
                "sub": -1,
                "survey": True,
            }
            tags[doc_id] = [f"g{doc_idx:05d}x{j}" for j in range(spec.tags_per_doc)]
            handle[doc_id] = f"h{doc_idx:05d}"
            surveys[t].append(doc)
            documents.append(doc)
            doc_idx += 1

    for t in range(spec.n_topics):
        regulars[t].sort(key=lambda d: (d["date"], d["id"]))
        surveys[t].sort(key=lambda d: (d["date"], d["id"]))

    # "Related work" mention: every document names one earlier paper's handle
    # twice in its abstract. Same-topic mentions of cited papers make their
    # sources eligible for contrast-style queries later.
    by_date = sorted(documents, key=lambda d: (d["date"], d["id"]))
    parent_of: dict[str, dict] = {}
    for i, doc in enumerate(by_date):
        if i == 0:
            continue
        same_topic = [d for d in by_date[:i] if d["topic"] == doc["topic"] and not d["survey"]]
        if not doc["survey"] and same_topic and rng.random() < 0.55:
            parent = same_topic[int(rng.integers(len(same_topic)))]
        else:
            parent = by_date[int(rng.integers(i))]
        parent_of[doc["id"]] = parent

    def doc_text(doc: dict) -> tuple[str, str]:
        """Title (4 tokens) and abstract (15 tokens), constant budget.

        The handle appears five times total: papers keep naming their own
        method. Constant length keeps pair-encoding norms comparable, so
        lexical overlap is the only thing that moves them.
        """
        t = doc["topic"]
        h = handle[doc["id"]]
        parent = parent_of.get(doc["id"])
        mention = handle[parent["id"]] if parent else "origin"
        if doc["survey"]:
            themed = _pick(rng, topic_words[t], 7)
            title = " ".join(SURVEY_MARKERS[:2] + themed[:1] + [h])
            abstract = " ".join(
                themed[1:7] + [SURVEY_MARKERS[2]] + _pick(rng, SCAFFOLD, 2) + [h, h, h, h, mention, mention]
            )
        else:
            themed = _pick(rng, topic_words[t], 6)
            subs = _pick(rng, sub_words[t][doc["sub"]], 4)
            title = " ".join(themed[:2] + subs[:1] + [h])
            abstract = " ".join(
                themed[2:6] + subs[1:4] + _pick(rng, SCAFFOLD, 2) + [h, h, h, h, mention, mention]
            )
        return title, abstract

    for doc in documents:
        doc["title"], doc["abstract"] = doc_text(doc)

    def regular_context(citer_topic: int, cited: dict) -> str:
        tokens = _pick(rng, topic_words[citer_topic], 2)
        tokens += _pick(rng, sub_words[cited["topic"]][cited["sub"]], 2)
        tokens += _pick(rng, tags[cited["id"]], 3)
        if rng.random() < 0.5:
            tokens.append(handle[cited["id"]])
        tokens += _pick(rng, SCAFFOLD, 1)
        if rng.random() < 0.2:
            tokens += _pick(rng, all_noise, 1)
        rng.shuffle(tokens)
        return " ".join(tokens)

    def survey_context(citer_topic: int, earlier: list[dict]) -> str:
        tokens = _pick(rng, topic_words[citer_topic], 2)
        tokens += _pick(rng, SURVEY_MARKERS, 1)
        for doc in _pick_docs(rng, earlier, 2):
            tokens += _pick(rng, tags[doc["id"]], 2)
        tokens += _pick(rng, SCAFFOLD, 1)
        rng.shuffle(tokens)
        return " ".join(tokens)

    edges: list[dict] = []
    for t in range(spec.n_topics):
        regs = regulars[t]
        for i, doc in enumerate(regs):
            if i == 0:
                continue
            cite_pool = list(rng.choice(i, size=min(int(rng.integers(1, 6)), i), replace=False))
            parent = parent_of.get(doc["id"])
            if parent is not None and not parent["survey"] and parent["topic"] == t:
                parent_idx = regs.index(parent)
                if parent_idx < i and parent_idx not in cite_pool:
                    cite_pool.append(parent_idx)
            for j in cite_pool:
                cited = regs[j]
                edges.append(
                    {"citing": doc["id"], "cited": cited["id"], "context": regular_context(t, cited)}
                )
            earlier_surveys = [s for s in surveys[t] if s["date"] < doc["date"]]
            if earlier_surveys and rng.random() < 0.9:
                survey = earlier_surveys[int(rng.integers(len(earlier_surveys)))]
                edges.append(
                    {"citing": doc["id"], "cited": survey["id"], "context": survey_context(t, regs[:i])}
                )

    def tagged_query_context(t: int, gold: dict) -> str:
        tokens = _pick(rng, topic_words[t], 1)
        tokens += _pick(rng, sub_words[t][gold["sub"]], 2)
        tokens += _pick(rng, tags[gold["id"]], int(rng.integers(3, 6)))
        if rng.random() < 0.85:
            tokens += [handle[gold["id"]], handle[gold["id"]]]
        tokens += _pick(rng, SCAFFOLD, 1)
        tokens += _pick(rng, all_noise, int(rng.integers(2, 9)))
        rng.shuffle(tokens)
        return " ".join(tokens)

    def contrast_query_context(t: int, gold: dict) -> str:
        tokens = _pick(rng, topic_words[t], 1)
        tokens += _pick(rng, sub_words[t][gold["sub"]], 2)
        tokens += _pick(rng, CONTRAST_MARKERS, 2)
        tokens += _pick(rng, SCAFFOLD, 1)
        tokens += _pick(rng, all_noise, int(rng.integers(0, 5)))
        rng.shuffle(tokens)
        return " ".join(tokens)

    cited_ids = {e["cited"] for e in edges}
    followups: list[tuple[int, dict, dict]] = []
    for t in range(spec.n_topics):
        regs = regulars[t]
        floor = len(regs) // 3
        for i, doc in enumerate(regs):
            parent = parent_of.get(doc["id"])
            if (
                i >= floor
                and parent is not None
                and not parent["survey"]
                and parent["topic"] == t
                and parent["id"] in cited_ids
                and parent["date"] < doc["date"]
            ):
                followups.append((t, doc, parent))

    queries: list[Query] = []
    per_source_count: dict[str, int] = {}
    n_contrast = 0
    attempts = 0
    while len(queries) < spec.n_queries and attempts < spec.n_queries * 50:
        attempts += 1
        if followups and rng.random() < spec.contrast_fraction:
            t, src, gold = followups[int(rng.integers(len(followups)))]
            context = contrast_query_context(t, gold)
            n_contrast += 1
        else:
            t = int(rng.integers(spec.n_topics))
            regs = regulars[t]
            if len(regs) < 4:
                continue
            src_idx = int(rng.integers(len(regs) // 3, len(regs)))
            src = regs[src_idx]
            golds = [d for d in regs[:src_idx] if d["id"] in cited_ids and d["date"] < src["date"]]
            if not golds:
                continue
            gold = golds[int(rng.integers(len(golds)))]
            context = tagged_query_context(t, gold)
        seq = per_source_count.get(src["id"], 0)
        per_source_count[src["id"]] = seq + 1
        queries.append(
            Query(
                query_id=f"{src['id']}#{seq}",
                context_text=context,
                title=src["title"],
                abstract=src["abstract"],
                pub_date=Date.fromisoformat(src["date"]),
                gold_cited_id=gold["id"],
            )
        )

    with open(out_dir / "documents.jsonl", "w", encoding="utf-8") as fh:
        for doc in documents:
            fh.write(
                json.dumps(
                    {"id": doc["id"], "title": doc["title"], "abstract": doc["abstract"], "date": doc["date"]}
                )
                + "\n"
            )
    with open(out_dir / "edges.jsonl", "w", encoding="utf-8") as fh:
        for e in edges:
            fh.write(json.dumps(e) + "\n")
    write_queries(out_dir / "queries.jsonl", queries)

    config = default_fixture_config(out_dir, seed=spec.seed)
    with open(out_dir / "config.json", "w", encoding="utf-8") as fh:
        json.dump(config, fh, indent=2, sort_keys=True)
        fh.write("\n")

    return {
        "documents": len(documents),
        "edges": len(edges),
        "queries": len(queries),
        "contrast_queries": n_contrast,
        "config": str(out_dir / "config.json"),
    }


def _pick_docs(rng: np.random.Generator, pool: list[dict], n: int) -> list[dict]:
    if not pool:
        return []
    n = min(n, len(pool))
    idx = rng.choice(len(pool), size=n, replace=False)
    return [pool[i] for i in idx]


def default_fixture_config(data_dir: str | Path, seed: int = 7) -> dict:
    """Pipeline config tuned for the bundled fixture's scale."""
    data_dir = Path(data_dir)
    return {
        "seed": seed,
        "paths": {
            "documents": str(data_dir / "documents.jsonl"),
            "edges": str(data_dir / "edges.jsonl"),
            "queries": str(data_dir / "queries.jsonl"),
            "workdir": str(data_dir / "work"),
        },
        "split": {"mode": "inductive", "val_fraction": 0.15, "test_fraction": 0.15, "strategy": "by_date"},
        "encoder": {"dim": 768, "ngram_min": 1, "ngram_max": 1},
        "weights": {"alpha": 0.7, "beta": 0.3, "gamma": 0.7, "delta": 0.3},
        "prior": {"lambda_decay": 0.95, "mode": "exp_rank", "k": 100},
        "davinci": {
            "d_enc2": 768,
            "d_h": 64,
            "margin": 0.1,
            "negatives": 4,
            "epochs": 15,
            "batch_size": 64,
            "learning_rate": 0.003,
            "tower_depth": 2,
        },
        "ks_retrieval": [10, 50, 100],
        "ks_rerank": [5, 10, 20],
    }
