"""Stage orchestration: ingest -> split -> profile -> retrieve -> train ->
rerank -> evaluate, with file-based handoff between retrieval and reranking.

Retrieval lists are persisted as JSON lines and are the only coupling channel
into the reranker, so external rerankers can consume the exact same
candidates. Every artifact carries a manifest with the config hash and seed;
stages refuse to consume artifacts produced under a different config.
"""

from __future__ import annotations

import dataclasses
import json
from functools import cached_property
from pathlib import Path

import numpy as np

from .config import PipelineConfig
from .corpus import Corpus, Query, ingest_corpus, load_queries
from .encoder import FileVectorProvider, HashVectorProvider
from .errors import ValidationError
from .metrics import EvalReport, evaluate
from .priors import priors_for_candidates
from .profiler import (
    ProfiledIndex,
    RetrievalList,
    build_profiled_index,
    compose_query_vector,
    corpus_fingerprint,
    retrieve,
)
from .reranker import (
    CandidateBatch,
    DavinciConfig,
    DavinciModel,
    TrainResult,
    build_training_set,
    new_model,
    query_side_text,
    rerank_scored,
    resolve_ablation,
    save_model,
    train,
)
from .split import SplitResult, build_split
from .vectors import EmbeddingMatrix, load_embeddings


class CachingPairProvider:
    """Memoizes pair vectors per (query, candidate); other lookups pass through."""

    def __init__(self, inner):
        self.inner = inner
        self.dim = inner.dim
        self._pair_cache: dict[tuple[str, str], np.ndarray] = {}

    def doc_vector(self, doc_id, text):
        return self.inner.doc_vector(doc_id, text)

    def context_vector(self, context_text):
        return self.inner.context_vector(context_text)

    def query_context_vector(self, query_id, text):
        return self.inner.query_context_vector(query_id, text)

    def query_meta_vector(self, query_id, text):
        return self.inner.query_meta_vector(query_id, text)

    def pair_vector(self, query_id, doc_id, query_text, candidate_text):
        key = (query_id, doc_id)
        hit = self._pair_cache.get(key)
        if hit is None:
            hit = self.inner.pair_vector(query_id, doc_id, query_text, candidate_text)
            self._pair_cache[key] = hit
        return hit


def make_provider(config: PipelineConfig) -> CachingPairProvider:
    if config.encoder_source == "hash":
        inner = HashVectorProvider(config.encoder)
    else:
        inner = FileVectorProvider(load_embeddings(config.encoder_source[len("file:") :]))
    return CachingPairProvider(inner)


def _dump_json(path: Path, data: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(data, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_stage_manifest(target: Path, config: PipelineConfig, stage: str) -> None:
    _dump_json(
        Path(str(target) + ".manifest.json"),
        {"stage": stage, "config_hash": config.config_hash(), "seed": config.seed},
    )


def check_stage_manifest(target: Path, config: PipelineConfig) -> None:
    manifest_path = Path(str(target) + ".manifest.json")
    if not manifest_path.exists():
        raise ValidationError(f"missing manifest for artifact {target}")
    with open(manifest_path, "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    if manifest.get("config_hash") != config.config_hash():
        raise ValidationError(
            f"artifact {target} was produced under config {manifest.get('config_hash')}, "
            f"current config is {config.config_hash()}; refusing to mix runs"
        )


def write_retrievals(path: Path, retrievals: dict[str, RetrievalList]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for qid in sorted(retrievals):
            rl = retrievals[qid]
            fh.write(json.dumps({"qid": qid, "k": rl.k, "entries": rl.entries}) + "\n")


def read_retrievals(path: Path) -> dict[str, RetrievalList]:
    out: dict[str, RetrievalList] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            out[rec["qid"]] = RetrievalList(
                query_id=rec["qid"],
                entries=[(doc_id, float(score)) for doc_id, score in rec["entries"]],
                k=int(rec["k"]),
            )
    return out


def write_rankings(path: Path, rankings: dict[str, list[tuple[str, float]]]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for qid in sorted(rankings):
            fh.write(json.dumps({"qid": qid, "entries": rankings[qid]}) + "\n")


def read_rankings(path: Path) -> dict[str, list[str]]:
    out: dict[str, list[str]] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            out[rec["qid"]] = [doc_id for doc_id, _ in rec["entries"]]
    return out


class PipelineContext:
    """Lazily materialized pipeline state shared across stages and variants.

    Expensive intermediates (corpus, split, enriched index, retrieval lists,
    pair-embedding cache) are computed once and reused, which is what keeps
    ablation sweeps affordable.
    """

    def __init__(self, config: PipelineConfig, log=None):
        self.config = config
        self._log = log or (lambda msg: None)

    @cached_property
    def _ingested(self):
        corpus, report = ingest_corpus(self.config.paths.documents, self.config.paths.edges)
        self._log(f"ingested {len(corpus)} documents, {len(corpus.edges)} edges")
        return corpus, report

    @property
    def corpus(self) -> Corpus:
        return self._ingested[0]

    @property
    def ingest_report(self):
        return self._ingested[1]

    @cached_property
    def queries(self) -> list[Query]:
        return load_queries(self.config.paths.queries)

    @cached_property
    def split(self) -> SplitResult:
        result = build_split(self.corpus, self.queries, self.config.split)
        self._log(
            "split sizes: train=%d val=%d test=%d corpus=%d"
            % (len(result.train_queries), len(result.val_queries), len(result.test_queries), len(result.corpus_ids))
        )
        return result

    @cached_property
    def provider(self) -> CachingPairProvider:
        return make_provider(self.config)

    @cached_property
    def base_vectors(self) -> EmbeddingMatrix:
        doc_ids = sorted(self.corpus.documents)
        rows = np.stack([self.provider.doc_vector(d, self.corpus.doc_text(d)) for d in doc_ids])
        return EmbeddingMatrix(dim=self.provider.dim, keys=doc_ids, vectors=rows)

    @cached_property
    def context_vectors(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        for edge in self.corpus.edges:
            if edge.context_text not in out:
                out[edge.context_text] = self.provider.context_vector(edge.context_text)
        return out

    @cached_property
    def index(self) -> ProfiledIndex:
        index = build_profiled_index(self.corpus, self.base_vectors, self.context_vectors, self.config.weights)
        self._log(f"profiled index built: {len(index.doc_ids)} docs, dim {index.dim}")
        return index

    def query_vector(self, query: Query) -> np.ndarray:
        return compose_query_vector(query, self.provider, self.config.weights)

    def retrievals_for(self, part: str) -> dict[str, RetrievalList]:
        return self._retrievals(part)

    @cached_property
    def _retrieval_cache(self) -> dict[str, dict[str, RetrievalList]]:
        return {}

    def _retrievals(self, part: str) -> dict[str, RetrievalList]:
        cache = self._retrieval_cache
        if part not in cache:
            k = self.config.prior.k
            out: dict[str, RetrievalList] = {}
            for q in self.split.queries_of(part):
                admissible = self.split.admissible_corpus(q)
                if not admissible:
                    # nothing published before this query; an empty candidate
                    # list keeps downstream counters honest
                    out[q.query_id] = RetrievalList(query_id=q.query_id, entries=[], k=k)
                    continue
                out[q.query_id] = retrieve(self.index, self.query_vector(q), admissible, k, query_id=q.query_id)
            cache[part] = out
            self._log(f"retrieved candidates for {len(out)} {part} queries (k={k})")
        return cache[part]

    def golds_for(self, part: str) -> dict[str, str]:
        return {q.query_id: q.gold_cited_id for q in self.split.queries_of(part)}

    def retrieval_report(self, part: str = "test") -> EvalReport:
        retrievals = self._retrievals(part)
        rankings = {qid: rl.doc_ids() for qid, rl in retrievals.items()}
        return evaluate(rankings, self.golds_for(part), list(self.config.ks_retrieval))

    def candidate_batch(self, query: Query, rl: RetrievalList, davinci_cfg: DavinciConfig) -> CandidateBatch:
        prior_cfg = davinci_cfg.effective_prior()
        priors = priors_for_candidates(prior_cfg, rl, injected=None)
        qside = query_side_text(query)
        doc_ids = rl.doc_ids()
        if doc_ids:
            pairs = np.stack(
                [
                    self.provider.pair_vector(query.query_id, d, qside, self.corpus.doc_text(d))
                    for d in doc_ids
                ]
            )
        else:
            pairs = np.empty((0, self.provider.dim), dtype=np.float32)
        return CandidateBatch(
            query_id=query.query_id,
            gold_id=query.gold_cited_id,
            doc_ids=doc_ids,
            pair_vectors=pairs,
            priors=np.array(priors.priors(), dtype=np.float64),
        )

    def val_set(self, davinci_cfg: DavinciConfig) -> list[CandidateBatch]:
        retrievals = self._retrievals("val")
        return [
            self.candidate_batch(q, retrievals[q.query_id], davinci_cfg)
            for q in self.split.val_queries
            if retrievals[q.query_id].entries
        ]

    def train_reranker(
        self,
        davinci_cfg: DavinciConfig | None = None,
        retrievals: dict[str, RetrievalList] | None = None,
    ) -> TrainResult:
        cfg = davinci_cfg or self.config.davinci
        retrievals = retrievals if retrievals is not None else self._retrievals("train")
        triplets, skipped = build_training_set(self.split, retrievals, self.provider, self.corpus, cfg)
        if skipped:
            self._log(f"training: skipped {skipped} queries without negatives")
        model = new_model(cfg)
        result = train(model, triplets, cfg, val_set=self.val_set(cfg))
        self._log(
            f"trained {cfg.ablation}: final loss {result.loss_curve[-1]:.5f}, "
            f"best val MRR {max(result.val_mrr_curve) if result.val_mrr_curve else float('nan'):.4f}"
        )
        return result

    def rerank_part(
        self,
        model: DavinciModel,
        part: str = "test",
        retrievals: dict[str, RetrievalList] | None = None,
    ) -> dict[str, list[tuple[str, float]]]:
        retrievals = retrievals if retrievals is not None else self._retrievals(part)
        out: dict[str, list[tuple[str, float]]] = {}
        for q in self.split.queries_of(part):
            rl = retrievals[q.query_id]
            if not rl.entries:
                out[q.query_id] = []
                continue
            batch = self.candidate_batch(q, rl, model.config)
            out[q.query_id] = rerank_scored(model, batch)
        return out

    def rerank_report(self, rankings: dict[str, list[tuple[str, float]]], part: str = "test") -> EvalReport:
        id_lists = {qid: [doc_id for doc_id, _ in entries] for qid, entries in rankings.items()}
        return evaluate(id_lists, self.golds_for(part), list(self.config.ks_rerank))


def run_pipeline(config: PipelineConfig, workdir: str | Path | None = None, log=None) -> dict:
    """Execute the full chain, persisting every intermediate artifact.

    Returns {"retrieval_report": EvalReport, "rerank_report": EvalReport,
    "workdir": Path}. Reruns with the same config and seed write byte-identical
    reports.
    """
    workdir = Path(workdir or config.paths.workdir)
    workdir.mkdir(parents=True, exist_ok=True)
    ctx = PipelineContext(config, log=log)

    _dump_json(workdir / "ingest_report.json", ctx.ingest_report.as_dict())
    ctx.split.write_manifest(workdir / "split_manifest.json")
    write_stage_manifest(workdir / "split_manifest.json", config, "split")

    ctx.index.save(workdir / "index", corpus_hash=corpus_fingerprint(ctx.corpus))
    write_stage_manifest(workdir / "index", config, "profile-build")

    for part in ("train", "val", "test"):
        path = workdir / "retrievals" / f"{part}.jsonl"
        write_retrievals(path, ctx.retrievals_for(part))
        write_stage_manifest(path, config, f"retrieve-{part}")

    retrieval_report = ctx.retrieval_report("test")
    _dump_json(workdir / "reports" / "retrieval_test.json", retrieval_report.as_dict())
    (workdir / "reports" / "retrieval_test.txt").write_text(
        retrieval_report.format_table("retrieval stage (test split)")
    )

    result = ctx.train_reranker()
    save_model(result.model, workdir / "model")
    write_stage_manifest(workdir / "model", config, "davinci-train")
    _dump_json(
        workdir / "model" / "training.json",
        {
            "loss_curve": result.loss_curve,
            "val_mrr_curve": result.val_mrr_curve,
            "best_epoch": result.best_epoch,
        },
    )

    rankings = ctx.rerank_part(result.model, "test")
    rerank_path = workdir / "rerank" / "test.jsonl"
    write_rankings(rerank_path, rankings)
    write_stage_manifest(rerank_path, config, "rerank-test")

    rerank_report = ctx.rerank_report(rankings, "test")
    _dump_json(workdir / "reports" / "rerank_test.json", rerank_report.as_dict())
    (workdir / "reports" / "rerank_test.txt").write_text(
        rerank_report.format_table("end-to-end (test split)")
    )

    return {"retrieval_report": retrieval_report, "rerank_report": rerank_report, "workdir": workdir}


def run_ablations(
    config: PipelineConfig,
    variants: list[str],
    log=None,
    ctx: PipelineContext | None = None,
) -> dict[str, dict]:
    """Train and evaluate several reranker variants over shared artifacts."""
    ctx = ctx or PipelineContext(config, log=log)
    out: dict[str, dict] = {}
    for variant in variants:
        resolved = resolve_ablation(variant)
        cfg = dataclasses.replace(config.davinci, ablation=resolved)
        result = ctx.train_reranker(cfg)
        rankings = ctx.rerank_part(result.model, "test")
        report = ctx.rerank_report(rankings, "test")
        out[resolved] = {"report": report, "result": result}
    return out


def truncated(retrievals: dict[str, RetrievalList], k: int) -> dict[str, RetrievalList]:
    return {
        qid: RetrievalList(query_id=rl.query_id, entries=rl.entries[:k], k=k)
        for qid, rl in retrievals.items()
    }


def sweep_k(
    config: PipelineConfig,
    k_values: list[int],
    retrain: bool = False,
    log=None,
) -> list[dict]:
    """Evaluate end-to-end quality as the candidate pool size varies.

    By default one model is trained at the configured k and evaluated against
    truncated candidate lists; ``retrain`` trains a fresh model per k instead.
    """
    if any(k < 1 for k in k_values):
        raise ValidationError("k values must be >= 1")
    k_max = max(list(k_values) + [config.prior.k])
    base = config.replace(prior=dataclasses.replace(config.prior, k=k_max))
    ctx = PipelineContext(base, log=log)
    rows = []
    shared_result = None if retrain else ctx.train_reranker(base.davinci)
    for k in sorted(k_values):
        test_rl = truncated(ctx.retrievals_for("test"), k)
        if retrain:
            cfg_k = dataclasses.replace(base.davinci, prior=dataclasses.replace(base.prior, k=k))
            result = ctx.train_reranker(cfg_k, retrievals=truncated(ctx.retrievals_for("train"), k))
        else:
            result = shared_result
        rankings = ctx.rerank_part(result.model, "test", retrievals=test_rl)
        report = ctx.rerank_report(rankings, "test")
        row = {"k": k, "mrr": report.mrr}
        row.update({f"recall@{kk}": v for kk, v in report.recall_at.items()})
        row.update({f"ndcg@{kk}": v for kk, v in report.ndcg_at.items()})
        rows.append(row)
    return rows
