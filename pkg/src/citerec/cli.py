"""Command-line interface.

Subcommands: ingest, split, profile {build,retrieve,sweep},
davinci {train,rerank,ablate}, eval, pipeline, sweep-k, fixture {gen}.

Configuration comes from one JSON/TOML file; any field can be overridden with
repeated ``--set section.key=value`` flags, and the most common knobs have
dedicated flags. ``CITEREC_WORKDIR`` overrides the working directory only.
Exit codes: 0 success, 2 validation/input error, 3 runtime or divergence
error.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import os
import sys
import time
from pathlib import Path

from .config import PipelineConfig, apply_overrides, config_from_dict, load_config_data
from .corpus import ingest_corpus, load_queries
from .errors import CiterecError, DivergenceError, ValidationError
from .fixture import FixtureSpec, generate_fixture
from .metrics import evaluate
from .pipeline import (
    PipelineContext,
    check_stage_manifest,
    read_rankings,
    read_retrievals,
    run_ablations,
    run_pipeline,
    sweep_k,
    write_rankings,
    write_retrievals,
    write_stage_manifest,
)
from .priors import priors_for_candidates
from .profiler import ProfileWeights, ProfiledIndex, corpus_fingerprint, retrieve, sweep_profile_weights
from .reranker import load_model, rerank_scored, resolve_ablation, save_model
from .vectors import load_embeddings


def _log(msg: str) -> None:
    print(msg, file=sys.stderr)


def _load_config(args) -> PipelineConfig:
    data = load_config_data(args.config) if getattr(args, "config", None) else {}
    overrides = list(getattr(args, "set", None) or [])
    if getattr(args, "seed", None) is not None:
        overrides.append(f"seed={args.seed}")
    if getattr(args, "encoder", None):
        overrides.append(f"encoder_source={json.dumps(args.encoder)}")
    if getattr(args, "k", None) is not None:
        overrides.append(f"prior.k={args.k}")
    if getattr(args, "lambda_decay", None) is not None:
        overrides.append(f"prior.lambda_decay={args.lambda_decay}")
    if getattr(args, "prior_mode", None):
        overrides.append(f"prior.mode={json.dumps(args.prior_mode)}")
    if getattr(args, "ablation", None):
        overrides.append(f"davinci.ablation={json.dumps(resolve_ablation(args.ablation))}")
    if getattr(args, "workdir", None):
        overrides.append(f"paths.workdir={json.dumps(str(args.workdir))}")
    data = apply_overrides(data, overrides)
    env_workdir = os.environ.get("CITEREC_WORKDIR")
    if env_workdir and not getattr(args, "workdir", None):
        data.setdefault("paths", {})["workdir"] = env_workdir
    return config_from_dict(data)


def _add_common(parser: argparse.ArgumentParser, workdir: bool = True) -> None:
    parser.add_argument("--config", help="JSON or TOML pipeline config file")
    parser.add_argument(
        "--set", action="append", metavar="KEY=VALUE", help="override any config field (repeatable)"
    )
    parser.add_argument("--seed", type=int, help="override the top-level seed")
    parser.add_argument("--encoder", help="base vector provenance: hash | file:<cvec path>")
    if workdir:
        parser.add_argument("--workdir", help="working directory for artifacts")


def _write_csv(path: Path, rows: list[dict]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(rows)


def _parse_grid(raw: str) -> list[float]:
    try:
        start_s, stop_s, step_s = raw.split(":")
        start, stop, step = float(start_s), float(stop_s), float(step_s)
    except ValueError:
        raise ValidationError(f"grid must be start:stop:step, got {raw!r}") from None
    if step <= 0:
        raise ValidationError("grid step must be positive")
    values = []
    v = start
    while v <= stop + 1e-12:
        values.append(round(v, 10))
        v += step
    return values


def cmd_ingest(args) -> int:
    config = _load_config(args)
    documents = args.documents or config.paths.documents
    edges = args.edges or config.paths.edges
    corpus, report = ingest_corpus(documents, edges)
    payload = report.as_dict()
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    print(json.dumps(payload, indent=2, sort_keys=True))
    return 0


def cmd_split(args) -> int:
    config = _load_config(args)
    ctx = PipelineContext(config, log=_log)
    out = Path(args.out) if args.out else Path(config.paths.workdir) / "split_manifest.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    ctx.split.write_manifest(out)
    write_stage_manifest(out, config, "split")
    manifest = ctx.split.manifest()
    print(json.dumps({k: manifest[k] for k in ("mode", "counts", "dropped", "corpus_size")}, indent=2, sort_keys=True))
    return 0


def cmd_profile_build(args) -> int:
    config = _load_config(args)
    ctx = PipelineContext(config, log=_log)
    out = Path(args.out) if args.out else Path(config.paths.workdir) / "index"
    t0 = time.perf_counter()
    ctx.index.save(out, corpus_hash=corpus_fingerprint(ctx.corpus))
    write_stage_manifest(out, config, "profile-build")
    _log(f"profile build took {time.perf_counter() - t0:.2f}s")
    print(f"profiled index with {len(ctx.index.doc_ids)} documents written to {out}")
    return 0


def cmd_profile_retrieve(args) -> int:
    config = _load_config(args)
    ctx = PipelineContext(config, log=_log)
    k = args.k if args.k is not None else config.prior.k
    parts = ["train", "val", "test"] if args.queries == "all" else [args.queries]
    index = ctx.index
    if args.index:
        check_stage_manifest(Path(args.index), config)
        index = ProfiledIndex.load(args.index)
    t0 = time.perf_counter()
    for part in parts:
        out = Path(args.out) if args.out and len(parts) == 1 else Path(config.paths.workdir) / "retrievals" / f"{part}.jsonl"
        retrievals = {}
        for q in ctx.split.queries_of(part):
            admissible = ctx.split.admissible_corpus(q)
            if not admissible:
                continue
            retrievals[q.query_id] = retrieve(index, ctx.query_vector(q), admissible, k, query_id=q.query_id)
        write_retrievals(out, retrievals)
        write_stage_manifest(out, config, f"retrieve-{part}")
        print(f"{part}: wrote {len(retrievals)} retrieval lists to {out}")
    _log(f"retrieval took {time.perf_counter() - t0:.2f}s")
    return 0


def cmd_profile_sweep(args) -> int:
    config = _load_config(args)
    ctx = PipelineContext(config, log=_log)
    enrich_values = _parse_grid(args.grid)
    query_values = _parse_grid(args.query_grid) if args.query_grid else enrich_values
    grid = [
        ProfileWeights(alpha=a, beta=round(1.0 - a, 10), gamma=g, delta=round(1.0 - g, 10))
        for a in enrich_values
        for g in query_values
    ]
    part = args.queries
    queries = ctx.split.queries_of(part)
    rows = sweep_profile_weights(
        ctx.corpus,
        ctx.base_vectors,
        ctx.context_vectors,
        queries,
        query_vector_fn=lambda q, w: _weighted_query_vector(ctx, q, w),
        admissible_fn=ctx.split.admissible_corpus,
        grid=grid,
        metric=args.metric,
        k=args.k if args.k is not None else config.prior.k,
    )
    out = Path(args.out) if args.out else Path(config.paths.workdir) / "sweep_weights.csv"
    _write_csv(out, rows)
    best = max(rows, key=lambda r: r["value"])
    print(f"wrote {len(rows)} grid points to {out}")
    print(
        "argmax: alpha=%.3f beta=%.3f gamma=%.3f delta=%.3f %s=%.4f"
        % (best["alpha"], best["beta"], best["gamma"], best["delta"], best["metric"], best["value"])
    )
    return 0


def _weighted_query_vector(ctx: PipelineContext, query, weights: ProfileWeights):
    from .profiler import compose_query_vector

    return compose_query_vector(query, ctx.provider, weights)


def cmd_davinci_train(args) -> int:
    config = _load_config(args)
    ctx = PipelineContext(config, log=_log)
    retrievals = None
    if args.retrievals:
        check_stage_manifest(Path(args.retrievals), config)
        retrievals = read_retrievals(Path(args.retrievals))
    t0 = time.perf_counter()
    result = ctx.train_reranker(config.davinci, retrievals=retrievals)
    _log(f"training took {time.perf_counter() - t0:.2f}s")
    out = Path(args.out) if args.out else Path(config.paths.workdir) / "model"
    save_model(result.model, out)
    write_stage_manifest(out, config, "davinci-train")
    print(f"model ({config.davinci.ablation}) saved to {out}; final loss {result.loss_curve[-1]:.5f}")
    return 0


def cmd_davinci_rerank(args) -> int:
    config = _load_config(args)
    ctx = PipelineContext(config, log=_log)
    check_stage_manifest(Path(args.retrievals), config)
    retrievals = read_retrievals(Path(args.retrievals))
    model_dir = Path(args.model) if args.model else Path(config.paths.workdir) / "model"
    check_stage_manifest(model_dir, config)
    model = load_model(model_dir)
    rankings = {}
    for q in ctx.split.queries_of(args.part):
        rl = retrievals.get(q.query_id)
        if rl is None or not rl.entries:
            continue
        batch = ctx.candidate_batch(q, rl, model.config)
        rankings[q.query_id] = rerank_scored(model, batch)
    out = Path(args.out) if args.out else Path(config.paths.workdir) / "rerank" / f"{args.part}.jsonl"
    write_rankings(out, rankings)
    write_stage_manifest(out, config, f"rerank-{args.part}")
    print(f"reranked {len(rankings)} queries to {out}")
    return 0


def cmd_davinci_ablate(args) -> int:
    config = _load_config(args)
    variants = [v.strip() for v in args.variants.split(",")] if args.variants else ["full", "A1", "A2", "A3", "A4"]
    t0 = time.perf_counter()
    results = run_ablations(config, variants, log=_log)
    _log(f"ablations took {time.perf_counter() - t0:.2f}s")
    rows = []
    for variant, payload in results.items():
        report = payload["report"]
        row = {"variant": variant, "mrr": report.mrr}
        row.update({f"recall@{k}": v for k, v in report.recall_at.items()})
        row.update({f"ndcg@{k}": v for k, v in report.ndcg_at.items()})
        rows.append(row)
    out = Path(args.out) if args.out else Path(config.paths.workdir) / "ablations.csv"
    _write_csv(out, rows)
    for row in rows:
        print(f"{row['variant']:>15}: MRR {100 * row['mrr']:.2f}")
    print(f"wrote {out}")
    return 0


def cmd_eval(args) -> int:
    config = _load_config(args)
    rankings = read_rankings(Path(args.rankings))
    queries = load_queries(args.queries or config.paths.queries)
    golds_all = {q.query_id: q.gold_cited_id for q in queries}
    missing = sorted(set(rankings) - set(golds_all))
    if missing:
        raise ValidationError(f"rankings contain unknown query ids, e.g. {missing[:5]}")
    golds = {qid: golds_all[qid] for qid in rankings}
    ks = [int(k) for k in args.ks.split(",")]
    report = evaluate(rankings, golds, ks)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(report.to_json())
    print(report.format_table("evaluation"))
    return 0


def cmd_pipeline(args) -> int:
    config = _load_config(args)
    t0 = time.perf_counter()
    outcome = run_pipeline(config, log=_log)
    _log(f"pipeline took {time.perf_counter() - t0:.2f}s")
    print(outcome["retrieval_report"].format_table("retrieval stage (test split)"))
    print(outcome["rerank_report"].format_table("end-to-end (test split)"))
    print(f"artifacts under {outcome['workdir']}")
    return 0


def cmd_sweep_k(args) -> int:
    config = _load_config(args)
    k_values = [int(v) for v in args.k_values.split(",")]
    rows = sweep_k(config, k_values, retrain=args.retrain, log=_log)
    out = Path(args.out) if args.out else Path(config.paths.workdir) / "sweep_k.csv"
    _write_csv(out, rows)
    for row in rows:
        print(f"k={row['k']:>5}: MRR {100 * row['mrr']:.2f}")
    print(f"wrote {out}")
    return 0


def cmd_fixture_gen(args) -> int:
    spec = FixtureSpec(
        n_topics=args.topics,
        docs_per_topic=args.docs_per_topic,
        surveys_per_topic=args.surveys_per_topic,
        n_queries=args.queries,
        seed=args.seed if args.seed is not None else 7,
    )
    stats = generate_fixture(args.out, spec)
    print(json.dumps(stats, indent=2, sort_keys=True))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="citerec", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="validate and summarize a corpus")
    _add_common(p)
    p.add_argument("--documents", help="documents JSONL (defaults to config path)")
    p.add_argument("--edges", help="edges JSONL (defaults to config path)")
    p.add_argument("--out", help="write the validation report JSON here")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("split", help="build the train/val/test split")
    _add_common(p)
    p.add_argument("--out", help="split manifest path")
    p.set_defaults(func=cmd_split)

    profile = sub.add_parser("profile", help="first-stage retrieval")
    profile_sub = profile.add_subparsers(dest="profile_command", required=True)

    p = profile_sub.add_parser("build", help="build the profiled index")
    _add_common(p)
    p.add_argument("--out", help="index directory")
    p.set_defaults(func=cmd_profile_build)

    p = profile_sub.add_parser("retrieve", help="retrieve top-k candidates")
    _add_common(p)
    p.add_argument("--index", help="load a previously built index directory")
    p.add_argument("--k", type=int, help="candidates per query")
    p.add_argument("--queries", choices=["train", "val", "test", "all"], default="test")
    p.add_argument("--out", help="output JSONL (single split only)")
    p.set_defaults(func=cmd_profile_retrieve)

    p = profile_sub.add_parser("sweep", help="sweep profile/query weights")
    _add_common(p)
    p.add_argument("--grid", default="0:1:0.1", help="alpha grid start:stop:step")
    p.add_argument("--query-grid", dest="query_grid", help="gamma grid (defaults to --grid)")
    p.add_argument("--metric", default="recall@10", help="mrr | recall@K | ndcg@K")
    p.add_argument("--queries", choices=["train", "val", "test"], default="val")
    p.add_argument("--k", type=int, help="retrieval depth during the sweep")
    p.add_argument("--out", help="CSV output path")
    p.set_defaults(func=cmd_profile_sweep)

    davinci = sub.add_parser("davinci", help="reranker training and inference")
    davinci_sub = davinci.add_subparsers(dest="davinci_command", required=True)

    p = davinci_sub.add_parser("train", help="train the reranker")
    _add_common(p)
    p.add_argument("--retrievals", help="training retrieval JSONL (defaults to in-memory)")
    p.add_argument("--ablation", help="full | semantics_only | raw_prior | softmax_prior | scalar_gate | A1..A4")
    p.add_argument("--prior-mode", dest="prior_mode", help="exp_rank | raw_score | softmax")
    p.add_argument("--lambda", dest="lambda_decay", type=float, help="prior decay rate")
    p.add_argument("--k", type=int, help="candidate list size")
    p.add_argument("--out", help="model directory")
    p.set_defaults(func=cmd_davinci_train)

    p = davinci_sub.add_parser("rerank", help="rerank retrieved candidates")
    _add_common(p)
    p.add_argument("--model", help="model directory (default <workdir>/model)")
    p.add_argument("--retrievals", required=True, help="retrieval JSONL to rerank")
    p.add_argument("--part", choices=["train", "val", "test"], default="test")
    p.add_argument("--out", help="output JSONL")
    p.set_defaults(func=cmd_davinci_rerank)

    p = davinci_sub.add_parser("ablate", help="train and compare model variants")
    _add_common(p)
    p.add_argument("--variants", help="comma list, e.g. full,A1,A2,A3,A4 (default: all)")
    p.add_argument("--out", help="CSV output path")
    p.set_defaults(func=cmd_davinci_ablate)

    p = sub.add_parser("eval", help="evaluate a rankings file")
    _add_common(p)
    p.add_argument("--rankings", required=True, help="rankings JSONL (retrieve or rerank output)")
    p.add_argument("--queries", help="queries JSONL with golds (defaults to config path)")
    p.add_argument("--ks", default="5,10,20", help="comma list of cutoffs")
    p.add_argument("--out", help="report JSON path")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("pipeline", help="run the full chain end to end")
    _add_common(p)
    p.set_defaults(func=cmd_pipeline)

    p = sub.add_parser("sweep-k", help="vary the candidate pool size")
    _add_common(p)
    p.add_argument("--k-values", dest="k_values", default="50,100,300")
    p.add_argument("--retrain", action="store_true", help="train a fresh model per k")
    p.add_argument("--out", help="CSV output path")
    p.set_defaults(func=cmd_sweep_k)

    fixture = sub.add_parser("fixture", help="synthetic corpus tools")
    fixture_sub = fixture.add_subparsers(dest="fixture_command", required=True)
    p = fixture_sub.add_parser("gen", help="generate the synthetic fixture")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--topics", type=int, default=20)
    p.add_argument("--docs-per-topic", dest="docs_per_topic", type=int, default=100)
    p.add_argument("--surveys-per-topic", dest="surveys_per_topic", type=int, default=3)
    p.add_argument("--queries", type=int, default=900)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_fixture_gen)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (ValidationError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except CiterecError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
