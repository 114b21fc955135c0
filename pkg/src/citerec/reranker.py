"""DAVINCI reranker: gated fusion of pair semantics with retrieval priors.

A candidate is scored from two signals: the pair embedding of query and
candidate text, and the confidence prior derived from its retrieval rank.
Both are projected into a shared latent space by independent towers, and a
separate gating network - conditioned on the raw inputs - emits a sigmoid
vector applied as a per-dimension soft mask over the concatenated projections.
A final head maps the masked features to a score in (0, 1). Training uses a
margin triplet loss over sampled negatives from each query's candidate list.

Ablation variants: A1 ``semantics_only`` (no prior anywhere), A2 ``raw_prior``
(untransformed retrieval scores), A3 ``softmax_prior`` (softmax-normalized
scores), A4 ``scalar_gate`` (one shared gate coefficient instead of a vector).
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from itertools import groupby
from pathlib import Path

import numpy as np

from .corpus import Corpus, Query
from .errors import DivergenceError, NotFoundError, ValidationError
from .nn import (
    Mlp,
    SIGMOID,
    apply_update,
    backward,
    build_mlp,
    flatten_params,
    forward,
    grads_as_list,
    make_optimizer,
    parameters,
    unflatten_params,
)
from .priors import EXP_RANK, PriorConfig, PriorList, RAW_SCORE, SOFTMAX, priors_for_candidates
from .profiler import RetrievalList
from .vectors import EmbeddingMatrix, load_embeddings, write_embeddings

FULL = "full"
SEMANTICS_ONLY = "semantics_only"
RAW_PRIOR = "raw_prior"
SOFTMAX_PRIOR = "softmax_prior"
SCALAR_GATE = "scalar_gate"
ABLATIONS = (FULL, SEMANTICS_ONLY, RAW_PRIOR, SOFTMAX_PRIOR, SCALAR_GATE)

# Table-style aliases accepted by the CLI.
VARIANT_ALIASES = {
    "A1": SEMANTICS_ONLY,
    "A2": RAW_PRIOR,
    "A3": SOFTMAX_PRIOR,
    "A4": SCALAR_GATE,
}


def resolve_ablation(name: str) -> str:
    resolved = VARIANT_ALIASES.get(name.upper(), name)
    if resolved not in ABLATIONS:
        raise ValidationError(f"unknown ablation {name!r} (use {', '.join(ABLATIONS)} or A1..A4)")
    return resolved


@dataclass(frozen=True)
class DavinciConfig:
    d_enc2: int = 256
    d_h: int = 256
    margin: float = 0.1
    negatives: int = 4
    prior: PriorConfig = PriorConfig()
    ablation: str = FULL
    epochs: int = 30
    batch_size: int = 32
    optimizer: str = "adam"
    learning_rate: float = 1e-3
    tower_depth: int = 2
    seed: int = 0

    def __post_init__(self):
        if not (0.0 < self.margin < 1.0):
            raise ValidationError(f"margin must be in (0, 1), got {self.margin}")
        if self.negatives < 1:
            raise ValidationError("negatives must be >= 1")
        if self.d_h < 1 or self.d_enc2 < 1:
            raise ValidationError("d_enc2 and d_h must be >= 1")
        if self.ablation not in ABLATIONS:
            raise ValidationError(f"unknown ablation {self.ablation!r}")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValidationError("epochs and batch_size must be >= 1")
        if self.tower_depth not in (1, 2):
            raise ValidationError("tower_depth must be 1 or 2")

    def effective_prior(self) -> PriorConfig:
        """Prior settings with the ablation's mode override applied."""
        if self.ablation == RAW_PRIOR:
            mode = RAW_SCORE
        elif self.ablation == SOFTMAX_PRIOR:
            mode = SOFTMAX
        else:
            mode = self.prior.mode
        return PriorConfig(lambda_decay=self.prior.lambda_decay, mode=mode, k=self.prior.k)

    @property
    def uses_prior(self) -> bool:
        return self.ablation != SEMANTICS_ONLY


class DavinciModel:
    """The four MLPs wired per the active ablation."""

    def __init__(self, config: DavinciConfig, mlp_text: Mlp, mlp_score: Mlp | None, mlp_gate: Mlp, mlp_out: Mlp):
        self.config = config
        self.mlp_text = mlp_text
        self.mlp_score = mlp_score
        self.mlp_gate = mlp_gate
        self.mlp_out = mlp_out

    def towers(self) -> list[tuple[str, Mlp]]:
        out = [("text", self.mlp_text)]
        if self.mlp_score is not None:
            out.append(("score", self.mlp_score))
        out.extend([("gate", self.mlp_gate), ("out", self.mlp_out)])
        return out

    def parameters(self) -> list[np.ndarray]:
        params: list[np.ndarray] = []
        for _, mlp in self.towers():
            params.extend(parameters(mlp))
        return params


def _tower_dims(config: DavinciConfig, in_dim: int, out_dim: int) -> list[int]:
    if config.tower_depth == 1:
        return [in_dim, out_dim]
    return [in_dim, config.d_h, out_dim]


def new_model(config: DavinciConfig, dtype=np.float32) -> DavinciModel:
    ss = np.random.SeedSequence(config.seed)
    rng_text, rng_score, rng_gate, rng_out = (np.random.default_rng(s) for s in ss.spawn(4))
    d, dh = config.d_enc2, config.d_h
    mlp_text = build_mlp(rng_text, _tower_dims(config, d, dh), dtype=dtype)
    if config.uses_prior:
        mlp_score = build_mlp(rng_score, _tower_dims(config, 1, dh), dtype=dtype)
        gate_out = 1 if config.ablation == SCALAR_GATE else 2 * dh
        mlp_gate = build_mlp(rng_gate, _tower_dims(config, d + 1, gate_out), output_activation=SIGMOID, dtype=dtype)
        mlp_out = build_mlp(rng_out, _tower_dims(config, 2 * dh, 1), output_activation=SIGMOID, dtype=dtype)
    else:
        mlp_score = None
        mlp_gate = build_mlp(rng_gate, _tower_dims(config, d, dh), output_activation=SIGMOID, dtype=dtype)
        mlp_out = build_mlp(rng_out, _tower_dims(config, dh, 1), output_activation=SIGMOID, dtype=dtype)
    return DavinciModel(config, mlp_text, mlp_score, mlp_gate, mlp_out)


def score_batch(model: DavinciModel, e_cls: np.ndarray, prior: np.ndarray) -> tuple[np.ndarray, dict]:
    """Scores in (0, 1) for a batch of (pair embedding, prior) candidates."""
    cfg = model.config
    e_cls = np.atleast_2d(np.asarray(e_cls))
    prior = np.asarray(prior, dtype=e_cls.dtype).reshape(-1)
    if e_cls.shape[1] != cfg.d_enc2:
        raise ValidationError(f"e_cls dim {e_cls.shape[1]} != configured d_enc2 {cfg.d_enc2}")
    if prior.shape[0] != e_cls.shape[0]:
        raise ValidationError("prior count does not match embedding rows")
    if not np.isfinite(prior).all():
        raise ValidationError("priors must be finite")

    h_text, tape_text = forward(model.mlp_text, e_cls)
    if cfg.uses_prior:
        h_score, tape_score = forward(model.mlp_score, prior[:, None])
        h_concat = np.concatenate([h_text, h_score], axis=1)
        gate_in = np.concatenate([e_cls, prior[:, None]], axis=1)
    else:
        tape_score = None
        h_concat = h_text
        gate_in = e_cls
    g, tape_gate = forward(model.mlp_gate, gate_in)
    h_fused = g * h_concat  # broadcasts the scalar-gate case (g is (B, 1))
    s, tape_out = forward(model.mlp_out, h_fused)
    tape = {
        "text": tape_text,
        "score": tape_score,
        "gate": tape_gate,
        "out": tape_out,
        "g": g,
        "h_concat": h_concat,
    }
    return s[:, 0], tape


def backward_batch(model: DavinciModel, tape: dict, d_scores: np.ndarray) -> list[np.ndarray]:
    """Parameter gradients (summed over the batch) for upstream dL/dS."""
    cfg = model.config
    d_out = np.asarray(d_scores).reshape(-1, 1)
    grads_out, d_fused = backward(model.mlp_out, tape["out"], d_out)
    g, h_concat = tape["g"], tape["h_concat"]
    d_gate_out = d_fused * h_concat
    if cfg.ablation == SCALAR_GATE:
        d_gate_out = d_gate_out.sum(axis=1, keepdims=True)
    d_concat = d_fused * g
    grads_gate, _ = backward(model.mlp_gate, tape["gate"], d_gate_out)
    if cfg.uses_prior:
        dh = cfg.d_h
        grads_score, _ = backward(model.mlp_score, tape["score"], d_concat[:, dh:])
        grads_text, _ = backward(model.mlp_text, tape["text"], d_concat[:, :dh])
        blocks = [grads_text, grads_score, grads_gate, grads_out]
    else:
        grads_text, _ = backward(model.mlp_text, tape["text"], d_concat)
        blocks = [grads_text, grads_gate, grads_out]
    flat: list[np.ndarray] = []
    for block in blocks:
        flat.extend(grads_as_list(block))
    return flat


def score_candidate(model: DavinciModel, e_cls: np.ndarray, prior: float) -> float:
    e_cls = np.asarray(e_cls)
    if e_cls.ndim != 1:
        raise ValidationError(f"score_candidate expects a vector, got shape {e_cls.shape}")
    s, _ = score_batch(model, e_cls[None, :], np.array([prior]))
    return float(s[0])


def triplet_loss(s_pos: float, s_neg: float, margin: float) -> float:
    """Hinge on the score gap: zero once the positive clears the margin."""
    return max(0.0, s_neg - s_pos + margin)


@dataclass(frozen=True)
class TrainingTriplet:
    query_id: str
    pos_embedding: np.ndarray
    pos_prior: float
    neg_embedding: np.ndarray
    neg_prior: float


@dataclass
class CandidateBatch:
    """Everything needed to rerank one query's candidate list."""

    query_id: str
    gold_id: str
    doc_ids: list[str]
    pair_vectors: np.ndarray  # (m, d_enc2)
    priors: np.ndarray  # (m,)


@dataclass
class TrainResult:
    model: DavinciModel
    loss_curve: list[float]
    val_mrr_curve: list[float] = field(default_factory=list)
    best_epoch: int = -1


def query_side_text(query: Query) -> str:
    return f"{query.context_text} [SEP] {query.title} {query.abstract}"


def build_training_set(
    split,
    retrievals: dict[str, RetrievalList],
    provider,
    corpus: Corpus,
    config: DavinciConfig,
) -> tuple[list[TrainingTriplet], int]:
    """One positive and up to ``negatives`` sampled negatives per train query.

    The gold is injected into the prior computation when the retriever missed
    it, landing at rank len(list)+1. Queries whose candidate list contains no
    negative at all are skipped and counted.
    """
    prior_cfg = config.effective_prior()
    rng = np.random.default_rng([config.seed, 0x5EED])
    triplets: list[TrainingTriplet] = []
    skipped = 0
    for q in split.train_queries:
        rl = retrievals.get(q.query_id)
        if rl is None:
            raise NotFoundError(f"no retrieval list for training query {q.query_id!r}")
        gold = q.gold_cited_id
        priors = priors_for_candidates(prior_cfg, rl, injected=gold)
        pool = [doc_id for doc_id in rl.doc_ids() if doc_id != gold]
        if not pool:
            skipped += 1
            continue
        qside = query_side_text(q)
        pos_e = provider.pair_vector(q.query_id, gold, qside, corpus.doc_text(gold))
        pos_p = priors.prior_of(gold)
        n_pick = min(config.negatives, len(pool))
        for j in rng.choice(len(pool), size=n_pick, replace=False):
            neg_id = pool[j]
            triplets.append(
                TrainingTriplet(
                    query_id=q.query_id,
                    pos_embedding=pos_e,
                    pos_prior=pos_p,
                    neg_embedding=provider.pair_vector(q.query_id, neg_id, qside, corpus.doc_text(neg_id)),
                    neg_prior=priors.prior_of(neg_id),
                )
            )
    return triplets, skipped


def _group_triplets(triplets: list[TrainingTriplet]):
    groups = []
    for _, items in groupby(triplets, key=lambda t: t.query_id):
        items = list(items)
        groups.append(items)
    return groups


def rerank_scored(model: DavinciModel, batch: CandidateBatch) -> list[tuple[str, float]]:
    scores, _ = score_batch(model, batch.pair_vectors, batch.priors)
    order = sorted(range(len(batch.doc_ids)), key=lambda i: (-scores[i], batch.doc_ids[i]))
    return [(batch.doc_ids[i], float(scores[i])) for i in order]


def _val_mrr(model: DavinciModel, val_set: list[CandidateBatch]) -> float:
    rr = 0.0
    for batch in val_set:
        ranked = rerank_scored(model, batch)
        for pos, (doc_id, _) in enumerate(ranked, start=1):
            if doc_id == batch.gold_id:
                rr += 1.0 / pos
                break
    return rr / len(val_set) if val_set else 0.0


def train(
    model: DavinciModel,
    triplets: list[TrainingTriplet],
    config: DavinciConfig,
    val_set: list[CandidateBatch] | None = None,
) -> TrainResult:
    """Margin-triplet training; per query the loss averages over its negatives.

    When a validation set is given, the parameters from the epoch with the
    best validation MRR are restored at the end.
    """
    if not triplets:
        raise ValidationError("training set is empty")
    groups = _group_triplets(triplets)
    params = model.parameters()
    opt = make_optimizer(config.optimizer, config.learning_rate, params)
    shuffle_rng = np.random.default_rng([config.seed, 0xBA7C4])
    margin = config.margin

    loss_curve: list[float] = []
    val_curve: list[float] = []
    best_epoch = -1
    best_mrr = -1.0
    best_params: list[np.ndarray] | None = None

    for _epoch in range(config.epochs):
        perm = shuffle_rng.permutation(len(groups))
        loss_sum = 0.0
        for start in range(0, len(perm), config.batch_size):
            chunk = [groups[i] for i in perm[start : start + config.batch_size]]
            n_pos = len(chunk)
            pos_rows = np.stack([grp[0].pos_embedding for grp in chunk])
            pos_pri = np.array([grp[0].pos_prior for grp in chunk])
            neg_rows = np.concatenate([np.stack([t.neg_embedding for t in grp]) for grp in chunk])
            neg_pri = np.concatenate([np.array([t.neg_prior for t in grp]) for grp in chunk])
            group_of = np.concatenate(
                [np.full(len(grp), gi, dtype=np.int64) for gi, grp in enumerate(chunk)]
            )
            group_size = np.array([len(grp) for grp in chunk], dtype=np.float64)

            stacked_e = np.concatenate([pos_rows, neg_rows])
            stacked_p = np.concatenate([pos_pri, neg_pri])
            scores, tape = score_batch(model, stacked_e, stacked_p)
            s_pos = scores[:n_pos]
            s_neg = scores[n_pos:]

            gap = s_neg - s_pos[group_of] + margin
            violated = gap > 0.0
            per_group = np.zeros(n_pos, dtype=np.float64)
            np.add.at(per_group, group_of, np.maximum(gap, 0.0))
            per_group /= group_size
            batch_loss = float(per_group.mean())
            if not np.isfinite(batch_loss):
                raise DivergenceError("training loss became non-finite")
            loss_sum += float(per_group.sum())

            d_scores = np.zeros_like(scores)
            neg_weight = violated / (group_size[group_of] * n_pos)
            d_scores[n_pos:] = neg_weight
            np.add.at(d_scores, group_of, -neg_weight)
            grads = backward_batch(model, tape, d_scores)
            apply_update(opt, params, grads)

        loss_curve.append(loss_sum / len(groups))
        if val_set is not None:
            mrr = _val_mrr(model, val_set)
            val_curve.append(mrr)
            if mrr > best_mrr:
                best_mrr = mrr
                best_epoch = _epoch
                best_params = [p.copy() for p in params]

    if best_params is not None:
        for p, best in zip(params, best_params):
            p[...] = best
    return TrainResult(model=model, loss_curve=loss_curve, val_mrr_curve=val_curve, best_epoch=best_epoch)


def rerank(
    model: DavinciModel,
    query: Query,
    retrieval: RetrievalList,
    priors: PriorList,
    provider,
    corpus: Corpus,
) -> list[tuple[str, float]]:
    """Score every retrieved candidate and sort descending (doc-id tie-break)."""
    retrieved_ids = retrieval.doc_ids()
    if priors.doc_ids() != retrieved_ids:
        raise ValidationError(
            f"prior list is misaligned with retrieval list for query {query.query_id!r}"
        )
    qside = query_side_text(query)
    pairs = np.stack(
        [provider.pair_vector(query.query_id, doc_id, qside, corpus.doc_text(doc_id)) for doc_id in retrieved_ids]
    )
    batch = CandidateBatch(
        query_id=query.query_id,
        gold_id=query.gold_cited_id,
        doc_ids=retrieved_ids,
        pair_vectors=pairs,
        priors=np.array(priors.priors()),
    )
    return rerank_scored(model, batch)


def save_model(model: DavinciModel, directory: str | Path) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    flat = flatten_params(model.parameters())
    write_embeddings(
        directory / "params.cvec",
        EmbeddingMatrix(dim=flat.shape[0], keys=["params"], vectors=flat[None, :]),
    )
    manifest = {
        "config": dataclasses.asdict(model.config),
        "towers": {
            name: {"dims": [mlp.in_dim] + [l.out_dim for l in mlp.layers], "output_activation": mlp.output_activation}
            for name, mlp in model.towers()
        },
        "n_params": int(flat.shape[0]),
    }
    with open(directory / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_model(directory: str | Path) -> DavinciModel:
    directory = Path(directory)
    with open(directory / "manifest.json", "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    cfg_dict = dict(manifest["config"])
    cfg_dict["prior"] = PriorConfig(**cfg_dict["prior"])
    config = DavinciConfig(**cfg_dict)
    model = new_model(config)
    flat = load_embeddings(directory / "params.cvec").row("params")
    params = model.parameters()
    for p, loaded in zip(params, unflatten_params(params, flat)):
        p[...] = loaded
    return model
