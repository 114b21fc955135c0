"""Deterministic text-to-vector encoding.

Base vectors come either from a built-in hashed n-gram encoder (no external
language model needed) or from precomputed CVEC files. Both routes produce
fixed-dimension float32 vectors, which is all the downstream math relies on.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from functools import lru_cache
from hashlib import blake2b

import numpy as np

from .errors import ValidationError
from .vectors import EmbeddingMatrix

SEP_TOKEN = "[SEP]"


@dataclass(frozen=True)
class EncoderConfig:
    """Settings for the hashed n-gram encoder."""

    dim: int = 256
    ngram_min: int = 1
    ngram_max: int = 3
    casefold: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.dim < 8:
            raise ValidationError(f"encoder dim must be >= 8, got {self.dim}")
        if not (1 <= self.ngram_min <= self.ngram_max):
            raise ValidationError(
                f"invalid ngram range ({self.ngram_min}, {self.ngram_max})"
            )


class HashedNgramEncoder:
    """Signed feature hashing of word n-grams, L2-normalized.

    Whitespace runs are collapsed before tokenization, so encodings are
    invariant to incidental spacing. Each n-gram is hashed (keyed blake2b,
    salted by the config seed) into one of ``dim`` buckets with a +/-1 sign
    taken from the hash, which keeps cosine similarity meaningful: texts
    sharing vocabulary land in shared buckets with matching signs.

    Empty text maps to the all-zeros vector, the only non-unit output.
    """

    def __init__(self, config: EncoderConfig):
        self.config = config
        self._key = struct.pack("<q", config.seed)
        self._gram_cache: dict[str, tuple[int, float]] = {}

    def _bucket(self, gram: str) -> tuple[int, float]:
        hit = self._gram_cache.get(gram)
        if hit is None:
            h = int.from_bytes(
                blake2b(gram.encode("utf-8"), digest_size=8, key=self._key).digest(),
                "little",
            )
            hit = ((h >> 1) % self.config.dim, 1.0 if h & 1 else -1.0)
            self._gram_cache[gram] = hit
        return hit

    def encode(self, text: str) -> np.ndarray:
        if self.config.casefold:
            text = text.casefold()
        tokens = text.split()
        acc = np.zeros(self.config.dim, dtype=np.float64)
        if not tokens:
            return acc.astype(np.float32)
        for n in range(self.config.ngram_min, self.config.ngram_max + 1):
            for i in range(len(tokens) - n + 1):
                bucket, sign = self._bucket(" ".join(tokens[i : i + n]))
                acc[bucket] += sign
        norm = float(np.linalg.norm(acc))
        if norm == 0.0:
            # possible when signs cancel exactly; treat like empty text
            return acc.astype(np.float32)
        return (acc / norm).astype(np.float32)

    def encode_pair(self, query_text: str, candidate_text: str) -> np.ndarray:
        return self.encode(f"{query_text} {SEP_TOKEN} {candidate_text}")


@lru_cache(maxsize=16)
def _encoder_for(config: EncoderConfig) -> HashedNgramEncoder:
    return HashedNgramEncoder(config)


def encode_text(config: EncoderConfig, text: str) -> np.ndarray:
    """Encode one text with the hashed n-gram scheme (deterministic)."""
    return _encoder_for(config).encode(text)


def encode_pair(config: EncoderConfig, query_text: str, candidate_text: str) -> np.ndarray:
    """Encode query and candidate joined by the [SEP] marker as one text."""
    return _encoder_for(config).encode_pair(query_text, candidate_text)


# Key conventions for file-provided vectors (see README "Bring your own
# embeddings"): documents are keyed "doc:<doc_id>", citation contexts
# "ctx:<context text>", query sides "qctx:<qid>" / "qmeta:<qid>", and
# reranker pair vectors "pair:<qid>\t<doc_id>".


class HashVectorProvider:
    """Derives every pipeline vector from the built-in hashed encoder."""

    def __init__(self, config: EncoderConfig):
        self.encoder = HashedNgramEncoder(config)
        self.dim = config.dim

    def doc_vector(self, doc_id: str, text: str) -> np.ndarray:
        return self.encoder.encode(text)

    def context_vector(self, context_text: str) -> np.ndarray:
        return self.encoder.encode(context_text)

    def query_context_vector(self, query_id: str, text: str) -> np.ndarray:
        return self.encoder.encode(text)

    def query_meta_vector(self, query_id: str, text: str) -> np.ndarray:
        return self.encoder.encode(text)

    def pair_vector(self, query_id: str, doc_id: str, query_text: str, candidate_text: str) -> np.ndarray:
        return self.encoder.encode_pair(query_text, candidate_text)


class FileVectorProvider:
    """Serves pipeline vectors from a preloaded CVEC matrix.

    Lets externally computed embeddings (e.g. from a pretrained LM) drive the
    pipeline. Lookups that miss raise with the offending key so gaps in the
    export are easy to diagnose.
    """

    def __init__(self, matrix: EmbeddingMatrix):
        self.matrix = matrix
        self.dim = matrix.dim

    def doc_vector(self, doc_id: str, text: str) -> np.ndarray:
        return self.matrix.row(f"doc:{doc_id}")

    def context_vector(self, context_text: str) -> np.ndarray:
        return self.matrix.row(f"ctx:{context_text}")

    def query_context_vector(self, query_id: str, text: str) -> np.ndarray:
        return self.matrix.row(f"qctx:{query_id}")

    def query_meta_vector(self, query_id: str, text: str) -> np.ndarray:
        return self.matrix.row(f"qmeta:{query_id}")

    def pair_vector(self, query_id: str, doc_id: str, query_text: str, candidate_text: str) -> np.ndarray:
        return self.matrix.row(f"pair:{query_id}\t{doc_id}")
