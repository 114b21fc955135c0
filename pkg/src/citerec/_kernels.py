"""Hot numeric kernels: numba @njit with a pure-numpy fallback.

The two inner loops that dominate runtime at corpus scale live here: the
edge-wise accumulation that builds profiled document vectors, and cosine
scoring of a query against every admissible document. Set ``CITEREC_NUMBA=0``
to force the numpy path (the default uses numba when it imports cleanly).
``benchmarks/bench_kernels.py`` compares the two.

Accumulation runs in float64 in edge order on both paths, so they agree
bit-for-bit; cosine scores agree to ~1e-12 (summation order differs).
"""

from __future__ import annotations

import os

import numpy as np

try:
    from numba import njit

    _NUMBA_OK = True
except ImportError:  # pragma: no cover - exercised only without numba installed
    _NUMBA_OK = False

    def njit(*args, **kwargs):
        def wrap(fn):
            return fn

        return wrap


USE_NUMBA = _NUMBA_OK and os.environ.get("CITEREC_NUMBA", "1") != "0"


def backend() -> str:
    return "numba" if USE_NUMBA else "numpy"


@njit(cache=True)
def _accumulate_numba(cited_rows, citing_rows, ctx_rows, doc_vecs, ctx_vecs, sum_ctx, sum_citer, counts):
    for e in range(cited_rows.shape[0]):
        r = cited_rows[e]
        c = citing_rows[e]
        x = ctx_rows[e]
        for j in range(doc_vecs.shape[1]):
            sum_ctx[r, j] += ctx_vecs[x, j]
            sum_citer[r, j] += doc_vecs[c, j]
        counts[r] += 1


def _accumulate_numpy(cited_rows, citing_rows, ctx_rows, doc_vecs, ctx_vecs, sum_ctx, sum_citer, counts):
    # np.add.at applies updates in index order: same f64 additions in the
    # same per-element order as the explicit loop, hence bit-identical.
    np.add.at(sum_ctx, cited_rows, ctx_vecs[ctx_rows].astype(np.float64))
    np.add.at(sum_citer, cited_rows, doc_vecs[citing_rows].astype(np.float64))
    counts += np.bincount(cited_rows, minlength=counts.shape[0])


def accumulate_profile_sums(
    cited_rows: np.ndarray,
    citing_rows: np.ndarray,
    ctx_rows: np.ndarray,
    doc_vecs: np.ndarray,
    ctx_vecs: np.ndarray,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per cited document, sum context vectors and citing-doc vectors.

    Returns (sum_ctx, sum_citer, counts) with float64 sums; rows of uncited
    documents stay exactly zero.
    """
    n, dim = doc_vecs.shape
    sum_ctx = np.zeros((n, dim), dtype=np.float64)
    sum_citer = np.zeros((n, dim), dtype=np.float64)
    counts = np.zeros(n, dtype=np.int64)
    if cited_rows.shape[0] == 0:
        return sum_ctx, sum_citer, counts
    cited_rows = np.ascontiguousarray(cited_rows, dtype=np.int64)
    citing_rows = np.ascontiguousarray(citing_rows, dtype=np.int64)
    ctx_rows = np.ascontiguousarray(ctx_rows, dtype=np.int64)
    doc_vecs = np.ascontiguousarray(doc_vecs, dtype=np.float32)
    ctx_vecs = np.ascontiguousarray(ctx_vecs, dtype=np.float32)
    impl = _accumulate_numba if USE_NUMBA else _accumulate_numpy
    impl(cited_rows, citing_rows, ctx_rows, doc_vecs, ctx_vecs, sum_ctx, sum_citer, counts)
    return sum_ctx, sum_citer, counts


@njit(cache=True)
def _cosine_numba(vectors, norms, rows, query, qnorm, out):
    dim = vectors.shape[1]
    for i in range(rows.shape[0]):
        r = rows[i]
        if norms[r] == 0.0 or qnorm == 0.0:
            out[i] = 0.0
        else:
            acc = 0.0
            for j in range(dim):
                acc += vectors[r, j] * query[j]
            out[i] = acc / (norms[r] * qnorm)


def _cosine_numpy(vectors, norms, rows, query, qnorm, out):
    sub = vectors[rows].astype(np.float64)
    dots = sub @ query
    denom = norms[rows] * qnorm
    np.divide(dots, denom, out=out, where=denom != 0.0)
    out[denom == 0.0] = 0.0


def cosine_scores(
    vectors: np.ndarray,
    norms: np.ndarray,
    rows: np.ndarray,
    query: np.ndarray,
) -> np.ndarray:
    """Cosine of a float64 query against selected float32 rows.

    Zero-norm rows (and a zero-norm query) score 0 by convention.
    """
    rows = np.ascontiguousarray(rows, dtype=np.int64)
    query = np.ascontiguousarray(query, dtype=np.float64)
    qnorm = float(np.linalg.norm(query))
    out = np.empty(rows.shape[0], dtype=np.float64)
    if rows.shape[0] == 0:
        return out
    impl = _cosine_numba if USE_NUMBA else _cosine_numpy
    impl(
        np.ascontiguousarray(vectors, dtype=np.float32),
        np.ascontiguousarray(norms, dtype=np.float64),
        rows,
        query,
        qnorm,
        out,
    )
    return out
