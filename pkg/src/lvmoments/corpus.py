"""Sparse word-count corpora and implicit moment contractions.

A document of length ell contributes the average of e_x (x) e_y over
ordered pairs of distinct word positions to the second-moment estimate,
and the average over ordered triples to the third-moment estimate. Both
averages collapse to closed forms in the count vector c:

    pair contribution   = (c (x) c - diag(c)) / (ell (ell-1))
    triple contribution = (c^(x3) + 2 sum_i c_i e_i^(x3)
                           - sum_ij c_i c_j (e_i e_i e_j + e_i e_j e_i
                                             + e_i e_j e_j))
                          / (ell (ell-1) (ell-2))

so contractions against vectors cost O(nnz(c)) and never materialize the
d x d x d array. Corpus-level operators average per-document
contributions; documents shorter than the required order are excluded
from that order's estimate and counted.
"""

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import (
    CorpusFormatError,
    DocTooShort,
    EmptyCorpus,
    RankDeficient,
)
from .rng import rng_stream
from .tensor3 import SymTensor3
from .whitening import WhiteningMap, build_whitener

_DOM_RANGEFINDER = 4
DEFAULT_OVERSAMPLE = 10


class SparseCorpus:
    """Immutable bag-of-words corpus over a vocabulary of size d.

    Stores one count vector per document (CSR); raw token order is never
    kept, the count vector being a sufficient statistic for everything
    computed here.
    """

    __slots__ = ("vocab_size", "counts", "lengths", "n_docs", "total_nnz",
                 "m2_mask", "m3_mask", "n_m2_docs", "n_m3_docs")

    def __init__(self, counts: sp.spmatrix, vocab_size: int | None = None):
        counts = sp.csr_matrix(counts, dtype=np.float64)
        counts.eliminate_zeros()
        if counts.nnz and counts.data.min() <= 0:
            raise ValueError("counts must be positive")
        if counts.nnz and np.any(counts.data != np.round(counts.data)):
            raise ValueError("counts must be integers")
        if vocab_size is not None:
            if vocab_size < counts.shape[1]:
                raise ValueError("vocab_size smaller than observed word ids")
            counts = sp.csr_matrix((counts.data, counts.indices, counts.indptr),
                                   shape=(counts.shape[0], vocab_size))
        self.vocab_size = counts.shape[1]
        self.counts = counts
        self.lengths = np.asarray(counts.sum(axis=1)).ravel()
        self.n_docs = counts.shape[0]
        self.total_nnz = counts.nnz
        self.m2_mask = self.lengths >= 2
        self.m3_mask = self.lengths >= 3
        self.n_m2_docs = int(self.m2_mask.sum())
        self.n_m3_docs = int(self.m3_mask.sum())

    @classmethod
    def from_dense(cls, count_matrix: np.ndarray, vocab_size: int | None = None):
        return cls(sp.csr_matrix(np.asarray(count_matrix)), vocab_size)

    @classmethod
    def from_docs(cls, docs, vocab_size: int):
        """Build from an iterable of {word_id: count} mappings or (id, count) pair lists."""
        rows, cols, data = [], [], []
        n = 0
        for i, doc in enumerate(docs):
            n = i + 1
            items = doc.items() if hasattr(doc, "items") else doc
            for w, c in items:
                rows.append(i)
                cols.append(w)
                data.append(c)
        mat = sp.coo_matrix((data, (rows, cols)), shape=(max(n, 1), vocab_size))
        return cls(mat.tocsr(), vocab_size)

    @property
    def excluded_m2(self) -> int:
        return self.n_docs - self.n_m2_docs

    @property
    def excluded_m3(self) -> int:
        return self.n_docs - self.n_m3_docs

    def doc_count_vector(self, i: int) -> np.ndarray:
        return np.asarray(self.counts.getrow(i).todense()).ravel()


def load_corpus(path, vocab_size: int | None = None) -> SparseCorpus:
    """Read "doc_id<TAB>word_id<TAB>count" lines (0-based ids, '#' comments).

    Document ids may interleave; duplicate (doc, word) lines accumulate.
    Malformed lines are hard errors carrying their line number.
    """
    rows, cols, data = [], [], []
    max_doc = -1
    max_word = -1
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            parts = line.rstrip("\n").split("\t")
            if len(parts) != 3:
                raise CorpusFormatError(line_no, f"expected 3 tab-separated fields, got {len(parts)}")
            try:
                doc_id, word_id, count = int(parts[0]), int(parts[1]), int(parts[2])
            except ValueError:
                raise CorpusFormatError(line_no, f"non-integer field in {parts!r}") from None
            if doc_id < 0 or word_id < 0:
                raise CorpusFormatError(line_no, "ids must be non-negative")
            if count <= 0:
                raise CorpusFormatError(line_no, f"count must be positive, got {count}")
            rows.append(doc_id)
            cols.append(word_id)
            data.append(count)
            max_doc = max(max_doc, doc_id)
            max_word = max(max_word, word_id)
    if not rows:
        raise EmptyCorpus(f"no documents in {path}")
    d = vocab_size if vocab_size is not None else max_word + 1
    if d <= max_word:
        raise CorpusFormatError(0, f"vocab_size={d} smaller than max word id {max_word}")
    mat = sp.coo_matrix((data, (rows, cols)), shape=(max_doc + 1, d)).tocsr()
    mat.sum_duplicates()
    return SparseCorpus(mat, d)


def save_corpus(path, corpus: SparseCorpus) -> None:
    coo = corpus.counts.tocoo()
    order = np.lexsort((coo.col, coo.row))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# doc_id\tword_id\tcount\n")
        for r, c, v in zip(coo.row[order], coo.col[order], coo.data[order]):
            fh.write(f"{r}\t{c}\t{int(v)}\n")


# ---------------------------------------------------------------------------
# Per-document contributions
# ---------------------------------------------------------------------------

def _as_count_vector(c) -> np.ndarray:
    if sp.issparse(c):
        c = np.asarray(c.todense()).ravel()
    c = np.asarray(c, dtype=np.float64).ravel()
    if c.size and c.min() < 0:
        raise ValueError("counts must be non-negative")
    return c


def doc_m2_contribution(c) -> sp.csr_matrix:
    """Average of e_x (x) e_y over ordered pairs of distinct positions."""
    c = _as_count_vector(c)
    ell = c.sum()
    if ell < 2:
        raise DocTooShort(f"need length >= 2, got {ell:g}")
    nz = np.flatnonzero(c)
    vals = c[nz]
    outer = np.outer(vals, vals)
    outer[np.arange(nz.size), np.arange(nz.size)] -= vals
    rows = np.repeat(nz, nz.size)
    cols = np.tile(nz, nz.size)
    mat = sp.coo_matrix((outer.ravel(), (rows, cols)), shape=(c.size, c.size))
    mat = (mat / (ell * (ell - 1.0))).tocsr()
    mat.eliminate_zeros()
    return mat


def doc_m3_contract(c, theta: np.ndarray) -> np.ndarray:
    """M3_doc(I, theta, theta) in O(nnz(c)) without forming the tensor."""
    c = _as_count_vector(c)
    theta = np.asarray(theta, dtype=np.float64)
    if theta.shape != c.shape:
        raise ValueError("theta must match the vocabulary size")
    ell = c.sum()
    if ell < 3:
        raise DocTooShort(f"need length >= 3, got {ell:g}")
    ct = c * theta
    dot = ct.sum()            # c . theta
    quad = (ct * theta).sum()  # c . theta^2
    out = c * dot * dot + 2.0 * ct * theta - 2.0 * ct * dot - c * quad
    return out / (ell * (ell - 1.0) * (ell - 2.0))


def doc_m3_dense(c) -> SymTensor3:
    """Explicit d x d x d per-document third-moment contribution (small d only)."""
    c = _as_count_vector(c)
    ell = c.sum()
    if ell < 3:
        raise DocTooShort(f"need length >= 3, got {ell:g}")
    d = c.size
    cube = np.einsum("a,b,c->abc", c, c, c)
    i = np.arange(d)
    cube[i, i, i] += 2.0 * c
    pair = np.outer(c, c)
    cube[i[:, None], i[:, None], i[None, :]] -= pair  # e_i e_i e_j
    cube[i[:, None], i[None, :], i[:, None]] -= pair  # e_i e_j e_i
    cube[i[:, None], i[None, :], i[None, :]] -= pair  # e_i e_j e_j
    return SymTensor3(cube / (ell * (ell - 1.0) * (ell - 2.0)))


# ---------------------------------------------------------------------------
# Corpus-level operators (implicit; never materialize d^2 or d^3 arrays)
# ---------------------------------------------------------------------------

def _m2_weights(corpus: SparseCorpus) -> np.ndarray:
    w = np.zeros(corpus.n_docs)
    ell = corpus.lengths[corpus.m2_mask]
    w[corpus.m2_mask] = 1.0 / (ell * (ell - 1.0))
    return w


def _m3_weights(corpus: SparseCorpus) -> np.ndarray:
    w = np.zeros(corpus.n_docs)
    ell = corpus.lengths[corpus.m3_mask]
    w[corpus.m3_mask] = 1.0 / (ell * (ell - 1.0) * (ell - 2.0))
    return w


def corpus_m1(corpus: SparseCorpus) -> np.ndarray:
    """Estimate of E[x_1]: average of c/ell over documents."""
    if corpus.n_docs == 0 or corpus.lengths.sum() == 0:
        raise EmptyCorpus("no words in corpus")
    inv = np.where(corpus.lengths > 0, 1.0 / np.maximum(corpus.lengths, 1), 0.0)
    n = int((corpus.lengths > 0).sum())
    return np.asarray(corpus.counts.T @ inv).ravel() / n


def corpus_m2_matvec(corpus: SparseCorpus, y: np.ndarray) -> np.ndarray:
    """(average doc pair-moment) @ y using one sparse pass."""
    if corpus.n_m2_docs == 0:
        raise EmptyCorpus("no documents of length >= 2")
    y = np.asarray(y, dtype=np.float64)
    w = _m2_weights(corpus)
    Cy = corpus.counts @ y
    out = corpus.counts.T @ (w * Cy)
    diag = np.asarray(corpus.counts.T @ w).ravel()
    return (out - diag * y) / corpus.n_m2_docs


def corpus_m2_matmat(corpus: SparseCorpus, Y: np.ndarray) -> np.ndarray:
    """corpus_m2_matvec applied to every column of Y in one sparse pass."""
    if corpus.n_m2_docs == 0:
        raise EmptyCorpus("no documents of length >= 2")
    Y = np.asarray(Y, dtype=np.float64)
    w = _m2_weights(corpus)
    CY = corpus.counts @ Y
    out = corpus.counts.T @ (w[:, None] * CY)
    diag = np.asarray(corpus.counts.T @ w).ravel()
    return (out - diag[:, None] * Y) / corpus.n_m2_docs


def corpus_m3_contract(corpus: SparseCorpus, theta: np.ndarray) -> np.ndarray:
    """(average doc triple-moment)(I, theta, theta) in O(N + d) time."""
    if corpus.n_m3_docs == 0:
        raise EmptyCorpus("no documents of length >= 3")
    theta = np.asarray(theta, dtype=np.float64)
    w = _m3_weights(corpus)
    u = corpus.counts @ theta                       # per-doc c . theta
    q = corpus.counts @ (theta * theta)             # per-doc c . theta^2
    s = np.asarray(corpus.counts.T @ w).ravel()     # sum_n w_n c_n
    t1 = corpus.counts.T @ (w * u * u)
    t3 = corpus.counts.T @ (w * u)
    t4 = corpus.counts.T @ (w * q)
    out = t1 + 2.0 * s * theta * theta - 2.0 * t3 * theta - t4
    return np.asarray(out).ravel() / corpus.n_m3_docs


def corpus_m2_dense(corpus: SparseCorpus) -> np.ndarray:
    """Materialized d x d pair-moment estimate (test oracle / small d)."""
    if corpus.n_m2_docs == 0:
        raise EmptyCorpus("no documents of length >= 2")
    w = _m2_weights(corpus)
    C = corpus.counts
    M = (C.T @ sp.diags(w) @ C).toarray()
    M -= np.diag(np.asarray(C.T @ w).ravel())
    M /= corpus.n_m2_docs
    return (M + M.T) / 2.0


def corpus_m3_dense(corpus: SparseCorpus, doc_chunk: int = 4096) -> SymTensor3:
    """Materialized d x d x d triple-moment estimate (small d only)."""
    if corpus.n_m3_docs == 0:
        raise EmptyCorpus("no documents of length >= 3")
    d = corpus.vocab_size
    w = _m3_weights(corpus)
    cube = np.zeros((d, d, d))
    for lo in range(0, corpus.n_docs, doc_chunk):
        hi = min(lo + doc_chunk, corpus.n_docs)
        block = corpus.counts[lo:hi].toarray()
        wb = w[lo:hi]
        cube += np.einsum("n,na,nb,nc->abc", wb, block, block, block, optimize=True)
    i = np.arange(d)
    cube[i, i, i] += 2.0 * np.asarray(corpus.counts.T @ w).ravel()
    pair = (corpus.counts.T @ sp.diags(w) @ corpus.counts).toarray()
    cube[i[:, None], i[:, None], i[None, :]] -= pair
    cube[i[:, None], i[None, :], i[:, None]] -= pair
    cube[i[:, None], i[None, :], i[None, :]] -= pair
    return SymTensor3(cube / corpus.n_m3_docs)


# ---------------------------------------------------------------------------
# Randomized whitening and the whitened power kernel
# ---------------------------------------------------------------------------

def randomized_whitener(
    corpus: SparseCorpus, k: int, oversample: int = DEFAULT_OVERSAMPLE, *, seed: int
) -> WhiteningMap:
    """Whitening map from implicit products with the pair-moment matrix.

    Range finder: sketch Y = M2 R with R a d x (k + oversample) Gaussian
    matrix, refine with one power pass Y <- M2 orth(Y), and take the top-k
    left singular vectors U. The whitener comes from the exact
    eigendecomposition of the small matrix U^T M2 U mapped back through U.
    """
    if k < 1 or k > corpus.vocab_size:
        raise ValueError(f"k={k} out of range for vocab {corpus.vocab_size}")
    kp = max(k + oversample, k)
    rng = rng_stream(seed, _DOM_RANGEFINDER)
    R = rng.standard_normal((corpus.vocab_size, kp))
    Y = corpus_m2_matmat(corpus, R)
    Q, _ = np.linalg.qr(Y)
    Y = corpus_m2_matmat(corpus, Q)          # one power pass
    U, _, _ = np.linalg.svd(Y, full_matrices=False)
    U = U[:, :k]
    small = U.T @ corpus_m2_matmat(corpus, U)
    small = (small + small.T) / 2.0
    wmap_small = build_whitener(small, k)
    W = U @ wmap_small.W
    B = U @ wmap_small.B
    return WhiteningMap(W=W, B=B, eigvals_used=wmap_small.eigvals_used, rank_k=k)


def exact_whitener(corpus: SparseCorpus, k: int) -> WhiteningMap:
    """Whitener from the materialized pair moment (reference path)."""
    return build_whitener(corpus_m2_dense(corpus), k)


def whitened_power_kernel(
    corpus: SparseCorpus, wmap: WhiteningMap, theta: np.ndarray
) -> np.ndarray:
    """W^T M3(I, W theta, W theta) without forming the whitened tensor.

    This is the power-map core: (i) eta = W theta, (ii) eta' =
    M3(I, eta, eta) via the implicit corpus contraction, (iii) W^T eta'.
    """
    theta = np.asarray(theta, dtype=np.float64)
    if theta.shape != (wmap.rank_k,):
        raise ValueError("theta must live in the whitened space")
    eta = wmap.W @ theta
    return wmap.W.T @ corpus_m3_contract(corpus, eta)


def whitened_m3(corpus: SparseCorpus, wmap: WhiteningMap, doc_chunk: int = 4096) -> SymTensor3:
    """Materialize M3(W, W, W) (k x k x k) in one corpus pass.

    Works in O(N k^2 + d k^3) with O(d k) memory: the count-vector form
    of the document contributions turns every term into sparse products
    against W, so the d x d x d tensor (and any d x d array) is never
    formed.
    """
    if corpus.n_m3_docs == 0:
        raise EmptyCorpus("no documents of length >= 3")
    k = wmap.rank_k
    W = wmap.W
    w = _m3_weights(corpus)
    cube = np.zeros((k, k, k))
    corr = np.zeros((k, k, k))
    for lo in range(0, corpus.n_docs, doc_chunk):
        hi = min(lo + doc_chunk, corpus.n_docs)
        block = corpus.counts[lo:hi]
        wb = w[lo:hi]
        P = block @ W                                   # rows: W^T c
        wP = wb[:, None] * P
        cube += np.einsum("na,nb,nc->abc", wP, P, P, optimize=True)
        # corr[a,b,c] = sum_n w_n sum_ij c_i c_j W_ia W_ib W_jc, built one
        # leading slice at a time to avoid any d x d intermediate
        for a in range(k):
            Qa = block @ (W * W[:, a : a + 1])          # rows: sum_i c_i W_ia W_ib
            corr[a] += (wb[:, None] * Qa).T @ P
    cw = np.asarray(corpus.counts.T @ w).ravel()        # sum_n w_n c_n
    cube -= corr + corr.transpose(0, 2, 1) + corr.transpose(2, 0, 1)
    for lo in range(0, corpus.vocab_size, 8192):
        hi = min(lo + 8192, corpus.vocab_size)
        Wb = W[lo:hi]
        cube += 2.0 * np.einsum("i,ia,ib,ic->abc", cw[lo:hi], Wb, Wb, Wb, optimize=True)
    return SymTensor3(cube / corpus.n_m3_docs)
