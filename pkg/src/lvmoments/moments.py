"""Model-specific moment constructions for latent variable models.

Each builder produces a (M1, M2, M3) collection whose population form is

    M2 = sum_i w_i mu_i mu_i^T,    M3 = sum_i w_i mu_i^(x3)

for model-appropriate weights and component vectors, ready for the
whitening + tensor decomposition pipeline. Builders accept either exact
parameters (population path) or raw data (empirical path); both paths go
through the same correction algebra so the structural identities are
exercised end to end.
"""

from dataclasses import dataclass, field
from itertools import permutations

import numpy as np

from .corpus import SparseCorpus, corpus_m1, corpus_m2_dense, corpus_m3_dense
from .errors import (
    DegenerateChain,
    DimensionMismatch,
    DimensionTooSmall,
    NonInvertibleT,
    NonpositiveAlpha0,
    SingularPairMoment,
    TooFewDimensions,
)
from .rng import haar_orthogonal, rng_stream
from .tensor3 import SymTensor3

_DOM_SPLIT = 5

_PERMS4 = tuple(permutations(range(4)))

DEFAULT_PAIR_REG_REL = 1e-10


# ---------------------------------------------------------------------------
# Shared containers
# ---------------------------------------------------------------------------

@dataclass
class Provenance:
    kind: str                       # "population" | "empirical"
    sample_count: int | None = None
    notes: dict = field(default_factory=dict)

    @classmethod
    def population(cls, **notes):
        return cls("population", None, dict(notes))

    @classmethod
    def empirical(cls, n: int, **notes):
        return cls("empirical", int(n), dict(notes))


@dataclass(frozen=True)
class MomentSet:
    """Moment collection (M1 optional, M2 matrix, M3 tensor) plus provenance."""

    m2: np.ndarray
    m3: SymTensor3
    m1: np.ndarray | None = None
    provenance: Provenance = field(default_factory=Provenance.population)

    def __post_init__(self):
        m2 = np.asarray(self.m2, dtype=np.float64)
        m2 = (m2 + m2.T) / 2.0  # exact symmetry: (a+b)/2 == (b+a)/2
        m2 = np.ascontiguousarray(m2)
        m2.flags.writeable = False
        object.__setattr__(self, "m2", m2)
        d = m2.shape[0]
        if m2.shape != (d, d) or self.m3.dim != d:
            raise DimensionMismatch("M2 and M3 dimensions disagree")
        if self.m1 is not None:
            m1 = np.ascontiguousarray(np.asarray(self.m1, dtype=np.float64))
            if m1.shape != (d,):
                raise DimensionMismatch("M1 must be a d-vector")
            m1.flags.writeable = False
            object.__setattr__(self, "m1", m1)

    @property
    def dim(self) -> int:
        return self.m2.shape[0]


class SymTensor4:
    """Symmetric fourth-order tensor (full storage, exact index symmetry)."""

    __slots__ = ("dim", "entries")

    def __init__(self, array: np.ndarray):
        a = np.ascontiguousarray(np.asarray(array, dtype=np.float64))
        if a.ndim != 4 or len(set(a.shape)) != 1:
            raise DimensionMismatch(f"expected a 4-way hypercube, got {a.shape}")
        if not np.all(np.isfinite(a)):
            raise ValueError("tensor entries must be finite")
        if not all(np.array_equal(a, a.transpose(p)) for p in _PERMS4[1:]):
            a = self._canonical_symmetrize(a)
        a.flags.writeable = False
        self.dim = a.shape[0]
        self.entries = a

    @staticmethod
    def _canonical_symmetrize(a: np.ndarray) -> np.ndarray:
        acc = a.copy()
        for p in _PERMS4[1:]:
            acc += a.transpose(p)
        acc /= 24.0
        k = a.shape[0]
        grids = np.meshgrid(*(np.arange(k),) * 4, indexing="ij")
        srt = np.sort(np.stack(grids), axis=0)
        return acc[srt[0], srt[1], srt[2], srt[3]]

    def __repr__(self):
        return f"SymTensor4(dim={self.dim})"


# ---------------------------------------------------------------------------
# Model parameter containers (generator and truth records)
# ---------------------------------------------------------------------------

def _check_simplex(v: np.ndarray, what: str, tol: float = 1e-12):
    if np.any(v < -tol) or abs(v.sum() - 1.0) > tol:
        raise ValueError(f"{what} must lie on the probability simplex")


@dataclass(frozen=True)
class TopicParams:
    """Exchangeable single-topic model: topic weights and word distributions."""

    w: np.ndarray
    means: np.ndarray  # d x k, columns are topic word distributions

    def __post_init__(self):
        w = np.ascontiguousarray(np.asarray(self.w, dtype=np.float64))
        m = np.ascontiguousarray(np.asarray(self.means, dtype=np.float64))
        for a in (w, m):
            a.flags.writeable = False
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "means", m)
        if m.ndim != 2 or m.shape[1] != w.shape[0]:
            raise DimensionMismatch("means must have one column per weight")
        _check_simplex(w, "w")
        for j in range(m.shape[1]):
            _check_simplex(m[:, j], f"topic column {j}")

    @property
    def d(self):
        return self.means.shape[0]

    @property
    def k(self):
        return self.w.shape[0]


@dataclass(frozen=True)
class GmmParams:
    """Spherical Gaussian mixture; per-component variances (equal = common case)."""

    w: np.ndarray
    means: np.ndarray      # d x k
    variances: np.ndarray  # k

    def __post_init__(self):
        w = np.ascontiguousarray(np.asarray(self.w, dtype=np.float64))
        m = np.ascontiguousarray(np.asarray(self.means, dtype=np.float64))
        v = np.ascontiguousarray(np.asarray(self.variances, dtype=np.float64))
        for a in (w, m, v):
            a.flags.writeable = False
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "means", m)
        object.__setattr__(self, "variances", v)
        if m.ndim != 2 or m.shape[1] != w.shape[0] or v.shape != w.shape:
            raise DimensionMismatch("w, means, variances sizes disagree")
        _check_simplex(w, "w")
        if np.any(v < 0):
            raise ValueError("variances must be non-negative")

    @property
    def d(self):
        return self.means.shape[0]

    @property
    def k(self):
        return self.w.shape[0]

    @property
    def common_variance(self) -> float:
        if np.ptp(self.variances) > 1e-12:
            raise ValueError("variances differ; this is not a common-covariance model")
        return float(self.variances[0])


@dataclass(frozen=True)
class LdaParams:
    """Latent Dirichlet allocation: pseudo-counts alpha and topic columns."""

    alpha: np.ndarray
    means: np.ndarray  # d x k

    def __post_init__(self):
        a = np.ascontiguousarray(np.asarray(self.alpha, dtype=np.float64))
        m = np.ascontiguousarray(np.asarray(self.means, dtype=np.float64))
        for x in (a, m):
            x.flags.writeable = False
        object.__setattr__(self, "alpha", a)
        object.__setattr__(self, "means", m)
        if m.ndim != 2 or m.shape[1] != a.shape[0]:
            raise DimensionMismatch("means must have one column per alpha entry")
        if np.any(a <= 0):
            raise ValueError("alpha entries must be strictly positive")
        for j in range(m.shape[1]):
            _check_simplex(m[:, j], f"topic column {j}")

    @property
    def alpha0(self) -> float:
        return float(self.alpha.sum())

    @property
    def d(self):
        return self.means.shape[0]

    @property
    def k(self):
        return self.alpha.shape[0]


@dataclass(frozen=True)
class IcaParams:
    """Linear mixing of independent sources with optional Gaussian noise.

    Sources are centered with unit variance; `kurtoses` holds the excess
    kurtosis E[h^4] - 3 of each source.
    """

    mixing: np.ndarray    # d x k
    kurtoses: np.ndarray  # k
    noise_sigma: float = 0.0

    def __post_init__(self):
        A = np.ascontiguousarray(np.asarray(self.mixing, dtype=np.float64))
        kap = np.ascontiguousarray(np.asarray(self.kurtoses, dtype=np.float64))
        for x in (A, kap):
            x.flags.writeable = False
        object.__setattr__(self, "mixing", A)
        object.__setattr__(self, "kurtoses", kap)
        if A.ndim != 2 or A.shape[1] != kap.shape[0]:
            raise DimensionMismatch("mixing must have one column per kurtosis")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")

    @property
    def d(self):
        return self.mixing.shape[0]

    @property
    def k(self):
        return self.mixing.shape[1]


@dataclass(frozen=True)
class HmmParams:
    """Time-homogeneous HMM: initial law, column-stochastic transitions, emission means."""

    initial: np.ndarray     # pi, k
    transition: np.ndarray  # T, k x k, columns sum to 1
    emission: np.ndarray    # O, d x k

    def __post_init__(self):
        pi = np.ascontiguousarray(np.asarray(self.initial, dtype=np.float64))
        T = np.ascontiguousarray(np.asarray(self.transition, dtype=np.float64))
        O = np.ascontiguousarray(np.asarray(self.emission, dtype=np.float64))
        for x in (pi, T, O):
            x.flags.writeable = False
        object.__setattr__(self, "initial", pi)
        object.__setattr__(self, "transition", T)
        object.__setattr__(self, "emission", O)
        k = pi.shape[0]
        if T.shape != (k, k) or O.shape[1] != k:
            raise DimensionMismatch("initial, transition, emission sizes disagree")
        _check_simplex(pi, "initial distribution")
        for j in range(k):
            _check_simplex(T[:, j], f"transition column {j}")

    @property
    def d(self):
        return self.emission.shape[0]

    @property
    def k(self):
        return self.initial.shape[0]


# ---------------------------------------------------------------------------
# Raw sample moments (shared by the empirical paths)
# ---------------------------------------------------------------------------

def sample_mean(X: np.ndarray) -> np.ndarray:
    return np.asarray(X, dtype=np.float64).mean(axis=0)

def sample_second(X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    M = X.T @ X / X.shape[0]
    return (M + M.T) / 2.0

def sample_third(X: np.ndarray, chunk: int = 8192) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    d = X.shape[1]
    out = np.zeros((d, d, d))
    for lo in range(0, X.shape[0], chunk):
        B = X[lo : lo + chunk]
        out += np.einsum("na,nb,nc->abc", B, B, B, optimize=True)
    return out / X.shape[0]

def sample_fourth(X: np.ndarray, chunk: int = 4096) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    d = X.shape[1]
    out = np.zeros((d, d, d, d))
    for lo in range(0, X.shape[0], chunk):
        B = X[lo : lo + chunk]
        out += np.einsum("na,nb,nc,nd->abcd", B, B, B, B, optimize=True)
    return out / X.shape[0]


def _diag_correction(a: np.ndarray) -> np.ndarray:
    """sum_i (a e_i e_i + e_i a e_i + e_i e_i a) as a dense cube."""
    d = a.shape[0]
    C = np.zeros((d, d, d))
    i = np.arange(d)
    C[:, i, i] += a[:, None]
    C[i, :, i] += a[None, :]
    C[i, i, :] += a[None, :]
    return C


def structured_m2(w: np.ndarray, means: np.ndarray) -> np.ndarray:
    """Target form sum_i w_i mu_i mu_i^T."""
    return (means * w) @ means.T

def structured_m3(w: np.ndarray, means: np.ndarray) -> SymTensor3:
    """Target form sum_i w_i mu_i^(x3)."""
    return SymTensor3(np.einsum("i,ai,bi,ci->abc", w, means, means, means, optimize=True))


# ---------------------------------------------------------------------------
# Exchangeable single topic model
# ---------------------------------------------------------------------------

def topic_population_moments(p: TopicParams) -> MomentSet:
    """Raw cross moments of the single topic model are already structured."""
    return MomentSet(
        m2=structured_m2(p.w, p.means),
        m3=structured_m3(p.w, p.means),
        m1=p.means @ p.w,
        provenance=Provenance.population(model="topic"),
    )


def topic_empirical_moments(corpus: SparseCorpus) -> MomentSet:
    """Plug-in estimates of E[x1 (x) x2] and E[x1 (x) x2 (x) x3]."""
    prov = Provenance.empirical(
        corpus.n_docs,
        model="topic",
        excluded_m2=corpus.excluded_m2,
        excluded_m3=corpus.excluded_m3,
    )
    return MomentSet(
        m2=corpus_m2_dense(corpus),
        m3=corpus_m3_dense(corpus),
        m1=corpus_m1(corpus),
        provenance=prov,
    )


# ---------------------------------------------------------------------------
# Spherical Gaussian mixtures
# ---------------------------------------------------------------------------

def _gmm_correct_common(mean, second, third, sigma2):
    m2 = second - sigma2 * np.eye(mean.shape[0])
    m3 = third - sigma2 * _diag_correction(mean)
    return m2, m3


def _gmm_population_raw(p: GmmParams):
    """Exact E[x], E[x (x) x], E[x^(x3)] for a spherical mixture."""
    mean = p.means @ p.w
    second = structured_m2(p.w, p.means) + float(p.w @ p.variances) * np.eye(p.d)
    m1_noise = p.means @ (p.w * p.variances)  # sum_i w_i sigma_i^2 mu_i
    third = structured_m3(p.w, p.means).entries + _diag_correction(m1_noise)
    return mean, second, third


def gmm_common_moments(source) -> MomentSet:
    """Common-covariance mixture: subtract the noise floor from raw moments.

    The variance estimate is the smallest eigenvalue of the covariance;
    that needs the component means to live in a proper subspace, hence
    d >= k. Accepts GmmParams (population) or an n x d sample array.
    """
    if isinstance(source, GmmParams):
        if source.d < source.k:
            raise DimensionTooSmall(f"need d >= k, got d={source.d} k={source.k}")
        source.common_variance  # validates equal variances
        mean, second, third = _gmm_population_raw(source)
        n = None
    else:
        X = np.asarray(source, dtype=np.float64)
        mean, second, third = sample_mean(X), sample_second(X), sample_third(X)
        n = X.shape[0]
    cov = second - np.outer(mean, mean)
    sigma2 = float(np.linalg.eigvalsh((cov + cov.T) / 2.0)[0])
    m2, m3 = _gmm_correct_common(mean, second, third, sigma2)
    prov = (Provenance.population(model="gmm_common", sigma2=sigma2) if n is None
            else Provenance.empirical(n, model="gmm_common", sigma2=sigma2))
    return MomentSet(m2=m2, m3=SymTensor3(m3), m1=mean, provenance=prov)


def gmm_varying_moments(source, multiplicity_rtol: float = 1e-8) -> MomentSet:
    """Differing spherical covariances, corrected through M1.

    M1 = E[x (v.(x - E x))^2] for v a unit eigenvector of the smallest
    covariance eigenvalue; the population identity M1 = sum w_i sigma_i^2
    mu_i makes it the right correction vector. When the smallest
    eigenvalue is multiple beyond the expected d - k + 1, any eigenvector
    of the eigenspace works in population but the pick matters under
    noise; the choice here is deterministic (ascending eigh order with
    sign fixed) and the multiplicity is recorded in the provenance.
    """
    if isinstance(source, GmmParams):
        if source.d < source.k:
            raise DimensionTooSmall(f"need d >= k, got d={source.d} k={source.k}")
        mean, second, third = _gmm_population_raw(source)
        n = None
        k = source.k
    else:
        X = np.asarray(source, dtype=np.float64)
        mean, second, third = sample_mean(X), sample_second(X), sample_third(X)
        n = X.shape[0]
        k = None
    d = mean.shape[0]
    cov = second - np.outer(mean, mean)
    evals, evecs = np.linalg.eigh((cov + cov.T) / 2.0)
    sigma2_bar = float(evals[0])
    v = evecs[:, 0]
    v = v * (np.sign(v[np.argmax(np.abs(v))]) or 1.0)
    mult = int(np.sum(evals <= evals[0] + multiplicity_rtol * max(abs(evals[-1]), 1.0)))

    if isinstance(source, GmmParams):
        # Exact expectation of x (v.(x - mean))^2 given the parameters.
        a = (source.means - mean[:, None]).T @ v          # per-component offsets
        coeff = source.w * (a**2 + source.variances)
        m1 = source.means @ coeff + 2.0 * v * float(source.w @ (source.variances * a))
    else:
        proj = (X - mean) @ v
        m1 = (X * proj[:, None] ** 2).mean(axis=0)

    m2 = second - sigma2_bar * np.eye(d)
    m3 = third - _diag_correction(m1)
    notes = {"model": "gmm_varying", "sigma2_bar": sigma2_bar, "eig_multiplicity": mult}
    if k is not None and mult > d - k + 1:
        notes["ambiguous_eigenvector"] = True
    prov = Provenance.population(**notes) if n is None else Provenance.empirical(n, **notes)
    return MomentSet(m2=m2, m3=SymTensor3(m3), m1=m1, provenance=prov)


# ---------------------------------------------------------------------------
# Latent Dirichlet allocation
# ---------------------------------------------------------------------------

def _lda_population_raw(p: LdaParams):
    """Exact E[x1], E[x1 (x) x2], E[x1 (x) x2 (x) x3] from Dirichlet moments."""
    a = p.alpha
    a0 = p.alpha0
    mu = p.means
    m1 = mu @ (a / a0)
    # E[h_i h_j] = (a_i a_j + delta_ij a_i) / (a0 (a0+1))
    hh = (np.outer(a, a) + np.diag(a)) / (a0 * (a0 + 1.0))
    pair = mu @ hh @ mu.T
    # E[h_i h_j h_l]: rising-factorial products over the index multiset
    k = a.shape[0]
    hhh = np.einsum("i,j,l->ijl", a, a, a)
    ii = np.arange(k)
    hhh[ii, ii, :] += np.outer(a, a)
    hhh[ii, :, ii] += np.outer(a, a)
    hhh[:, ii, ii] += np.outer(a, a)
    hhh[ii, ii, ii] += 2.0 * a  # completes a(a+1)(a+2) on the diagonal
    hhh /= a0 * (a0 + 1.0) * (a0 + 2.0)
    triple = np.einsum("ijl,ai,bj,cl->abc", hhh, mu, mu, mu, optimize=True)
    return m1, pair, triple


def lda_corrections(m1, pair, triple, alpha0: float):
    """Thm-style corrections turning raw LDA moments into structured ones."""
    if alpha0 <= 0:
        raise NonpositiveAlpha0(f"alpha0 must be > 0, got {alpha0}")
    d = m1.shape[0]
    m2 = pair - (alpha0 / (alpha0 + 1.0)) * np.outer(m1, m1)
    cross = (
        np.einsum("ab,c->abc", pair, m1)
        + np.einsum("ac,b->abc", pair, m1)
        + np.einsum("bc,a->abc", pair, m1)
    )
    m3 = (
        triple
        - (alpha0 / (alpha0 + 2.0)) * cross
        + (2.0 * alpha0**2 / ((alpha0 + 2.0) * (alpha0 + 1.0)))
        * np.einsum("a,b,c->abc", m1, m1, m1)
    )
    return m2, m3


def lda_moments(source, alpha0: float) -> MomentSet:
    """LDA moment construction; alpha0 is required side information.

    Population path: LdaParams (alpha0 should equal alpha.sum() for the
    structural identity to hold). Empirical path: a SparseCorpus of word
    counts. Yields M2 = sum_i alpha_i/((alpha0+1) alpha0) mu_i mu_i^T and
    M3 = sum_i 2 alpha_i/((alpha0+2)(alpha0+1) alpha0) mu_i^(x3).
    """
    if alpha0 <= 0:
        raise NonpositiveAlpha0(f"alpha0 must be > 0, got {alpha0}")
    if isinstance(source, LdaParams):
        m1, pair, triple = _lda_population_raw(source)
        prov = Provenance.population(model="lda", alpha0=alpha0)
    elif isinstance(source, SparseCorpus):
        m1 = corpus_m1(source)
        pair = corpus_m2_dense(source)
        triple = corpus_m3_dense(source).entries
        prov = Provenance.empirical(
            source.n_docs, model="lda", alpha0=alpha0,
            excluded_m2=source.excluded_m2, excluded_m3=source.excluded_m3,
        )
    else:
        raise TypeError("source must be LdaParams or SparseCorpus")
    m2, m3 = lda_corrections(m1, pair, triple, alpha0)
    return MomentSet(m2=m2, m3=SymTensor3(m3), m1=m1, provenance=prov)


def lda_structured_weights(alpha: np.ndarray):
    """Coefficients of the structured LDA M2 and M3 (testing aid)."""
    a0 = float(np.sum(alpha))
    c2 = alpha / ((a0 + 1.0) * a0)
    c3 = 2.0 * alpha / ((a0 + 2.0) * (a0 + 1.0) * a0)
    return c2, c3


# ---------------------------------------------------------------------------
# Independent component analysis
# ---------------------------------------------------------------------------

def ica_moments(source) -> SymTensor4:
    """Fourth cumulant tensor M4 = E[x^(x4)] - T.

    T has entries E[x_a x_b] E[x_c x_d] + E[x_a x_c] E[x_b x_d] +
    E[x_a x_d] E[x_b x_c]; subtracting it kills every Gaussian
    contribution, leaving sum_i kappa_i mu_i^(x4) over the mixing columns.
    Accepts IcaParams (population) or an n x d sample array of centered
    observations.
    """
    if isinstance(source, IcaParams):
        A, kap = source.mixing, source.kurtoses
        m4 = np.einsum("i,ai,bi,ci,di->abcd", kap, A, A, A, A, optimize=True)
        return SymTensor4(m4)
    X = np.asarray(source, dtype=np.float64)
    fourth = sample_fourth(X)
    P = sample_second(X)
    t = np.einsum("ab,cd->abcd", P, P)
    t = t + t.transpose(0, 2, 1, 3) + t.transpose(0, 2, 3, 1)
    return SymTensor4(fourth - t)


def ica_reduce(M4: SymTensor4, u: np.ndarray, v: np.ndarray):
    """Collapse M4 into an (M2-like, M3-like) pair via fixed directions.

    Returns (M4(I,I,u,v), M4(I,I,I,v)): a matrix sum_i kappa_i (mu_i.u)
    (mu_i.v) mu_i mu_i^T and a tensor sum_i kappa_i (mu_i.v) mu_i^(x3).
    """
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != (M4.dim,) or v.shape != (M4.dim,):
        raise DimensionMismatch("u and v must match the tensor dimension")
    tri = np.tensordot(M4.entries, v, axes=([3], [0]))
    pair = np.tensordot(tri, u, axes=([2], [0]))
    return (pair + pair.T) / 2.0, SymTensor3(tri)


# ---------------------------------------------------------------------------
# Multi-view models and HMMs
# ---------------------------------------------------------------------------

def multiview_population(w: np.ndarray, means1, means2, means3):
    """Exact cross moments (p12, p13, p23, triple) of a multi-view model."""
    A = [np.asarray(m, dtype=np.float64) for m in (means1, means2, means3)]
    p12 = (A[0] * w) @ A[1].T
    p13 = (A[0] * w) @ A[2].T
    p23 = (A[1] * w) @ A[2].T
    triple = np.einsum("i,ai,bi,ci->abc", w, A[0], A[1], A[2], optimize=True)
    return p12, p13, p23, triple


def multiview_empirical(X1, X2, X3, chunk: int = 8192):
    """Plug-in cross moments from paired observations (one row per draw)."""
    X1, X2, X3 = (np.asarray(X, dtype=np.float64) for X in (X1, X2, X3))
    n = X1.shape[0]
    if X2.shape[0] != n or X3.shape[0] != n:
        raise DimensionMismatch("views must be sampled jointly")
    p12 = X1.T @ X2 / n
    p13 = X1.T @ X3 / n
    p23 = X2.T @ X3 / n
    triple = np.zeros((X1.shape[1], X2.shape[1], X3.shape[1]))
    for lo in range(0, n, chunk):
        triple += np.einsum(
            "na,nb,nc->abc", X1[lo:lo+chunk], X2[lo:lo+chunk], X3[lo:lo+chunk],
            optimize=True,
        )
    return p12, p13, p23, triple / n


def _tikhonov_inverse(A: np.ndarray, reg_rel: float) -> np.ndarray:
    U, s, Vt = np.linalg.svd(A)
    if s[0] == 0 or s[-1] <= reg_rel * s[0]:
        raise SingularPairMoment(
            f"pair moment conditioning {s[0] / max(s[-1], np.finfo(float).tiny):.3e} "
            f"worse than 1/reg = {1.0 / reg_rel:.3e}"
        )
    reg = reg_rel * s[0]
    filt = s / (s * s + reg * reg)
    return (Vt.T * filt) @ U.T


def multiview_symmetrize(p12, p13, p23, triple, reg: float | None = None,
                         provenance: Provenance | None = None) -> MomentSet:
    """Symmetrize cross moments so view-3 parameters become recoverable.

    Transforms x1 by E[x3 (x) x2] E[x1 (x) x2]^{-1} and x2 by
    E[x3 (x) x1] E[x2 (x) x1]^{-1} (Tikhonov-regularized inverses), then
    M2 = E[x~1 (x) x~2] symmetrized as (M2 + M2^T)/2 and M3 = E[x~1 (x)
    x~2 (x) x3] symmetrized over all six orderings. Population values
    equal sum_i w_i mu_{3,i}^(x2|3). Requires the simplified square case
    d1 = d2 = d3.
    """
    p12, p13, p23 = (np.asarray(p, dtype=np.float64) for p in (p12, p13, p23))
    triple = np.asarray(triple, dtype=np.float64)
    k = p12.shape[0]
    if p12.shape != (k, k) or p13.shape != (k, k) or p23.shape != (k, k):
        raise DimensionMismatch("pair moments must all be k x k (square multi-view case)")
    if triple.shape != (k, k, k):
        raise DimensionMismatch("triple moment must be k x k x k")
    if reg is None:
        reg = DEFAULT_PAIR_REG_REL
    c1 = p23.T @ _tikhonov_inverse(p12, reg)      # E[x3 x2] E[x1 x2]^-1
    c2 = p13.T @ _tikhonov_inverse(p12.T, reg)    # E[x3 x1] E[x2 x1]^-1
    m2 = c1 @ p12 @ c2.T
    m3 = np.einsum("abl,ia,jb->ijl", triple, c1, c2, optimize=True)
    return MomentSet(
        m2=(m2 + m2.T) / 2.0,
        m3=SymTensor3(m3),  # construction averages all six orderings
        provenance=provenance or Provenance.population(model="multiview"),
    )


def hmm_views(params: HmmParams, tol: float = 1e-10):
    """Conditional-mean matrices of (x1, x2, x3) given the second hidden state.

    Returns (view1, view2, view3, w) with view2 = O, view3 = O T, view1 =
    O diag(pi) T^T diag(w)^{-1}, and w = T pi the law of the conditioning
    state. Raises DegenerateChain when O is column-rank deficient, T is
    singular, or pi / T pi have non-positive entries.
    """
    O, T, pi = params.emission, params.transition, params.initial
    w = T @ pi
    sv_o = np.linalg.svd(O, compute_uv=False)
    if sv_o[-1] <= tol * max(sv_o[0], 1.0):
        raise DegenerateChain("emission matrix is not full column rank")
    sv_t = np.linalg.svd(T, compute_uv=False)
    if sv_t[-1] <= tol * max(sv_t[0], 1.0):
        raise DegenerateChain("transition matrix is singular")
    if np.any(pi <= tol) or np.any(w <= tol):
        raise DegenerateChain("initial or one-step state law has non-positive entries")
    view1 = O @ np.diag(pi) @ T.T @ np.diag(1.0 / w)
    return view1, O, O @ T, w


def _project_simplex_exact(col: np.ndarray) -> tuple[np.ndarray, float]:
    """Clip negatives, renormalize, and force an exact unit sum."""
    clipped = np.maximum(col, 0.0)
    total = clipped.sum()
    if total <= 0:
        raise NonInvertibleT("column collapsed to zero after projection")
    out = clipped / total
    out[np.argmax(out)] += 1.0 - out.sum()
    return out, float(np.abs(out - col).sum())


def hmm_recover(estimate, view2_means: np.ndarray, w: np.ndarray):
    """Back out (pi, T, O) from recovered view-3 means.

    `estimate` carries the view-3 conditional means O T (columns aligned
    with `view2_means` = O and with `w`). T_hat = pinv(O) (view-3 means)
    projected to column-stochastic; pi_hat = T_hat^{-1} w projected to
    the simplex. Projection magnitudes are returned for diagnostics.
    """
    O = np.asarray(view2_means, dtype=np.float64)
    M3v = np.asarray(estimate.means, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    k = O.shape[1]
    if M3v.shape != O.shape or w.shape != (k,):
        raise DimensionMismatch("views and weights sizes disagree")
    sv = np.linalg.svd(O, compute_uv=False)
    if sv[-1] <= 1e-12 * max(sv[0], 1.0):
        raise DegenerateChain("view-2 mean matrix is not full column rank")
    T_raw = np.linalg.pinv(O) @ M3v
    cols = []
    proj_t = 0.0
    for j in range(k):
        col, mag = _project_simplex_exact(T_raw[:, j])
        cols.append(col)
        proj_t += mag
    T_hat = np.stack(cols, axis=1)
    if abs(np.linalg.det(T_hat)) <= 1e-12:
        raise NonInvertibleT("projected transition matrix is singular")
    pi_raw = np.linalg.solve(T_hat, w)
    pi_hat, proj_pi = _project_simplex_exact(pi_raw)
    params = HmmParams(initial=pi_hat, transition=T_hat, emission=O)
    return params, {"projection_l1_T": proj_t, "projection_l1_pi": proj_pi}


# ---------------------------------------------------------------------------
# Random three-view construction for product distributions
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ThreeViewSplit:
    """Coordinate partition (and optional rotation) defining three views."""

    groups: tuple
    rotation: np.ndarray | None = None

    def apply(self, x: np.ndarray):
        x = np.asarray(x, dtype=np.float64)
        y = x @ self.rotation.T if self.rotation is not None else x
        return tuple(y[..., g] for g in self.groups)


def random_three_views(x: np.ndarray, *, seed: int, rotate: bool = False,
                       min_group: int = 1):
    """Split coordinates uniformly into three conditionally independent views.

    Each coordinate picks a group uniformly at random (re-drawn until all
    groups reach `min_group`); with rotate=True a Haar rotation is applied
    first, the route that makes spherical mixtures amenable to the
    multi-view reduction. Returns ((x1, x2, x3), split) so the partition
    can be reused across samples.
    """
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[-1]
    if n < 3 or n < 3 * min_group:
        raise TooFewDimensions(f"need >= {max(3, 3 * min_group)} coordinates, got {n}")
    rng = rng_stream(seed, _DOM_SPLIT)
    while True:
        assign = rng.integers(0, 3, size=n)
        groups = tuple(np.flatnonzero(assign == t) for t in range(3))
        if all(g.size >= min_group for g in groups):
            break
    rotation = haar_orthogonal(n, rng) if rotate else None
    split = ThreeViewSplit(groups=groups, rotation=rotation)
    return split.apply(x), split
