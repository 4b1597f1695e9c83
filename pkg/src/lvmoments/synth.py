"""Seeded synthetic instances: ground-truth parameters, samples, tensors.

Everything is a pure function of (spec, seed); repeated calls with the
same seed are bit-identical. Parameter generators enforce the
non-degeneracy each model's moment identities require (positive weights,
linearly independent means) and raise InfeasibleSpec otherwise.
"""

from dataclasses import dataclass

import numpy as np

from .corpus import SparseCorpus
from .errors import InfeasibleSpec
from .moments import GmmParams, HmmParams, IcaParams, LdaParams, TopicParams
from .rng import haar_orthogonal, rng_stream, unit_vector
from .tensor3 import (
    OrthoDecomposition,
    RankOneTerm,
    SymTensor3,
    from_rank_one_sum,
    op_norm_estimate,
)

MODELS = ("topic", "gmm_common", "gmm_varying", "lda", "ica", "hmm", "raw_tensor")

_DOM_PARAMS = 6
_DOM_SAMPLES = 7
_DOM_TENSOR = 8


@dataclass(frozen=True)
class SynthSpec:
    """What to generate: model tag, sizes, and the base seed.

    `noise` is the target operator norm of the additive perturbation and
    only applies to raw_tensor instances; observation noise for GMM/ICA
    is a model parameter drawn by gen_params.
    """

    model: str
    d: int
    k: int
    n_samples: int = 0
    doc_length: int = 3
    noise: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.model not in MODELS:
            raise InfeasibleSpec(f"unknown model {self.model!r}; choose from {MODELS}")
        if self.d < 1 or self.k < 1 or self.doc_length < 1 or self.n_samples < 0:
            raise InfeasibleSpec("dimensions must be positive")
        if self.noise < 0:
            raise InfeasibleSpec("noise must be >= 0")


def _bounded_simplex(rng, k: int) -> np.ndarray:
    """Weights in [1, 2]/Z: strictly positive and well conditioned."""
    u = rng.uniform(1.0, 2.0, size=k)
    return u / u.sum()


def _dirichlet_columns(rng, d: int, k: int) -> np.ndarray:
    """k well-separated probability columns (a.s. linearly independent)."""
    while True:
        cols = rng.dirichlet(np.ones(d) * 0.8, size=k).T
        if np.linalg.matrix_rank(cols) == k:
            return cols


def gen_params(spec: SynthSpec):
    """Draw ground-truth parameters for the spec's model, deterministically."""
    rng = rng_stream(spec.seed, _DOM_PARAMS)
    d, k = spec.d, spec.k
    if spec.model == "topic":
        if k > d:
            raise InfeasibleSpec(f"topic model needs k <= d, got k={k} d={d}")
        return TopicParams(w=_bounded_simplex(rng, k), means=_dirichlet_columns(rng, d, k))
    if spec.model in ("gmm_common", "gmm_varying"):
        if d < k:
            raise InfeasibleSpec(f"Gaussian mixture needs d >= k, got d={d} k={k}")
        means = rng.standard_normal((d, k))
        if spec.model == "gmm_common":
            variances = np.full(k, rng.uniform(0.2, 0.5))
        else:
            variances = rng.uniform(0.2, 0.8, size=k)
        return GmmParams(w=_bounded_simplex(rng, k), means=means, variances=variances)
    if spec.model == "lda":
        if k > d:
            raise InfeasibleSpec(f"LDA needs k <= d, got k={k} d={d}")
        alpha = rng.uniform(0.3, 1.0, size=k)
        return LdaParams(alpha=alpha, means=_dirichlet_columns(rng, d, k))
    if spec.model == "ica":
        if d < k:
            raise InfeasibleSpec(f"ICA estimation needs d >= k, got d={d} k={k}")
        mixing = rng.standard_normal((d, k))
        # unit-variance Laplace sources: excess kurtosis exactly 3
        return IcaParams(mixing=mixing, kurtoses=np.full(k, 3.0), noise_sigma=0.0)
    if spec.model == "hmm":
        if d < k:
            raise InfeasibleSpec(f"HMM recovery needs d >= k, got d={d} k={k}")
        pi = _bounded_simplex(rng, k)
        while True:
            T = 0.5 * np.eye(k) + 0.5 * np.apply_along_axis(
                lambda c: c / c.sum(), 0, rng.uniform(0.2, 1.0, size=(k, k))
            )
            T /= T.sum(axis=0, keepdims=True)
            if abs(np.linalg.det(T)) > 1e-3:
                break
        return HmmParams(initial=pi, transition=T, emission=_dirichlet_columns(rng, d, k))
    raise InfeasibleSpec("raw_tensor instances come from gen_orthotensor")


def gen_samples(params, n: int, *, seed: int, doc_length: int = 3):
    """Draw n i.i.d. observations from the model's generative story.

    Topic/LDA yield a SparseCorpus of per-document word counts; Gaussian
    mixtures and ICA yield an n x d array; HMMs yield an n x 3 array of
    observed word ids for the first three steps of each rollout.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = rng_stream(seed, _DOM_SAMPLES)
    if isinstance(params, TopicParams):
        topics = rng.choice(params.k, size=n, p=params.w)
        counts = np.zeros((n, params.d), dtype=np.int64)
        for j in range(params.k):
            idx = np.flatnonzero(topics == j)
            if idx.size:
                counts[idx] = rng.multinomial(doc_length, params.means[:, j], size=idx.size)
        return SparseCorpus.from_dense(counts, params.d)
    if isinstance(params, LdaParams):
        h = rng.dirichlet(params.alpha, size=n)
        probs = h @ params.means.T
        counts = np.zeros((n, params.d), dtype=np.int64)
        for i in range(n):
            counts[i] = rng.multinomial(doc_length, probs[i])
        return SparseCorpus.from_dense(counts, params.d)
    if isinstance(params, GmmParams):
        labels = rng.choice(params.k, size=n, p=params.w)
        noise = rng.standard_normal((n, params.d))
        return params.means[:, labels].T + noise * np.sqrt(params.variances[labels])[:, None]
    if isinstance(params, IcaParams):
        # Laplace(0, 1/sqrt(2)) has unit variance and excess kurtosis 3.
        h = rng.laplace(0.0, 1.0 / np.sqrt(2.0), size=(n, params.k))
        x = h @ params.mixing.T
        if params.noise_sigma > 0:
            x = x + params.noise_sigma * rng.standard_normal((n, params.d))
        return x
    if isinstance(params, HmmParams):
        obs = np.zeros((n, 3), dtype=np.int64)
        states = rng.choice(params.k, size=n, p=params.initial)
        for t in range(3):
            if t > 0:
                nxt = np.empty(n, dtype=np.int64)
                for j in range(params.k):
                    idx = np.flatnonzero(states == j)
                    if idx.size:
                        nxt[idx] = rng.choice(params.k, size=idx.size, p=params.transition[:, j])
                states = nxt
            for j in range(params.k):
                idx = np.flatnonzero(states == j)
                if idx.size:
                    obs[idx, t] = rng.choice(params.d, size=idx.size, p=params.emission[:, j])
        return obs
    raise TypeError(f"unsupported params type {type(params).__name__}")


def one_hot(ids: np.ndarray, d: int) -> np.ndarray:
    """Encode integer observations as rows of standard basis vectors."""
    ids = np.asarray(ids)
    out = np.zeros(ids.shape + (d,))
    np.put_along_axis(out, ids[..., None], 1.0, axis=-1)
    return out


def gen_orthotensor(
    k: int,
    lambdas: np.ndarray,
    epsilon: float,
    *,
    seed: int,
    opnorm_restarts: int = 60,
    opnorm_iters: int = 40,
) -> tuple[SymTensor3, OrthoDecomposition, float]:
    """Orthogonally decomposable tensor plus a calibrated perturbation.

    Builds T = sum_i lambda_i v_i^(x3) over a Haar-random orthonormal
    basis, then adds a symmetrized Gaussian tensor rescaled so that its
    operator-norm estimate hits `epsilon` (the estimate is 1-homogeneous
    under scaling with a fixed seed, so calibration is a single division).
    Returns (perturbed tensor, ground truth, achieved epsilon).
    """
    lambdas = np.asarray(lambdas, dtype=np.float64)
    if lambdas.shape != (k,) or np.any(lambdas <= 0):
        raise ValueError("lambdas must be k strictly positive reals")
    if epsilon < 0:
        raise ValueError("epsilon must be >= 0")
    rng = rng_stream(seed, _DOM_TENSOR)
    if k == 1:
        V = unit_vector(rng, 1)[:, None]
    else:
        V = haar_orthogonal(k, rng)
    truth = OrthoDecomposition(
        tuple(RankOneTerm(float(lambdas[i]), V[:, i]) for i in range(k)), dim=k
    )
    T = from_rank_one_sum(truth.terms)
    if epsilon == 0.0:
        return T, truth, 0.0
    E = SymTensor3(rng.standard_normal((k, k, k)))
    est = op_norm_estimate(E, opnorm_restarts, opnorm_iters, seed=seed + 1)
    E = SymTensor3(E.entries * (epsilon / est))
    achieved = op_norm_estimate(E, opnorm_restarts, opnorm_iters, seed=seed + 1)
    return SymTensor3(T.entries + E.entries), truth, achieved
