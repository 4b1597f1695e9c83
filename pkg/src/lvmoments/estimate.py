"""End-to-end estimation pipelines and recovery scoring.

Every pipeline is the same three moves: build model moments, whiten M3
into a k x k x k orthogonally decomposable tensor, decompose it and map
the eigenpairs back. Model-specific pre/post-processing (the LDA weight
rescaling, simplex renormalization for topic models, the HMM parameter
back-out) lives here so the moment builders stay faithful to their
defining identities.
"""

from dataclasses import dataclass, field

import numpy as np

from .corpus import SparseCorpus, randomized_whitener, whitened_m3
from .decomp import (
    DecompositionReport,
    FactorDiagnostics,
    PowerConfig,
    decompose_with_stopping,
    robust_decompose,
    rng_seed_for_opnorm,
    simdiag_tensor,
)
from .errors import DimensionMismatch
from .moments import (
    GmmParams,
    HmmParams,
    IcaParams,
    LdaParams,
    MomentSet,
    SymTensor4,
    TopicParams,
    gmm_common_moments,
    gmm_varying_moments,
    hmm_recover,
    hmm_views,
    ica_moments,
    ica_reduce,
    lda_moments,
    multiview_empirical,
    multiview_population,
    multiview_symmetrize,
    topic_empirical_moments,
    topic_population_moments,
)
from .rng import rng_stream, unit_vector
from .synth import one_hot
from .tensor3 import SymTensor3, deflate, frobenius_norm, op_norm_estimate
from .whitening import ModelEstimate, WhiteningMap, build_whitener, unwhiten, whiten_tensor

_DOM_ICA_DIRECTION = 9

ALGORITHMS = ("fixed", "stopping", "simdiag")


@dataclass
class PipelineResult:
    """Model estimate plus everything needed to audit how it was produced."""

    estimate: ModelEstimate
    report: DecompositionReport
    whitening: WhiteningMap | None = None
    extras: dict = field(default_factory=dict)


def decompose_tensor(
    T: SymTensor3, k: int, cfg: PowerConfig, algorithm: str = "fixed"
) -> DecompositionReport:
    """Dispatch between the power-method variants and the baseline."""
    if algorithm == "fixed":
        return robust_decompose(T, k, cfg)
    if algorithm == "stopping":
        return decompose_with_stopping(T, k, cfg)
    if algorithm == "simdiag":
        decomp = simdiag_tensor(T, seed=cfg.seed)
        residual = T
        for term in decomp.terms:
            residual = deflate(residual, term)
        diags = tuple(FactorDiagnostics(1, t.weight) for t in decomp.terms)
        return DecompositionReport(
            decomposition=decomp,
            residual=residual,
            per_factor=diags,
            residual_frobenius=frobenius_norm(residual),
            residual_opnorm_estimate=op_norm_estimate(
                residual, 30, 30, seed=rng_seed_for_opnorm(cfg.seed)
            ),
            config=cfg,
        )
    raise ValueError(f"unknown algorithm {algorithm!r}; choose from {ALGORITHMS}")


def estimate_from_moments(
    ms: MomentSet,
    k: int,
    cfg: PowerConfig,
    *,
    algorithm: str = "fixed",
    eig_floor: float | None = None,
) -> PipelineResult:
    """Whiten, decompose, un-whiten: the generic moment pipeline."""
    wmap = build_whitener(ms.m2, k, eig_floor)
    white = whiten_tensor(ms.m3, wmap)
    report = decompose_tensor(white, k, cfg, algorithm)
    est = unwhiten(report.decomposition, wmap)
    return PipelineResult(estimate=est, report=report, whitening=wmap)


def _simplex_normalized(est: ModelEstimate) -> tuple[ModelEstimate, dict]:
    """Scale weights (and mean columns) onto the simplex, recording factors."""
    wsum = float(est.weights.sum())
    col_sums = est.means.sum(axis=0)
    means = est.means / col_sums
    normalized = ModelEstimate(weights=est.weights / wsum, means=means)
    return normalized, {
        "weight_renormalization": wsum,
        "mean_column_sums": col_sums.tolist(),
    }


def estimate_topic(
    source, k: int, cfg: PowerConfig, *,
    algorithm: str = "fixed",
    implicit: bool = False,
    oversample: int = 10,
) -> PipelineResult:
    """Single topic model pipeline.

    `source` is TopicParams (population), a MomentSet, or a SparseCorpus.
    With implicit=True the corpus path uses the randomized whitener and
    the one-pass whitened tensor and never assembles d x d (x d) moments.
    Recovered weights and topic columns are renormalized to the simplex.
    """
    wmap = None
    if isinstance(source, TopicParams):
        ms = topic_population_moments(source)
    elif isinstance(source, MomentSet):
        ms = source
    elif isinstance(source, SparseCorpus):
        if implicit:
            wmap = randomized_whitener(source, k, oversample, seed=cfg.seed)
            white = whitened_m3(source, wmap)
            report = decompose_tensor(white, k, cfg, algorithm)
            est = unwhiten(report.decomposition, wmap)
            normalized, extras = _simplex_normalized(est)
            return PipelineResult(normalized, report, wmap, extras)
        ms = topic_empirical_moments(source)
    else:
        raise TypeError("source must be TopicParams, MomentSet, or SparseCorpus")
    result = estimate_from_moments(ms, k, cfg, algorithm=algorithm)
    normalized, extras = _simplex_normalized(result.estimate)
    return PipelineResult(normalized, result.report, result.whitening, extras)


def estimate_lda(source, k: int, alpha0: float, cfg: PowerConfig,
                 *, algorithm: str = "fixed") -> PipelineResult:
    """LDA pipeline with known concentration alpha0.

    The structured M3 carries weights 2 alpha_i / ((alpha0+2)(alpha0+1)
    alpha0) while M2 carries alpha_i / ((alpha0+1) alpha0); the ratio is
    the uniform factor 2/(alpha0+2), so scaling M3 by (alpha0+2)/2
    restores the equal-weight form the whitening reduction assumes.
    Recovered weights are renormalized to topic proportions alpha_i /
    alpha0 and the alpha estimate is reported in extras.
    """
    ms = lda_moments(source, alpha0) if not isinstance(source, MomentSet) else source
    scaled = MomentSet(
        m2=ms.m2,
        m3=SymTensor3(ms.m3.entries * ((alpha0 + 2.0) / 2.0)),
        m1=ms.m1,
        provenance=ms.provenance,
    )
    result = estimate_from_moments(scaled, k, cfg, algorithm=algorithm)
    normalized, extras = _simplex_normalized(result.estimate)
    # weights before renormalization estimate alpha_i / ((alpha0+1) alpha0)
    extras["alpha_estimate"] = (
        result.estimate.weights * (alpha0 + 1.0) * alpha0
    ).tolist()
    return PipelineResult(normalized, result.report, result.whitening, extras)


def estimate_gmm(source, k: int, cfg: PowerConfig, *,
                 varying: bool = False, algorithm: str = "fixed") -> PipelineResult:
    """Spherical Gaussian mixture pipeline (common or differing variances)."""
    ms = (gmm_varying_moments(source) if varying else gmm_common_moments(source))
    result = estimate_from_moments(ms, k, cfg, algorithm=algorithm)
    result.extras.update(ms.provenance.notes)
    return result


def estimate_ica(source, k: int, cfg: PowerConfig, *,
                 algorithm: str = "fixed") -> PipelineResult:
    """ICA pipeline: reduce the fourth cumulant to a pair and decompose.

    Mixing columns are identifiable only up to scale, so the estimate
    reports unit-norm columns; per-source excess kurtoses are recovered
    by least squares of the cumulant tensor on the rank-one system and
    placed in extras. Requires positive excess kurtosis (the reduced
    pair matrix must be positive semidefinite to whiten).
    """
    M4 = source if isinstance(source, SymTensor4) else ica_moments(source)
    v = unit_vector(rng_stream(cfg.seed, _DOM_ICA_DIRECTION), M4.dim)
    pair, tri = ica_reduce(M4, v, v)
    ms = MomentSet(m2=pair, m3=tri)
    result = estimate_from_moments(ms, k, cfg, algorithm=algorithm)
    cols = result.estimate.means
    norms = np.linalg.norm(cols, axis=0)
    unit_cols = cols / norms
    system = np.stack(
        [np.einsum("a,b,c,d->abcd", c, c, c, c).ravel() for c in unit_cols.T], axis=1
    )
    kappas, *_ = np.linalg.lstsq(system, M4.entries.ravel(), rcond=None)
    est = ModelEstimate(weights=result.estimate.weights, means=unit_cols)
    extras = {"kappa_estimate": kappas.tolist(), "reduction_direction": v.tolist()}
    return PipelineResult(est, result.report, result.whitening, extras)


def estimate_multiview(p12, p13, p23, triple, k: int, cfg: PowerConfig, *,
                       algorithm: str = "fixed", reg: float | None = None) -> PipelineResult:
    """Recover view-3 conditional means and weights from cross moments."""
    ms = multiview_symmetrize(p12, p13, p23, triple, reg)
    return estimate_from_moments(ms, k, cfg, algorithm=algorithm)


def estimate_hmm(source, k: int, cfg: PowerConfig, *,
                 vocab_size: int | None = None,
                 algorithm: str = "fixed") -> PipelineResult:
    """Full HMM recovery through the multi-view reduction.

    `source` is HmmParams (population moments) or an n x 3 integer array
    of observed symbols from length-3 rollouts. The pipeline keys on the
    second hidden state: decomposing the symmetrized moments yields the
    view-3 means O T e_j with weights w = T pi; the emission matrix is
    re-aligned through E[x2 (x) x3] and (pi, T) are backed out and
    projected to their stochastic constraint sets. State labels are
    recovered up to one global permutation.
    """
    if isinstance(source, HmmParams):
        v1, v2, v3, w = hmm_views(source)
        p12, p13, p23, triple = multiview_population(w, v1, v2, v3)
    else:
        obs = np.asarray(source)
        if obs.ndim != 2 or obs.shape[1] != 3:
            raise DimensionMismatch("observations must be an n x 3 id array")
        d = vocab_size if vocab_size is not None else int(obs.max()) + 1
        X = one_hot(obs, d)
        p12, p13, p23, triple = multiview_empirical(X[:, 0], X[:, 1], X[:, 2])
    result = estimate_multiview(p12, p13, p23, triple, k, cfg, algorithm=algorithm)
    est = result.estimate
    # Re-align the emission matrix to the recovered label order through
    # E[x2 (x) x3] = O diag(w) (O T)^T, then back out (pi, T).
    X = est.weights[:, None] * est.means.T           # diag(w_hat) M3hat^T
    O_hat = np.asarray(p23, dtype=np.float64) @ np.linalg.pinv(X)
    params, proj_info = hmm_recover(est, O_hat, est.weights)
    extras = dict(result.extras)
    extras.update(proj_info)
    extras["hmm_params"] = params
    return PipelineResult(est, result.report, result.whitening, extras)


# ---------------------------------------------------------------------------
# Matching and scoring
# ---------------------------------------------------------------------------

def greedy_match(est_vectors: np.ndarray, true_vectors: np.ndarray) -> np.ndarray:
    """Assign estimated columns to truth columns by descending |dot|.

    Returns perm with perm[j] = truth index for estimate column j. The
    perturbation guarantees promise a genuine permutation, so greedy
    assignment suffices at test scales.
    """
    est = np.asarray(est_vectors, dtype=np.float64)
    true = np.asarray(true_vectors, dtype=np.float64)
    if est.shape != true.shape:
        raise DimensionMismatch("estimate and truth must have matching shapes")
    k = est.shape[1]
    gram = np.abs(est.T @ true)
    perm = np.full(k, -1)
    used_rows = np.zeros(k, dtype=bool)
    used_cols = np.zeros(k, dtype=bool)
    flat = np.argsort(-gram, axis=None, kind="stable")
    for f in flat:
        r, c = divmod(int(f), k)
        if not used_rows[r] and not used_cols[c]:
            perm[r] = c
            used_rows[r] = True
            used_cols[c] = True
    return perm


def recovery_errors(est: ModelEstimate, true_weights, true_means) -> dict:
    """Greedy-matched per-factor errors between estimate and truth."""
    true_w = np.asarray(true_weights, dtype=np.float64)
    true_m = np.asarray(true_means, dtype=np.float64)
    perm = greedy_match(est.means, true_m)
    mean_l2 = [float(np.linalg.norm(est.means[:, j] - true_m[:, perm[j]]))
               for j in range(len(perm))]
    mean_linf = [float(np.max(np.abs(est.means[:, j] - true_m[:, perm[j]])))
                 for j in range(len(perm))]
    weight_err = [float(abs(est.weights[j] - true_w[perm[j]])) for j in range(len(perm))]
    return {
        "permutation": perm.tolist(),
        "mean_l2": mean_l2,
        "mean_linf": mean_linf,
        "weight_abs": weight_err,
        "max_mean_l2": max(mean_l2),
        "max_mean_linf": max(mean_linf),
        "max_weight_abs": max(weight_err),
    }


def decomposition_errors(decomp, true_weights, true_vectors) -> dict:
    """Matched eigenpair errors for raw tensor decompositions."""
    est = ModelEstimate(weights=decomp.weights, means=decomp.vectors)
    return recovery_errors(est, true_weights, true_vectors)
