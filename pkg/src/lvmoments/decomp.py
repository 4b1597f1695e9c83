"""Robust tensor power method with deflation, plus baselines.

`robust_decompose` extracts an approximate orthogonal decomposition of a
symmetric third-order tensor by repeated restarts of the power map

    theta <- T(I, theta, theta) / ||T(I, theta, theta)||

keeping the restart with the largest T(theta, theta, theta), polishing
it, and deflating the recovered rank-one term before the next factor.
`decompose_with_stopping` replaces the fixed restart count by a
certificate that the iterate is near an eigenvector. `simdiag_decompose`
and `simdiag_tensor` implement the classical simultaneous-diagonalization
baseline, which is exact on noiseless inputs but unstable when the
projected eigenvalues crowd together.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from math import ceil, log2

import numpy as np
import scipy.linalg

from .errors import (
    AllRestartsDegenerate,
    DimensionMismatch,
    NearDegenerateSpectrum,
    StoppingNeverSatisfied,
    ZeroContraction,
)
from .rng import rng_stream, unit_vector
from .tensor3 import (
    OrthoDecomposition,
    RankOneTerm,
    SymTensor3,
    contract_uuu,
    contract_uuu_batch,
    contract_vv,
    deflate,
    frobenius_norm,
    op_norm_estimate,
    power_map_batch,
    zero_contraction_floor,
)

# Restart trials are evaluated in fixed-size chunks so that the worker
# count never changes which floats get combined (thread-count-independent
# results); threads only decide how many chunks run concurrently.
_TRIAL_CHUNK = 64

_OPNORM_RESTARTS = 30
_OPNORM_ITERS = 30
_DOM_TRIAL = 0
_DOM_OPNORM = 2
_DOM_SIMDIAG = 3


def default_restarts(k: int) -> int:
    """Restart budget that grows linearly with the target rank."""
    return 100 + 10 * k


def default_iters(k: int) -> int:
    """Iteration cap per restart; quadratic convergence makes this ample."""
    return 30 + ceil(log2(k + 1))


@dataclass(frozen=True)
class PowerConfig:
    """Knobs for the restarted power method.

    restarts:        number of random starts per factor (L).
    iters:           power-iteration cap per start (N).
    convergence_tol: early-exit threshold on ||theta_t - theta_{t-1}||.
    seed:            base seed; every trial derives its own substream.
    max_factors:     optional cap used by callers that infer k.
    threads:         worker threads for the restart chunks (>=1).
    """

    restarts: int
    iters: int
    convergence_tol: float = 1e-13
    seed: int = 0
    max_factors: int | None = None
    threads: int = 1

    def __post_init__(self):
        if self.restarts < 1 or self.iters < 1:
            raise ValueError("restarts and iters must be >= 1")
        if self.convergence_tol <= 0:
            raise ValueError("convergence_tol must be > 0")
        if self.threads < 1:
            raise ValueError("threads must be >= 1")

    @classmethod
    def for_rank(cls, k: int, *, seed: int, threads: int = 1) -> "PowerConfig":
        return cls(restarts=default_restarts(k), iters=default_iters(k), seed=seed, threads=threads)


@dataclass(frozen=True)
class FactorDiagnostics:
    trials_used: int
    final_power_value: float
    sign_flipped: bool = False


@dataclass(frozen=True)
class DecompositionReport:
    """Everything a caller needs to judge a decomposition run."""

    decomposition: OrthoDecomposition
    residual: SymTensor3
    per_factor: tuple
    residual_frobenius: float
    residual_opnorm_estimate: float
    config: PowerConfig = field(default=None)

    def __post_init__(self):
        if len(self.per_factor) != len(self.decomposition.terms):
            raise ValueError("one diagnostics record per recovered factor required")
        if self.residual_frobenius < 0:
            raise ValueError("residual_frobenius must be >= 0")


def power_step(T: SymTensor3, theta: np.ndarray) -> np.ndarray:
    """One step of the power map: normalized T(I, theta, theta).

    Raises ZeroContraction when the contraction norm is below the
    machine-scale floor; that signals a degenerate start and callers are
    expected to re-draw.
    """
    out = contract_vv(T, theta)
    n = np.linalg.norm(out)
    if n <= zero_contraction_floor(T):
        raise ZeroContraction(f"||T(I,theta,theta)|| = {n:.3e} below floor")
    return out / n


def power_converge(
    T: SymTensor3, theta0: np.ndarray, iters: int, tol: float
) -> tuple[np.ndarray, int]:
    """Apply power_step up to `iters` times with early exit.

    Stops as soon as ||theta_t - theta_{t-1}|| <= tol and returns the
    final iterate together with the number of steps taken.
    """
    if iters < 1:
        raise ValueError("iters must be >= 1")
    theta = np.asarray(theta0, dtype=np.float64)
    for t in range(1, iters + 1):
        nxt = power_step(T, theta)
        done = np.linalg.norm(nxt - theta) <= tol
        theta = nxt
        if done:
            return theta, t
    return theta, iters


def _trial_starts(dim: int, cfg: PowerConfig, factor_index: int, lo: int, hi: int) -> np.ndarray:
    cols = [
        unit_vector(rng_stream(cfg.seed, _DOM_TRIAL, factor_index, t), dim)
        for t in range(lo, hi)
    ]
    return np.stack(cols, axis=1)


def _run_trial_chunk(T, cfg, factor_index, lo, hi):
    starts = _trial_starts(T.dim, cfg, factor_index, lo, hi)
    finals, degenerate = power_map_batch(T, starts, cfg.iters, tol=cfg.convergence_tol)
    vals = contract_uuu_batch(T, finals)
    return finals, vals, degenerate


def extract_one(
    T: SymTensor3, cfg: PowerConfig, *, factor_index: int = 0
) -> tuple[RankOneTerm, SymTensor3]:
    """One round of the restarted power method (single factor).

    Runs `cfg.restarts` seeded trials of up to `cfg.iters` power steps,
    keeps the trial maximizing T(theta, theta, theta) (smallest trial
    index on ties), polishes it with up to `cfg.iters` further steps, and
    returns the recovered pair together with the deflated tensor. The
    weight keeps the sign of T(theta,theta,theta) as computed; under
    heavy perturbation it can come out negative and the caller decides
    how to canonicalize.
    """
    chunks = [
        (lo, min(lo + _TRIAL_CHUNK, cfg.restarts))
        for lo in range(0, cfg.restarts, _TRIAL_CHUNK)
    ]
    if cfg.threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            results = list(
                pool.map(lambda c: _run_trial_chunk(T, cfg, factor_index, *c), chunks)
            )
    else:
        results = [_run_trial_chunk(T, cfg, factor_index, *c) for c in chunks]

    finals = np.concatenate([r[0] for r in results], axis=1)
    vals = np.concatenate([r[1] for r in results])
    degenerate = np.concatenate([r[2] for r in results])
    if degenerate.all():
        raise AllRestartsDegenerate(factor_index)
    vals = np.where(degenerate, -np.inf, vals)
    best = int(np.argmax(vals))  # first maximizer -> smallest trial index

    theta_hat, _ = power_converge(T, finals[:, best], cfg.iters, cfg.convergence_tol)
    lam_hat = contract_uuu(T, theta_hat)
    term = RankOneTerm(lam_hat if lam_hat != 0.0 else 0.0, theta_hat)
    return term, deflate(T, term)


def _canonical_term(raw: RankOneTerm) -> tuple[RankOneTerm, bool]:
    """Flip (lam, v) -> (|lam|, -v) when lam < 0 (valid for odd order)."""
    if raw.weight < 0:
        return RankOneTerm(-raw.weight, -raw.vector), True
    return raw, False


def _finalize_report(T, terms, diags, cfg) -> DecompositionReport:
    residual = T
    for raw in terms:
        residual = deflate(residual, raw)
    canon = []
    out_diags = []
    for raw, diag in zip(terms, diags):
        term, flipped = _canonical_term(raw)
        canon.append(term)
        out_diags.append(
            FactorDiagnostics(diag.trials_used, diag.final_power_value, flipped)
        )
    decomposition = OrthoDecomposition(tuple(canon), dim=T.dim)
    return DecompositionReport(
        decomposition=decomposition,
        residual=residual,
        per_factor=tuple(out_diags),
        residual_frobenius=frobenius_norm(residual),
        residual_opnorm_estimate=op_norm_estimate(
            residual, _OPNORM_RESTARTS, _OPNORM_ITERS, seed=rng_seed_for_opnorm(cfg.seed)
        ),
        config=cfg,
    )


def rng_seed_for_opnorm(seed: int) -> int:
    """Substream seed for residual operator-norm estimates."""
    return int(rng_stream(seed, _DOM_OPNORM).integers(0, 2**63 - 1))


def robust_decompose(T: SymTensor3, k: int, cfg: PowerConfig) -> DecompositionReport:
    """Extract k factors by restarted power iterations with deflation.

    Negative recovered weights are canonicalized to (|lam|, -v) and
    flagged in the per-factor diagnostics. The input tensor is never
    mutated; deflation happens on working copies.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if k > T.dim:
        raise DimensionMismatch(f"k={k} exceeds tensor dimension {T.dim}")
    work = T
    raw_terms: list[RankOneTerm] = []
    diags: list[FactorDiagnostics] = []
    for j in range(k):
        raw, work = extract_one(work, cfg, factor_index=j)
        raw_terms.append(raw)
        diags.append(FactorDiagnostics(cfg.restarts, raw.weight))
    return _finalize_report(T, raw_terms, diags, cfg)


def stopping_condition_holds(T: SymTensor3, theta: np.ndarray, r: int) -> bool:
    """Certificate that theta is near an eigenvector of T.

    Requires |T(theta,theta,theta)| >= max( ||T||_F / (2 sqrt(r)),
    ||T(I,I,theta)||_F / 1.05 ), where r is the expected remaining rank
    of the unperturbed tensor.
    """
    val = abs(contract_uuu(T, theta))
    fro = frobenius_norm(T)
    mat = np.tensordot(T.entries, theta, axes=([2], [0]))
    return val >= max(fro / (2.0 * np.sqrt(r)), np.linalg.norm(mat) / 1.05)


def decompose_with_stopping(T: SymTensor3, k: int, cfg: PowerConfig) -> DecompositionReport:
    """Stopping-condition variant: restart until the iterate certifies.

    Each factor repeats draw-and-iterate until `stopping_condition_holds`
    with expected rank r = k - (#factors already deflated), then finishes
    like the fixed-restart method. A hard cap of cfg.restarts * 32
    attempts guards against non-termination (perturbation too large, or
    the declared k is wrong).
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if k > T.dim:
        raise DimensionMismatch(f"k={k} exceeds tensor dimension {T.dim}")
    cap = cfg.restarts * 32
    work = T
    raw_terms: list[RankOneTerm] = []
    diags: list[FactorDiagnostics] = []
    for j in range(k):
        r = k - j
        attempts = 0
        all_degenerate = True
        theta_n = None
        while attempts < cap:
            start = unit_vector(rng_stream(cfg.seed, _DOM_TRIAL, j, attempts), work.dim)
            attempts += 1
            try:
                cand, _ = power_converge(work, start, cfg.iters, cfg.convergence_tol)
            except ZeroContraction:
                continue
            all_degenerate = False
            if stopping_condition_holds(work, cand, r):
                theta_n = cand
                break
        if theta_n is None:
            if all_degenerate and attempts >= cap:
                raise AllRestartsDegenerate(j)
            raise StoppingNeverSatisfied(j, attempts)
        theta_hat, _ = power_converge(work, theta_n, cfg.iters, cfg.convergence_tol)
        lam_hat = contract_uuu(work, theta_hat)
        raw = RankOneTerm(lam_hat, theta_hat)
        work = deflate(work, raw)
        raw_terms.append(raw)
        diags.append(FactorDiagnostics(attempts, lam_hat))
    return _finalize_report(T, raw_terms, diags, cfg)


def check_local_max(T: SymTensor3, u: np.ndarray, tol: float = 1e-8) -> bool:
    """Second-derivative test for isolated local maximizers.

    Forms H = 6 T(I,I,u) - 3 lam I with lam = T(u,u,u) and checks that H
    restricted to the tangent space {w : w.u = 0} is negative definite
    (all eigenvalues <= -tol). True exactly at the decomposition vectors;
    spurious power-map fixed points fail the test.
    """
    u = np.asarray(u, dtype=np.float64)
    if u.shape != (T.dim,):
        raise DimensionMismatch("u must match tensor dimension")
    if T.dim == 1:
        return contract_uuu(T, u) > 0
    lam = contract_uuu(T, u)
    H = 6.0 * np.tensordot(T.entries, u, axes=([2], [0])) - 3.0 * lam * np.eye(T.dim)
    Q = scipy.linalg.null_space(u[None, :])
    eigs = np.linalg.eigvalsh(Q.T @ H @ Q)
    return bool(np.all(eigs <= -tol))


def _simdiag_eig(M: np.ndarray, k: int, tol: float):
    """Real eigenpairs of the (nonsymmetric) pencil matrix, k largest by |value|."""
    evals, evecs = np.linalg.eig(M)
    order = np.argsort(-np.abs(evals), kind="stable")[:k]
    lam = evals[order]
    V = evecs[:, order]
    if np.max(np.abs(lam.imag)) > tol * max(1.0, np.max(np.abs(lam))):
        raise NearDegenerateSpectrum("complex eigenvalues: projected spectrum too close")
    return lam.real, V.real


def simdiag_decompose(
    M2: np.ndarray,
    M3: SymTensor3,
    eta: np.ndarray | None = None,
    *,
    seed: int = 0,
    gap_tol: float = 1e-8,
) -> list[tuple[float, np.ndarray]]:
    """Simultaneous-diagonalization baseline for exact moment pairs.

    Eigendecomposes M(eta) = M3(I,I,eta) pinv(M2), whose eigenvectors are
    the component means up to scale when the projections mu_i . eta are
    distinct, then rescales using M2 to recover (w_i, mu_i). Raises
    NearDegenerateSpectrum when the projected values crowd together;
    their separation is only ~1/k^2.5 for a random eta, which is why this
    serves as a baseline rather than the primary route.
    """
    M2 = np.asarray(M2, dtype=np.float64)
    d = M2.shape[0]
    if M2.shape != (d, d) or M3.dim != d:
        raise DimensionMismatch("M2 and M3 must share one dimension")
    if eta is None:
        eta = unit_vector(rng_stream(seed, _DOM_SIMDIAG), d)
    eta = np.asarray(eta, dtype=np.float64)
    # Rank of the pair: positive eigenvalues of M2 well above noise.
    evals2 = np.linalg.eigvalsh(M2)
    k = int(np.sum(evals2 > 1e-10 * max(evals2.max(), 1.0)))
    if k < 1:
        raise NearDegenerateSpectrum("M2 has no significant spectrum")

    H = np.tensordot(M3.entries, eta, axes=([2], [0]))
    M = H @ np.linalg.pinv(M2, rcond=1e-12)
    lam, V = _simdiag_eig(M, k, gap_tol)

    scale = max(np.max(np.abs(lam)), 1.0)
    gaps = np.abs(np.subtract.outer(lam, lam))[np.triu_indices(k, 1)]
    if d > k:
        gaps = np.append(gaps, np.abs(lam))  # separation from the null spectrum
    if gaps.size and gaps.min() <= gap_tol * scale:
        raise NearDegenerateSpectrum(
            f"projected eigenvalue gap {gaps.min():.3e} below tolerance"
        )

    # Columns of V are mu_i / ||mu_i||; recover scales from the eigenvalues
    # (mu_i . eta) and weights from the diagonalization of M2.
    V = V / np.linalg.norm(V, axis=0)
    proj = V.T @ eta
    if np.min(np.abs(proj)) <= gap_tol:
        raise NearDegenerateSpectrum("eta nearly orthogonal to a component mean")
    scales = lam / proj
    coeffs = np.linalg.lstsq(
        np.einsum("ai,bi->abi", V, V).reshape(d * d, k), M2.ravel(), rcond=None
    )[0]
    out = []
    for i in range(k):
        mu = scales[i] * V[:, i]
        w = coeffs[i] / scales[i] ** 2
        out.append((float(w), mu))
    return out


def simdiag_tensor(
    T: SymTensor3, eta: np.ndarray | None = None, *, seed: int = 0, gap_tol: float = 1e-8
) -> OrthoDecomposition:
    """Simultaneous-diagonalization baseline for an orthogonal tensor.

    For T = sum_i lam_i v_i^(x3) the slice T(I,I,eta) is symmetric with
    eigenvectors v_i, so a single symmetric eigendecomposition recovers
    the factors when the projected values lam_i (v_i . eta) are separated
    and nonzero. Signs are fixed so the recovered weights are positive.
    """
    if eta is None:
        eta = unit_vector(rng_stream(seed, _DOM_SIMDIAG), T.dim)
    eta = np.asarray(eta, dtype=np.float64)
    H = np.tensordot(T.entries, eta, axes=([2], [0]))
    evals, evecs = np.linalg.eigh(H)
    scale = max(np.max(np.abs(evals)), np.finfo(float).tiny)
    significant = np.abs(evals) > gap_tol * scale
    idx = np.flatnonzero(significant)
    lam_proj = evals[idx]
    gaps = np.abs(np.subtract.outer(lam_proj, lam_proj))[
        np.triu_indices(lam_proj.size, 1)
    ]
    if gaps.size and gaps.min() <= gap_tol * scale:
        raise NearDegenerateSpectrum(
            f"slice eigenvalue gap {gaps.min():.3e} below tolerance"
        )
    terms = []
    for i in idx:
        v = evecs[:, i]
        lam = contract_uuu(T, v)
        if lam < 0:
            v, lam = -v, -lam
        if lam <= 0:
            raise NearDegenerateSpectrum("recovered weight vanished")
        terms.append(RankOneTerm(lam, v))
    terms.sort(key=lambda t: -t.weight)
    return OrthoDecomposition(tuple(terms), dim=T.dim)
