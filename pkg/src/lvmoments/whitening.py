"""Whitening reduction between observed moments and orthogonal tensors.

Given a pair (M2, M3) with the shared structure

    M2 = sum_i w_i mu_i mu_i^T,    M3 = sum_i w_i mu_i^(x3),

a whitener W with W^T M2 W = I maps M3 to the k x k x k tensor
M3(W, W, W) = sum_i (1/sqrt(w_i)) mu~_i^(x3) whose factors mu~_i are
orthonormal. Decomposing that tensor and mapping eigenpairs back through
the pseudoinverse of W^T recovers the original (w_i, mu_i).
"""

from dataclasses import dataclass

import numpy as np

from .errors import (
    DegenerateDirection,
    DimensionMismatch,
    NonpositiveEigenvalue,
    RankDeficient,
)
from .tensor3 import OrthoDecomposition, SymTensor3, contract_matrix, contract_uuu

DEFAULT_EIG_FLOOR_REL = 1e-9


@dataclass(frozen=True)
class WhiteningMap:
    """Whitener W (d x k) and un-whitener B = pinv(W^T) (d x k)."""

    W: np.ndarray
    B: np.ndarray
    eigvals_used: np.ndarray
    rank_k: int

    def __post_init__(self):
        for name in ("W", "B", "eigvals_used"):
            a = np.ascontiguousarray(np.asarray(getattr(self, name), dtype=np.float64))
            a.flags.writeable = False
            object.__setattr__(self, name, a)
        if self.W.shape != self.B.shape or self.W.shape[1] != self.rank_k:
            raise DimensionMismatch("W and B must both be d x rank_k")
        if np.any(self.eigvals_used <= 0):
            raise NonpositiveEigenvalue("whitening eigenvalues must be positive")
        gram = self.W.T @ self.B
        if np.max(np.abs(gram - np.eye(self.rank_k))) > 1e-10:
            raise ValueError("B is not the pseudoinverse of W^T (W^T B != I)")

    @property
    def dim_observed(self) -> int:
        return self.W.shape[0]


@dataclass(frozen=True)
class ModelEstimate:
    """Recovered weights and component means (columns of `means`)."""

    weights: np.ndarray
    means: np.ndarray

    def __post_init__(self):
        w = np.ascontiguousarray(np.asarray(self.weights, dtype=np.float64))
        m = np.ascontiguousarray(np.asarray(self.means, dtype=np.float64))
        w.flags.writeable = False
        m.flags.writeable = False
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", m)
        if m.ndim != 2 or m.shape[1] != w.shape[0]:
            raise DimensionMismatch("means must have one column per weight")
        if np.any(w <= 0):
            raise NonpositiveEigenvalue("estimated weights must be positive")
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(m))):
            raise ValueError("estimates must be finite")

    @property
    def k(self) -> int:
        return self.weights.shape[0]


def _fix_eigvec_signs(U: np.ndarray) -> np.ndarray:
    """Make the largest-magnitude component of each column positive."""
    idx = np.argmax(np.abs(U), axis=0)
    signs = np.sign(U[idx, np.arange(U.shape[1])])
    signs[signs == 0] = 1.0
    return U * signs


def build_whitener(M2: np.ndarray, k: int, eig_floor: float | None = None) -> WhiteningMap:
    """Whitener from the top-k eigendecomposition of M2: W = U D^(-1/2).

    `eig_floor` defaults to 1e-9 times the largest eigenvalue. Eigenvalues
    at or below the floor (including negative ones from sampling noise)
    are rejected with RankDeficient rather than clamped; clamping would
    silently distort the recovered weights.
    """
    M2 = np.asarray(M2, dtype=np.float64)
    d = M2.shape[0]
    if M2.shape != (d, d):
        raise DimensionMismatch("M2 must be square")
    if np.max(np.abs(M2 - M2.T)) > 1e-10 * max(1.0, np.max(np.abs(M2))):
        raise ValueError("M2 must be symmetric")
    if not 1 <= k <= d:
        raise DimensionMismatch(f"k={k} out of range for d={d}")
    evals, evecs = np.linalg.eigh((M2 + M2.T) / 2.0)
    order = np.argsort(evals)[::-1]
    evals, evecs = evals[order], evecs[:, order]
    if eig_floor is None:
        eig_floor = DEFAULT_EIG_FLOOR_REL * max(evals[0], 0.0)
    usable = int(np.sum(evals > eig_floor))
    if usable < k:
        raise RankDeficient(usable, k)
    top = evals[:k]
    U = _fix_eigvec_signs(evecs[:, :k])
    W = U / np.sqrt(top)
    B = U * np.sqrt(top)
    return WhiteningMap(W=W, B=B, eigvals_used=top, rank_k=k)


def whiten_tensor(M3: SymTensor3, wmap: WhiteningMap) -> SymTensor3:
    """M3(W, W, W): the k x k x k tensor the power method operates on."""
    if M3.dim != wmap.dim_observed:
        raise DimensionMismatch(
            f"tensor dim {M3.dim} does not match whitener rows {wmap.dim_observed}"
        )
    return contract_matrix(M3, wmap.W)


def unwhiten(decomp: OrthoDecomposition, wmap: WhiteningMap) -> ModelEstimate:
    """Map whitened eigenpairs back to model parameters.

    Each recovered pair (lam, v) yields mu = lam * B v and w = 1 / lam^2;
    the order of the decomposition is preserved.
    """
    if decomp.dim != wmap.rank_k:
        raise DimensionMismatch("decomposition lives in the whitened space of the map")
    lams = decomp.weights
    if np.any(lams <= 0):
        raise NonpositiveEigenvalue("whitened eigenvalues must be positive to invert")
    means = wmap.B @ (decomp.vectors * lams)
    weights = 1.0 / lams**2
    return ModelEstimate(weights=weights, means=means)


def skewness_objective(M2: np.ndarray, M3: SymTensor3, u: np.ndarray) -> float:
    """Cross-moment skewness M3(u,u,u) / M2(u,u)^(3/2).

    Scale-invariant in u; its local maximizers sit at the component
    directions. Diagnostic use only.
    """
    M2 = np.asarray(M2, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    if M3.dim != u.shape[0] or M2.shape != (u.shape[0], u.shape[0]):
        raise DimensionMismatch("u, M2, M3 must share one dimension")
    quad = float(u @ M2 @ u)
    if quad <= 0:
        raise DegenerateDirection(f"M2(u,u) = {quad:.3e} is not positive")
    return contract_uuu(M3, u) / quad**1.5
