"""Dense symmetric third-order tensors and their multilinear contractions.

A `SymTensor3` stores the full k*k*k array and guarantees exact index
symmetry: entries[i, j, l] == entries[sigma(i, j, l)] for every
permutation sigma, as float-for-float equality, not just to tolerance.
Floating multiplication is commutative but not associative, so sums of
outer products (and empirical moment accumulations) are generally *not*
bit-symmetric; construction therefore gathers every entry from its
index-sorted orbit representative, which restores exact symmetry and is
bitwise idempotent.

Tensors are immutable after construction and safe for shared reads.
"""

from dataclasses import dataclass, field
from itertools import permutations

import numpy as np

from .errors import DimensionMismatch
from .rng import rng_stream, unit_vector

_PERMS3 = tuple(permutations(range(3)))

# Relative floor below which T(I,theta,theta) counts as vanished.
_ZERO_CONTRACTION_RTOL = 100 * np.finfo(float).eps


def _canonical_symmetrize(cube: np.ndarray) -> np.ndarray:
    """Average over the 6 index permutations, then make symmetry exact.

    Every entry is re-read from its orbit representative (indices sorted
    ascending), so permuted positions hold the identical double.
    """
    k = cube.shape[0]
    acc = cube.copy()
    for p in _PERMS3[1:]:
        acc += cube.transpose(p)
    acc /= 6.0
    out = np.empty_like(acc)
    jj, ll = np.meshgrid(np.arange(k), np.arange(k), indexing="ij")
    lo_jl = np.minimum(jj, ll)
    hi_jl = np.maximum(jj, ll)
    for i in range(k):
        a = np.minimum(i, lo_jl)
        c = np.maximum(i, hi_jl)
        b = i + jj + ll - a - c
        out[i] = acc[a, b, c]
    return out


def _is_exactly_symmetric(cube: np.ndarray) -> bool:
    return all(np.array_equal(cube, cube.transpose(p)) for p in _PERMS3[1:])


class SymTensor3:
    """Symmetric tensor in (R^dim)^(x3), dense row-major storage."""

    __slots__ = ("dim", "entries", "_mat")

    def __init__(self, cube: np.ndarray):
        cube = np.ascontiguousarray(np.asarray(cube, dtype=np.float64))
        if cube.ndim != 3 or len(set(cube.shape)) != 1:
            raise DimensionMismatch(f"expected a cubic 3-way array, got shape {cube.shape}")
        if cube.shape[0] < 1:
            raise DimensionMismatch("dim must be >= 1")
        if not np.all(np.isfinite(cube)):
            raise ValueError("tensor entries must be finite")
        if not _is_exactly_symmetric(cube):
            cube = _canonical_symmetrize(cube)
        cube.flags.writeable = False
        self.dim = cube.shape[0]
        self.entries = cube
        # Mode-1 flattening (i, j*dim+l); a view, reused by all contractions.
        self._mat = cube.reshape(self.dim, self.dim * self.dim)

    @classmethod
    def zeros(cls, dim: int) -> "SymTensor3":
        return cls(np.zeros((dim, dim, dim)))

    def __repr__(self) -> str:
        return f"SymTensor3(dim={self.dim})"

    def __eq__(self, other) -> bool:
        return isinstance(other, SymTensor3) and np.array_equal(self.entries, other.entries)

    def __hash__(self):
        return hash((self.dim, self.entries.tobytes()))


@dataclass(frozen=True)
class RankOneTerm:
    """One weight/direction pair (lam, v) representing lam * v (x) v (x) v."""

    weight: float
    vector: np.ndarray

    def __post_init__(self):
        v = np.ascontiguousarray(np.asarray(self.vector, dtype=np.float64))
        v.flags.writeable = False
        object.__setattr__(self, "vector", v)
        object.__setattr__(self, "weight", float(self.weight))
        if v.ndim != 1:
            raise DimensionMismatch("vector must be 1-D")
        if not np.isfinite(self.weight) or not np.all(np.isfinite(v)):
            raise ValueError("weight and vector must be finite")
        if abs(np.linalg.norm(v) - 1.0) > 1e-12:
            raise ValueError("vector must have unit norm (within 1e-12)")

    @property
    def dim(self) -> int:
        return self.vector.shape[0]


@dataclass(frozen=True)
class OrthoDecomposition:
    """Ordered list of rank-one terms with positive weights.

    For odd order the sign convention is free (-lam * v^3 == lam * (-v)^3),
    so weights are normalized to be strictly positive. Orthonormality of
    the vectors is the producer's contract and is checked only loosely
    here; exact-decomposition paths are tested to tight tolerances.
    """

    terms: tuple
    dim: int = field(default=0)

    def __post_init__(self):
        terms = tuple(self.terms)
        object.__setattr__(self, "terms", terms)
        if terms:
            dims = {t.dim for t in terms}
            if len(dims) != 1:
                raise DimensionMismatch("all term vectors must share one dimension")
            inferred = dims.pop()
            if self.dim and self.dim != inferred:
                raise DimensionMismatch("declared dim disagrees with term vectors")
            object.__setattr__(self, "dim", inferred)
        elif self.dim < 1:
            raise DimensionMismatch("empty decomposition needs an explicit dim >= 1")
        if any(t.weight <= 0 for t in terms):
            raise ValueError("decomposition weights must be strictly positive")

    def __len__(self) -> int:
        return len(self.terms)

    @property
    def weights(self) -> np.ndarray:
        return np.array([t.weight for t in self.terms])

    @property
    def vectors(self) -> np.ndarray:
        """Term vectors as columns of a dim x len matrix."""
        if not self.terms:
            return np.zeros((self.dim, 0))
        return np.stack([t.vector for t in self.terms], axis=1)


def from_rank_one_sum(terms, dim: int | None = None) -> SymTensor3:
    """Assemble sum_i lam_i v_i (x) v_i (x) v_i; empty sums need `dim`."""
    terms = list(terms)
    if not terms:
        if dim is None:
            raise DimensionMismatch("empty term list needs an explicit dim")
        return SymTensor3.zeros(dim)
    d = terms[0].dim
    if any(t.dim != d for t in terms):
        raise DimensionMismatch("rank-one terms have mismatched dimensions")
    if dim is not None and dim != d:
        raise DimensionMismatch(f"terms have dim {d}, expected {dim}")
    lam = np.array([t.weight for t in terms])
    V = np.stack([t.vector for t in terms], axis=1)
    cube = np.einsum("i,ai,bi,ci->abc", lam, V, V, V, optimize=True)
    return SymTensor3(cube)


def _check_vector(T: SymTensor3, u: np.ndarray) -> np.ndarray:
    u = np.asarray(u, dtype=np.float64)
    if u.shape != (T.dim,):
        raise DimensionMismatch(f"vector of length {u.shape} against tensor dim {T.dim}")
    return u


def contract_vv(T: SymTensor3, u: np.ndarray) -> np.ndarray:
    """T(I, u, u): contract the last two modes with u."""
    u = _check_vector(T, u)
    return T._mat @ np.multiply.outer(u, u).ravel()


def contract_uuu(T: SymTensor3, u: np.ndarray) -> float:
    """T(u, u, u), the numerator of the generalized Rayleigh quotient."""
    u = _check_vector(T, u)
    return float(u @ contract_vv(T, u))


def contract_vv_batch(T: SymTensor3, thetas: np.ndarray) -> np.ndarray:
    """T(I, theta_t, theta_t) for every column theta_t of a dim x m array."""
    if thetas.shape[0] != T.dim:
        raise DimensionMismatch("column dimension mismatch")
    kr = (thetas[:, None, :] * thetas[None, :, :]).reshape(T.dim * T.dim, -1)
    return T._mat @ kr


def contract_uuu_batch(T: SymTensor3, thetas: np.ndarray) -> np.ndarray:
    """T(theta_t, theta_t, theta_t) for every column of a dim x m array."""
    return np.sum(thetas * contract_vv_batch(T, thetas), axis=0)


def contract_matrix(T: SymTensor3, W: np.ndarray) -> SymTensor3:
    """Multilinear change of basis T(W, W, W) for a d x k matrix W."""
    W = np.asarray(W, dtype=np.float64)
    if W.ndim != 2 or W.shape[0] != T.dim:
        raise DimensionMismatch(f"W must be {T.dim} x k, got {W.shape}")
    if W.shape[1] < 1:
        raise DimensionMismatch("W needs at least one column")
    cube = np.einsum("jkl,ja,kb,lc->abc", T.entries, W, W, W, optimize=True)
    return SymTensor3(cube)


def deflate(T: SymTensor3, term: RankOneTerm) -> SymTensor3:
    """T minus lam * v (x) v (x) v; the input tensor is not mutated."""
    if term.dim != T.dim:
        raise DimensionMismatch("term dimension does not match tensor")
    v = term.vector
    cube = T.entries - term.weight * np.einsum("a,b,c->abc", v, v, v)
    return SymTensor3(cube)


def frobenius_norm(T: SymTensor3) -> float:
    """Entrywise Euclidean norm of the full array."""
    return float(np.linalg.norm(T.entries.ravel()))


def power_map_batch(
    T: SymTensor3, thetas: np.ndarray, iters: int, tol: float = 0.0
) -> tuple[np.ndarray, np.ndarray]:
    """Iterate theta <- T(I,theta,theta)/||.|| on each column.

    Columns freeze once the step shrinks below `tol` (tol=0 disables the
    early exit) or once the contraction norm underflows the degeneracy
    floor. Returns (final columns, per-column degeneracy mask).
    """
    thetas = np.array(thetas, dtype=np.float64)
    m = thetas.shape[1]
    floor = _ZERO_CONTRACTION_RTOL * max(frobenius_norm(T), np.finfo(float).tiny)
    degenerate = np.zeros(m, dtype=bool)
    active = np.ones(m, dtype=bool)
    for _ in range(iters):
        if not active.any():
            break
        cur = thetas[:, active]
        nxt = contract_vv_batch(T, cur)
        norms = np.linalg.norm(nxt, axis=0)
        dead = norms <= floor
        if dead.any():
            idx = np.flatnonzero(active)[dead]
            degenerate[idx] = True
            active[idx] = False
            keep = ~dead
            cur, nxt, norms = cur[:, keep], nxt[:, keep], norms[keep]
            if nxt.shape[1] == 0:
                continue
        nxt = nxt / norms
        idx = np.flatnonzero(active)
        if tol > 0.0:
            moved = np.linalg.norm(nxt - cur, axis=0) > tol
            thetas[:, idx] = nxt
            active[idx[~moved]] = False
        else:
            thetas[:, idx] = nxt
    return thetas, degenerate


def op_norm_estimate(T: SymTensor3, restarts: int, iters: int, *, seed: int) -> float:
    """Lower-bound estimate of the operator norm sup_{|theta|=1} |T(theta,theta,theta)|.

    Runs the power map from `restarts` seeded uniform starts on both +T
    and -T and keeps the largest |T(theta,theta,theta)| seen at the final
    iterates. Computing the true supremum is NP-hard in general, so the
    returned value is only a certified lower bound; for orthogonally
    decomposable tensors it reaches the largest weight once some restart
    lands in that eigenvector's basin, which enough restarts make
    overwhelmingly likely.
    """
    if restarts < 1 or iters < 1:
        raise ValueError("restarts and iters must be >= 1")
    rng = rng_stream(seed, 1)
    starts = np.stack([unit_vector(rng, T.dim) for _ in range(restarts)], axis=1)
    best = 0.0
    for sign in (1.0, -1.0):
        S = T if sign > 0 else SymTensor3(-T.entries)
        finals, degenerate = power_map_batch(S, starts, iters)
        vals = np.abs(contract_uuu_batch(T, finals))
        vals[degenerate] = 0.0
        if vals.size:
            best = max(best, float(np.max(vals)))
    return best


def zero_contraction_floor(T: SymTensor3) -> float:
    """Norm threshold below which T(I,theta,theta) counts as vanished."""
    return _ZERO_CONTRACTION_RTOL * max(frobenius_norm(T), np.finfo(float).tiny)
