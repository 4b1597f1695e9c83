"""Typed exceptions raised across the library.

Every failure mode that callers are expected to branch on gets its own
class; the CLI maps each one to a stable exit code.
"""


class LvmomentsError(Exception):
    """Base class for all library errors."""


class DimensionMismatch(LvmomentsError):
    """Operands have incompatible dimensions."""


class ZeroContraction(LvmomentsError):
    """T(I, theta, theta) vanished; the power map is undefined at theta."""


class AllRestartsDegenerate(LvmomentsError):
    """Every restart of a power-method extraction hit ZeroContraction."""

    def __init__(self, factor_index: int):
        self.factor_index = factor_index
        super().__init__(f"all restarts degenerate while extracting factor {factor_index}")


class StoppingNeverSatisfied(LvmomentsError):
    """The stopping-condition variant exhausted its restart budget."""

    def __init__(self, factor_index: int, attempts: int):
        self.factor_index = factor_index
        self.attempts = attempts
        super().__init__(
            f"stopping condition not met for factor {factor_index} "
            f"after {attempts} attempts (perturbation too large or wrong rank?)"
        )


class NearDegenerateSpectrum(LvmomentsError):
    """Projected eigenvalues too close for simultaneous diagonalization."""


class RankDeficient(LvmomentsError):
    """Fewer usable eigenvalues than the requested rank."""

    def __init__(self, k_effective: int, k_requested: int):
        self.k_effective = k_effective
        self.k_requested = k_requested
        super().__init__(
            f"only {k_effective} eigenvalues above the floor, {k_requested} requested"
        )


class NonpositiveEigenvalue(LvmomentsError):
    """A decomposition weight was <= 0 where positivity is required."""


class DegenerateDirection(LvmomentsError):
    """The quadratic form M2(u, u) is not positive along u."""


class DimensionTooSmall(LvmomentsError):
    """Observed dimension is too small for the requested number of components."""


class NonpositiveAlpha0(LvmomentsError):
    """The Dirichlet concentration alpha0 must be strictly positive."""


class SingularPairMoment(LvmomentsError):
    """A pairwise cross-moment matrix is too ill-conditioned to invert."""


class DegenerateChain(LvmomentsError):
    """HMM parameters violate the identifiability preconditions."""


class NonInvertibleT(LvmomentsError):
    """Recovered transition matrix is singular."""


class DocTooShort(LvmomentsError):
    """Document has too few words for the requested moment order."""


class EmptyCorpus(LvmomentsError):
    """No usable documents in the corpus."""


class TooFewDimensions(LvmomentsError):
    """Need at least three coordinates to build three views."""


class InfeasibleSpec(LvmomentsError):
    """Synthetic-instance request violates a model precondition."""


class CorpusFormatError(LvmomentsError):
    """Malformed corpus/sample file."""

    def __init__(self, line_no: int, reason: str):
        self.line_no = line_no
        self.reason = reason
        super().__init__(f"line {line_no}: {reason}")


class SerializationError(LvmomentsError):
    """Malformed binary container or tensor file."""
