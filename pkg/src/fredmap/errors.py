"""Exception hierarchy.

Two families matter to callers: ``InputError`` (malformed files or
expressions, CLI exit code 1) and ``RefusalError`` (a precondition of the
mathematics is not met, CLI exit code 2).  Every refusal names the violated
precondition in its message.
"""


class FredmapError(Exception):
    """Base class for all package errors."""


class InputError(FredmapError):
    """Malformed input: files, schemas, expressions."""


class ExpressionSyntaxError(InputError):
    """Expression text does not parse; carries line/column."""

    def __init__(self, message, line=1, col=0):
        super().__init__(f"{message} (line {line}, col {col})")
        self.line = line
        self.col = col


class UnknownSymbol(InputError):
    """Expression references a variable or function that does not exist."""


class SchemaError(InputError):
    """TOML/JSON document does not match the expected schema."""


class SeamIncompatibility(InputError):
    """Map components disagree across a declared seam identification."""


class SmoothnessDomainError(InputError):
    """Division or sqrt argument degenerates somewhere on the domain box."""


class RefusalError(FredmapError):
    """A mathematical precondition fails; the computation is refused."""


class IllConditioned(RefusalError):
    """Singular values straddle the rank tolerance; rank is ambiguous."""


class IndexNonZero(RefusalError):
    """Operation requires a square head (index 0)."""


class SingularEndpoint(RefusalError):
    """Path endpoint operator fails the invertibility margin."""


class SingularJoint(RefusalError):
    """Concatenation joint leaves the invertible operators."""


class NoConvergence(RefusalError):
    """Adaptive subdivision did not stabilize (path tangent to the singular stratum)."""


class NoRegularValueFound(RefusalError):
    """Regular-value sampling exhausted its attempt budget."""


class UnstableCount(RefusalError):
    """Preimage count changed under grid refinement or across regular values."""


class ResidualFailure(RefusalError):
    """A reported root does not meet the residual tolerance."""


class NotOrientable(RefusalError):
    """Absolute degree requested for a non-orientable map."""


class CocycleViolation(RefusalError):
    """Pairwise parity relation inconsistent in the orientable case."""


class PairNotCancellable(RefusalError):
    """Orientable cancellation requires an opposite-parity pair."""


class DomainMismatch(RefusalError):
    """The two inputs live on different domains."""


class IndexMismatch(RefusalError):
    """The two inputs have different Fredholm indices."""


class PropernessUncertified(RefusalError):
    """Operation requires a passing properness certificate."""


class CertificateViolated(RefusalError):
    """Properness certificate fails; carries a witness point."""

    def __init__(self, message, witness=None):
        super().__init__(message)
        self.witness = witness


class CoverFailure(RefusalError):
    """Partition-cover radii shrank below the minimum grid spacing."""


class VerificationFailure(RefusalError):
    """Extension verification failed at a sample; carries the witness."""

    def __init__(self, message, witness=None):
        super().__init__(message)
        self.witness = witness


class NotSphereValued(RefusalError):
    """Properization input must map into the unit sphere."""


class UnsupportedDomain(RefusalError):
    """No canonical representative exists for the requested domain/invariants."""


class SearchBudgetExceeded(RefusalError):
    """Move search hit its depth budget before exhausting the state space."""


class OutOfDomain(RefusalError):
    """Evaluation point lies outside the domain box."""
