from typing import Any, Dict, Optional


class VortexError(Exception):
    """Base class for all domain errors raised by the solver."""

    def __init__(self, message: str, details: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.message = message
        self.details: Dict[str, Any] = dict(details or {})

    def to_record(self) -> Dict[str, Any]:
        """Machine-readable failure record."""
        return {
            "error": type(self).__name__,
            "module": type(self).__module__,
            "message": self.message,
            "details": self.details,
        }


# geometry


class GeometryError(VortexError):
    pass


class FieldError(GeometryError):
    """A field is non-finite or does not match its grid."""


class CompatibilityError(GeometryError):
    """The right-hand side of a Poisson problem has nonzero mean."""


class TruncationError(GeometryError):
    """The theta series cannot meet the requested tail bound."""


class SectionError(GeometryError):
    """Unsupported section request (degree or kind)."""


# model


class ModelError(VortexError):
    pass


class NegativityError(ModelError):
    """The gradient density went negative beyond tolerance."""


class PositivityError(ModelError):
    """The frozen right-hand side a0 is not positive."""


class CalibrationError(ModelError):
    """No alpha on the ladder satisfies the positivity conditions."""


class NotPositive(ModelError):
    """Endpoint curvature positivity failed."""


# solver


class SolverError(VortexError):
    pass


class SizeError(SolverError):
    """Dense assembly requested above the size guard."""


class EllipticityLost(SolverError):
    pass


class NoConvergence(SolverError):
    pass


class SingularJacobian(SolverError):
    pass


class JacobianMismatch(SolverError):
    """Jacobian disagrees with finite differences of the residual."""


class PathStuck(SolverError):
    pass


class BranchLost(SolverError):
    pass


class EpsilonTooSmall(SolverError):
    pass


class NoRealRoot(SolverError):
    pass


class VerificationFailed(SolverError):
    """A stored run no longer passes its endpoint checks."""


# config / studies


class ConfigError(VortexError):
    """Invalid run configuration."""

    def __init__(
        self,
        message: str,
        line: Optional[int] = None,
        key: Optional[str] = None,
    ):
        details = {}
        if line is not None:
            details["line"] = line
        if key is not None:
            details["key"] = key
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(f"{prefix}{message}", details)
        self.line = line
        self.key = key


class StudyError(VortexError):
    pass


class IncompatibleRuns(StudyError):
    pass
