"""Exception and warning taxonomy shared by all cgoscan modules."""

from __future__ import annotations


class CgoscanError(Exception):
    """Base class for all package-specific errors."""


class EmptyGamma(CgoscanError):
    """Measurement patch contains no boundary faces."""


class OverlapError(CgoscanError):
    """Two inclusions claim the same voxel (alpha too large for c0)."""


class EigenvalueHit(CgoscanError):
    """Factorization pivot ratio collapsed: omega^2 sits at or near a
    Dirichlet eigenvalue of the discrete operator."""


class GridMismatch(CgoscanError):
    """Operands live on different grids or boundary patches."""


class DegenerateProbe(CgoscanError):
    """Probe parameters (k, |l|) = (0, 0) admit no orthogonal triad."""


class QuadratureDiverged(CgoscanError):
    """Two quadrature refinements of the Faddeev kernel disagree by more
    than the configured relative tolerance."""


class SingularSystem(CgoscanError):
    """Regularized boundary system condition number exceeds the safety cap."""


class RankDeficient(CgoscanError):
    """Exponential design matrix for value recovery is numerically rank
    deficient (centers too close or too few samples)."""


class NoPeaks(CgoscanError):
    """Inverse Fourier synthesis has no peak above the solver noise floor."""


class ParseError(CgoscanError):
    """Configuration file is malformed or contains unknown keys."""


class ValidationError(CgoscanError):
    """Configuration parsed but violates a semantic constraint."""


class MissingArtifact(CgoscanError):
    """A run directory lacks a required artifact file."""

    def __init__(self, name: str):
        super().__init__(name)
        self.name = name


class OverflowRisk(UserWarning):
    """CGO exponential exceeds the safe dynamic range (max |Re(x.rho)| > 30)."""


class IllPosedWarning(UserWarning):
    """First-kind solve left a large relative residual; a lambda sweep is advised."""
