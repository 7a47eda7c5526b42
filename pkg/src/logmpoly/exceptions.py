"""Exception types shared across the library."""

import numpy as np


class SingularMatrixError(np.linalg.LinAlgError):
    """An exactly (or numerically) singular matrix was factorized or inverted."""


class ConvergenceError(RuntimeError):
    """An iteration hit its cap without satisfying its stopping test."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class SpectrumError(ValueError):
    """The input has eigenvalues on the closed negative real axis, where the
    principal logarithm is undefined."""


class SchemeFormatError(ValueError):
    """A scheme coefficient file or matrix file could not be parsed."""


class NormalizationError(ValueError):
    """A scheme's first product row is degree-deficient and cannot be
    normalized."""


class TruncationError(RuntimeError):
    """A power-series truncation was too short for the requested computation."""


class FitInfeasibleError(RuntimeError):
    """The requested coefficient fit is known to have no solution."""
