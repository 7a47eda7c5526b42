"""Principal matrix square root by the scaled coupled Newton iteration.

The iteration
    X <- (mu X + (mu Y)^-1) / 2,   Y <- (mu Y + (mu X)^-1) / 2,
with X0 = A, Y0 = I and determinant scaling
    mu = |det(X) det(Y)|^(-1/(2n))
converges quadratically to (A^(1/2), A^(-1/2)) when A has no eigenvalues on
the closed negative real axis.  Each step costs two matrix inversions (two
division units); the determinants come free from the LU factors.
"""

import math

import numpy as np

from .exceptions import ConvergenceError, SingularMatrixError
from .matcore import UNIT_ROUNDOFF, as_square, identity_like, lu_factor, lu_solve, onenorm

#: scaling is disabled once the step is this small (pure Newton endgame;
#: determinant scaling near convergence only adds rounding noise)
_SCALING_SWITCH = 1e-2

#: clamp on the determinant scaling factor to dodge overflow on wild spectra
_MU_MIN, _MU_MAX = 1e-8, 1e8


def sqrt_db(A, tol=None, maxiter=50, counter=None):
    """Principal square root of ``A``.

    Parameters
    ----------
    A : square ndarray without eigenvalues on the closed negative real axis
        (violations surface as non-convergence or singular iterates).
    tol : relative-change stopping tolerance; defaults to 10 n u.
    maxiter : iteration cap.
    counter : optional OpCounter; two divisions are charged per iteration.

    Returns
    -------
    X with X @ X ~= A.
    """
    A = as_square(A)
    n = A.shape[0]
    if tol is None:
        tol = 10.0 * n * UNIT_ROUNDOFF
    ident = identity_like(A)
    X = A.copy()
    Y = ident.copy()
    scaling = True
    for it in range(1, maxiter + 1):
        try:
            fx = lu_factor(X)
            fy = lu_factor(Y)
        except SingularMatrixError as exc:
            raise SingularMatrixError(
                f"singular iterate at square-root step {it}: {exc}") from exc
        if scaling:
            mu = math.exp(-(fx.logabsdet + fy.logabsdet) / (2.0 * n))
            mu = min(max(mu, _MU_MIN), _MU_MAX)
        else:
            mu = 1.0
        Xinv = lu_solve(fx, ident, counter)
        Yinv = lu_solve(fy, ident, counter)
        Xn = 0.5 * (mu * X + Yinv / mu)
        Yn = 0.5 * (mu * Y + Xinv / mu)
        change = onenorm(Xn - X)
        scale = onenorm(Xn)
        X, Y = Xn, Yn
        if scale == 0.0:
            raise ConvergenceError("square-root iterate collapsed to zero")
        rel = change / scale
        if rel < _SCALING_SWITCH:
            scaling = False
        if rel <= tol:
            return X
    raise ConvergenceError(
        f"square root did not converge in {maxiter} iterations "
        f"(eigenvalues on the negative real axis?)")
