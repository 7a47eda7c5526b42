"""Dense linear-algebra substrate.

Matrices are plain numpy arrays (square, float64 or complex128).  Everything
here is deliberately simple: the library measures cost in matrix-product
counts, not wall clock, so ``mat_mul`` is ``@`` plus bookkeeping.  The module
also provides LU with determinant, iterative radix-2 balancing, a block
1-norm estimator for matrix powers, a reference matrix exponential used as a
test oracle, and dense eigenvalues for validating the spectrum precondition.
"""

import cmath
import math

import numpy as np
import scipy.linalg

from .exceptions import ConvergenceError, SchemeFormatError, SingularMatrixError

#: double-precision unit roundoff
UNIT_ROUNDOFF = 2.0 ** -53


class OpCounter:
    """Tallies the O(n^3) work of one computation.

    ``products`` counts full n-by-n matrix multiplications (unit M) and
    ``divisions`` counts left matrix divisions, i.e. one LU factorization plus
    an n-column solve (unit D).  The two are put on a common scale through
    ``equivalent_m`` = products + 4/3 * divisions.  Thin matrix-block passes
    made by the norm estimator are O(n^2 * cols) and tracked separately in
    ``estimation_passes``.  A counter is per-call mutable state; never share
    one between concurrent computations.
    """

    __slots__ = ("products", "divisions", "estimation_passes")

    def __init__(self):
        self.products = 0
        self.divisions = 0
        self.estimation_passes = 0

    @property
    def equivalent_m(self):
        return self.products + 4.0 * self.divisions / 3.0

    def __repr__(self):
        return (f"OpCounter(products={self.products}, divisions={self.divisions}, "
                f"estimation_passes={self.estimation_passes})")


def as_square(A, name="matrix"):
    """Validate and return ``A`` as a square float64/complex128 array.

    Raises ``ValueError`` for non-square input and for NaN/Inf entries; the
    rest of the library assumes both.
    """
    A = np.asarray(A)
    if A.ndim != 2 or A.shape[0] != A.shape[1] or A.shape[0] < 1:
        raise ValueError(f"{name} must be square, got shape {A.shape}")
    if np.iscomplexobj(A):
        A = A.astype(np.complex128, copy=False)
    else:
        A = A.astype(np.float64, copy=False)
    if not np.all(np.isfinite(A.view(np.float64) if A.dtype == np.complex128 else A)):
        raise ValueError(f"{name} has non-finite entries")
    return A


def identity_like(A):
    return np.eye(A.shape[0], dtype=A.dtype)


def mat_mul(A, B, counter=None):
    """n-by-n matrix product, counted as one unit M."""
    A = np.asarray(A)
    B = np.asarray(B)
    if A.ndim != 2 or B.ndim != 2 or A.shape[1] != B.shape[0]:
        raise ValueError(f"dimension mismatch: {A.shape} x {B.shape}")
    if counter is not None:
        counter.products += 1
    return A @ B


def onenorm(A):
    """Maximum column absolute sum."""
    A = np.asarray(A)
    return float(np.abs(A).sum(axis=0).max())


# ---------------------------------------------------------------------------
# LU factorization with determinant
# ---------------------------------------------------------------------------

class LuFactors:
    """Packed LU factors of PA = LU with partial pivoting.

    The determinant comes free from the factors; ``logabsdet`` avoids
    overflow for the determinant-based scaling of the square-root iteration.
    """

    __slots__ = ("lu", "piv", "n")

    def __init__(self, lu, piv):
        self.lu = lu
        self.piv = piv
        self.n = lu.shape[0]

    @property
    def det(self):
        d = np.prod(np.diag(self.lu))
        if np.count_nonzero(self.piv != np.arange(self.n)) % 2:
            d = -d
        return d

    @property
    def logabsdet(self):
        return float(np.sum(np.log(np.abs(np.diag(self.lu)))))


def lu_factor(A):
    """Factor PA = LU; raises ``SingularMatrixError`` on a zero pivot."""
    A = as_square(A)
    lu, piv = scipy.linalg.lu_factor(A, check_finite=False)
    if np.any(np.diag(lu) == 0):
        raise SingularMatrixError("matrix is exactly singular (zero pivot)")
    return LuFactors(lu, piv)


def lu_solve(factors, B, counter=None):
    """Solve AX = B from packed factors.

    An n-column solve is one division unit D; thin right-hand sides are not
    counted (they are O(n^2) work).
    """
    B = np.asarray(B)
    if counter is not None and B.ndim == 2 and B.shape[1] == factors.n:
        counter.divisions += 1
    return scipy.linalg.lu_solve((factors.lu, factors.piv), B, check_finite=False)


def solve(A, B, counter=None):
    return lu_solve(lu_factor(A), B, counter)


def inv(A, counter=None):
    """Inverse via LU, counted as one division unit."""
    A = as_square(A)
    return solve(A, identity_like(A), counter)


# ---------------------------------------------------------------------------
# Balancing
# ---------------------------------------------------------------------------

class BalanceTransform:
    """Diagonal similarity T = diag(scale) with radix-2 scale factors.

    Because the scales are exact powers of two, applying and reverting the
    transform is exact in floating point.
    """

    __slots__ = ("scale",)

    def __init__(self, scale):
        self.scale = np.asarray(scale, dtype=np.float64)

    @property
    def is_identity(self):
        return bool(np.all(self.scale == 1.0))

    def apply(self, A):
        """A -> T^-1 A T."""
        return A * (self.scale[None, :] / self.scale[:, None])

    def revert(self, L):
        """L -> T L T^-1."""
        return L * (self.scale[:, None] / self.scale[None, :])


def balance(A, max_sweeps=100):
    """Iteratively equalize row/column 1-norms by exact powers of 2.

    Classic Osborne-style balancing without the permutation phase; the
    similarity is exactly invertible, which is all the caller needs.
    """
    A = as_square(A)
    n = A.shape[0]
    B = A.copy()
    scale = np.ones(n)
    radix = 2.0
    for _ in range(max_sweeps):
        changed = False
        for i in range(n):
            c = float(np.abs(B[:, i]).sum() - abs(B[i, i]))
            r = float(np.abs(B[i, :]).sum() - abs(B[i, i]))
            if c == 0.0 or r == 0.0:
                continue
            s = c + r
            f = 1.0
            while c < r / radix:
                c *= radix
                r /= radix
                f *= radix
            while c >= r * radix:
                c /= radix
                r *= radix
                f /= radix
            if c + r < 0.95 * s and 1e-300 < f < 1e300:
                scale[i] *= f
                B[:, i] *= f
                B[i, :] /= f
                changed = True
        if not changed:
            break
    return B, BalanceTransform(scale)


def unbalance(L, transform):
    return transform.revert(L)


# ---------------------------------------------------------------------------
# Block 1-norm estimation of matrix power norms
# ---------------------------------------------------------------------------

def _sign_like(Y):
    if np.iscomplexobj(Y):
        a = np.abs(Y)
        S = np.where(a == 0, 1.0 + 0j, Y / np.where(a == 0, 1.0, a))
        return S
    return np.where(Y >= 0, 1.0, -1.0)


def est_product_norm(factors, counter=None, itmax=5):
    """Estimate the 1-norm of a product of matrix powers without forming it.

    ``factors`` is a list of (matrix, power) pairs; the estimated operator is
    the product of the factors in order.  A 2-column block power method in the
    style of the classic block 1-norm estimator is used: one averaging column
    plus one deterministic alternating column, at most ``itmax`` forward plus
    transposed passes.  The result never exceeds the true norm (every probe
    has unit 1-norm), and on diagonal operators it is exact from the second
    sweep onward.
    """
    n = factors[0][0].shape[0]
    total_power = sum(p for _, p in factors)

    def apply_op(X):
        if counter is not None:
            counter.estimation_passes += total_power
        for M, p in reversed(factors):
            for _ in range(p):
                X = M @ X
        return X

    def apply_op_h(X):
        if counter is not None:
            counter.estimation_passes += total_power
        for M, p in factors:
            Mh = M.conj().T
            for _ in range(p):
                X = Mh @ X
        return X

    t = min(2, n)
    dtype = np.result_type(*(M.dtype for M, _ in factors))
    X = np.ones((n, t), dtype=dtype) / n
    if t > 1:
        # deterministic "restart" column: alternating signs with a mild ramp
        v = np.array([(-1.0) ** i * (1.0 + i / max(1, n - 1)) for i in range(n)])
        X[:, 1] = v / np.abs(v).sum()

    est = 0.0
    best_j = 0
    ind_hist = set()
    for sweep in range(itmax):
        Y = apply_op(X)
        col_norms = np.abs(Y).sum(axis=0)
        j = int(np.argmax(col_norms))
        new_est = float(col_norms[j])
        if new_est > est:
            est = new_est
            best_j = j
        elif sweep > 0:
            break
        S = _sign_like(Y)
        Z = apply_op_h(S)
        h = np.abs(Z).max(axis=1)
        order = np.argsort(-h)
        picks = [int(i) for i in order[: 4 * t] if int(i) not in ind_hist][:t]
        if not picks or (sweep > 0 and h[order[0]] <= h[best_j]):
            break
        ind_hist.update(picks)
        X = np.zeros((n, len(picks)), dtype=dtype)
        for c, i in enumerate(picks):
            X[i, c] = 1.0
    return est


def est_power_norm(B, p, counter=None, itmax=5):
    """Estimate ||B^p||_1 without forming B^p.

    Lower bound of the true norm, exact for diagonal B; see
    ``est_product_norm`` for the method.
    """
    if p < 1:
        raise ValueError(f"power must be a positive integer, got {p}")
    B = as_square(B)
    if not np.any(B):
        return 0.0
    return est_product_norm([(B, int(p))], counter=counter, itmax=itmax)


# ---------------------------------------------------------------------------
# Reference matrix exponential (test oracle, not a stable API surface)
# ---------------------------------------------------------------------------

def expm_ref(A):
    """Matrix exponential by scaling and squaring with a degree-20 Taylor core.

    Test oracle only.  After scaling to norm <= 1/2 the Taylor truncation
    error is ~1e-27, so the result is accurate to a modest multiple of
    roundoff for the norms the tests use.
    """
    A = as_square(A)
    nrm = onenorm(A)
    s = 0 if nrm <= 0.5 else max(0, int(math.ceil(math.log2(nrm / 0.5))))
    X = A / (2.0 ** s)
    n = A.shape[0]
    E = np.eye(n, dtype=A.dtype)
    T = E.copy()
    for j in range(20, 0, -1):
        T = E + (X @ T) / j
    for _ in range(s):
        T = T @ T
    return T


# ---------------------------------------------------------------------------
# Dense eigenvalues (spectrum validation)
# ---------------------------------------------------------------------------

def eig_small(A, cap=512):
    """Eigenvalues of a dense matrix of modest size.

    Backed by LAPACK's Hessenberg + shifted-QR path; validation-grade, used
    to check the no-negative-real-eigenvalue precondition.
    """
    A = as_square(A)
    if A.shape[0] > cap:
        raise ValueError(f"matrix dimension {A.shape[0]} exceeds eig_small cap {cap}")
    try:
        return np.linalg.eigvals(A)
    except np.linalg.LinAlgError as exc:
        raise ConvergenceError(f"eigenvalue iteration failed: {exc}") from exc


# ---------------------------------------------------------------------------
# Plain-text matrix I/O
# ---------------------------------------------------------------------------

def _format_scalar(x):
    if isinstance(x, complex) or np.iscomplexobj(x):
        x = complex(x)
        return f"{x.real:.17g}{x.imag:+.17g}i"
    return f"{float(x):.17g}"


def _parse_scalar(tok):
    tok = tok.strip()
    if tok.endswith("i") or tok.endswith("I"):
        body = tok[:-1]
        # split real/imag at the last +/- that is not an exponent sign
        split = -1
        for i in range(len(body) - 1, 0, -1):
            if body[i] in "+-" and body[i - 1] not in "eE":
                split = i
                break
        if split <= 0:
            raise SchemeFormatError(f"malformed complex token: {tok!r}")
        try:
            return complex(float(body[:split]), float(body[split:]))
        except ValueError as exc:
            raise SchemeFormatError(f"malformed complex token: {tok!r}") from exc
    try:
        return float(tok)
    except ValueError as exc:
        raise SchemeFormatError(f"malformed scalar token: {tok!r}") from exc


def format_matrix(A):
    """Serialize to the plain-text format: first line n, then n rows of n
    whitespace-separated scalars (complex entries as ``re+imi``)."""
    A = as_square(A)
    n = A.shape[0]
    lines = [str(n)]
    for i in range(n):
        lines.append(" ".join(_format_scalar(x) for x in A[i]))
    return "\n".join(lines) + "\n"


def parse_matrix(text):
    lines = [ln for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
    if not lines:
        raise SchemeFormatError("empty matrix file")
    try:
        n = int(lines[0].strip())
    except ValueError as exc:
        raise SchemeFormatError(f"bad dimension line: {lines[0]!r}") from exc
    if n < 1 or len(lines) < n + 1:
        raise SchemeFormatError(f"expected {n} rows, found {len(lines) - 1}")
    rows = []
    for ln in lines[1 : n + 1]:
        toks = ln.split()
        if len(toks) != n:
            raise SchemeFormatError(f"expected {n} entries per row, got {len(toks)}")
        rows.append([_parse_scalar(t) for t in toks])
    vals = np.array(rows)
    if not np.iscomplexobj(vals):
        vals = vals.astype(np.float64)
    return as_square(vals)


def write_matrix(path, A):
    with open(path, "w") as fh:
        fh.write(format_matrix(A))


def read_matrix(path):
    with open(path) as fh:
        return parse_matrix(fh.read())
