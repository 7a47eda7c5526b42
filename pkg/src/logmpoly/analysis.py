"""Offline arbitrary-precision analysis of evaluation schemes.

Three questions are answered here, all in big-float arithmetic (mpmath):

* Which polynomial does a scheme actually compute?  ``monomial_expand``
  propagates the double-precision coefficients exactly through the graph and
  returns the monomial coefficients b_i.

* How much do double-precision evaluation-order effects perturb those
  coefficients?  ``stability_indicator`` compares the exact expansion with a
  float64 re-expansion (every scalar operation rounded) and reports the
  elementwise relative error, the heuristic used to choose between otherwise
  equivalent schemes.

* How large may the argument be so that the approximation is backward stable
  to unit roundoff?  ``backward_series`` builds the series of
  exp(-S(-x)) - 1 - x and ``theta_for_order`` bisects for the largest
  threshold theta with sum_{k>=m} |c_{k+1}| theta^k <= u.

Precision is always an explicit argument; no global state is mutated outside
the scoped mpmath working-precision blocks.
"""

import csv as _csv
import io
import math
from dataclasses import dataclass, field

import numpy as np
from mpmath import mp, mpf

from .exceptions import TruncationError
from .matcore import UNIT_ROUNDOFF
from .schemes import GraphScheme

_MIN_DIGITS = 50


def _check_digits(digits):
    if digits < _MIN_DIGITS:
        raise ValueError(f"analysis precision must be >= {_MIN_DIGITS} digits, got {digits}")


class BigSeries:
    """Truncated univariate power series with big-float coefficients.

    Coefficients are c_0..c_N.  Arithmetic truncates at the longer operand's
    order; exponentiation requires a zero constant term.
    """

    __slots__ = ("coeffs",)

    def __init__(self, coeffs):
        self.coeffs = [mpf(c) if not isinstance(c, mpf) else c for c in coeffs]

    @property
    def order(self):
        return len(self.coeffs) - 1

    def __len__(self):
        return len(self.coeffs)

    def __getitem__(self, i):
        return self.coeffs[i] if i < len(self.coeffs) else mpf(0)

    def padded(self, N):
        c = list(self.coeffs[: N + 1])
        c += [mpf(0)] * (N + 1 - len(c))
        return BigSeries(c)

    def __add__(self, other):
        N = max(self.order, other.order)
        return BigSeries([self[i] + other[i] for i in range(N + 1)])

    def __sub__(self, other):
        N = max(self.order, other.order)
        return BigSeries([self[i] - other[i] for i in range(N + 1)])

    def scaled(self, s):
        s = mpf(s)
        return BigSeries([c * s for c in self.coeffs])

    def mul(self, other, N=None):
        """Product truncated at order N (default: sum of the orders)."""
        if N is None:
            N = self.order + other.order
        out = [mpf(0)] * (N + 1)
        for i, a in enumerate(self.coeffs):
            if a == 0 or i > N:
                continue
            jmax = min(other.order, N - i)
            for j in range(jmax + 1):
                b = other.coeffs[j]
                if b != 0:
                    out[i + j] += a * b
        return BigSeries(out)

    def alternated(self):
        """x -> -x substitution: c_i -> (-1)^i c_i."""
        return BigSeries([c if i % 2 == 0 else -c for i, c in enumerate(self.coeffs)])

    def exp(self, N):
        """exp of a series with zero constant term, truncated at order N.

        Standard recurrence: e_0 = 1, e_n = (1/n) sum_{k=1..n} k c_k e_{n-k}.
        """
        if self[0] != 0:
            raise ValueError("exp requires a zero constant term")
        c = self.padded(N).coeffs
        e = [mpf(0)] * (N + 1)
        e[0] = mpf(1)
        for n in range(1, N + 1):
            acc = mpf(0)
            for k in range(1, n + 1):
                if c[k] != 0:
                    acc += k * c[k] * e[n - k]
            e[n] = acc / n
        return BigSeries(e)

    def to_floats(self):
        return np.array([float(c) for c in self.coeffs])


def taylor_series_neglog1m(N, digits=300):
    """Exact coefficients of -log(1-x): (0, 1, 1/2, ..., 1/N)."""
    _check_digits(digits)
    with mp.workdps(digits):
        return BigSeries([mpf(0)] + [mpf(1) / i for i in range(1, N + 1)])


# ---------------------------------------------------------------------------
# Monomial expansion of a scheme
# ---------------------------------------------------------------------------

def _expand_bigfloat(scheme):
    """Propagate scheme coefficients exactly through the graph (polynomial
    node values as big-float coefficient vectors)."""
    x = BigSeries([mpf(0), mpf(1)])
    values = [x]

    def combine(row):
        acc = BigSeries([mpf(row[0])])
        for c, poly in zip(row[1:], values):
            if c != 0.0:
                acc = acc + poly.scaled(c)
        return acc

    for hr, gr in zip(scheme.lhs, scheme.rhs):
        values.append(combine(hr).mul(combine(gr)))
    return combine_out(scheme, values)


def combine_out(scheme, values):
    acc = BigSeries([mpf(scheme.out[0])])
    for c, poly in zip(scheme.out[1:], values):
        if c != 0.0:
            acc = acc + poly.scaled(c)
    return acc


def monomial_expand(scheme, digits=300):
    """Exact monomial coefficients of the polynomial the scheme computes.

    The double-precision coefficient values are interpreted exactly and
    propagated through the graph in big-float arithmetic; the result has
    degree 2^k.
    """
    _check_digits(digits)
    with mp.workdps(digits):
        return _expand_bigfloat(scheme).padded(scheme.degree)


def monomial_expand_double(scheme):
    """Monomial coefficients with every scalar operation rounded to double.

    numpy float64 polynomial propagation through the same graph; this is the
    "computed in floating point" counterpart the stability indicator needs.
    """
    values = [np.array([0.0, 1.0])]

    def combine(row):
        deg = max((len(p) for c, p in zip(row[1:], values) if c != 0.0), default=1)
        acc = np.zeros(deg)
        acc[0] = row[0]
        for c, p in zip(row[1:], values):
            if c != 0.0:
                acc[: len(p)] += c * p
        return acc

    for hr, gr in zip(scheme.lhs, scheme.rhs):
        values.append(np.convolve(combine(hr), combine(gr)))
    out = np.zeros(scheme.degree + 1)
    out[0] = scheme.out[0]
    for c, p in zip(scheme.out[1:], values):
        if c != 0.0:
            out[: len(p)] += c * p
    return out


@dataclass
class StabilityReport:
    """Elementwise relative coefficient errors of the double-precision
    expansion against a reference; indices with zero reference are skipped
    (NaN)."""

    errors: np.ndarray
    max_error: float
    max_index: int

    @property
    def max_in_u(self):
        return self.max_error / UNIT_ROUNDOFF


def stability_indicator(scheme, reference=None, digits=300):
    """Relative error |b_i - b~_i| / |b_i| of the rounded expansion.

    ``reference`` is the exact-arithmetic coefficient series: the true Taylor
    coefficients for Taylor-matching schemes, or (default) the big-float
    expansion of the scheme's own stored coefficients for min-max schemes.
    """
    _check_digits(digits)
    if reference is None:
        reference = monomial_expand(scheme, digits)
    bt = monomial_expand_double(scheme)
    with mp.workdps(digits):
        ref = reference.padded(scheme.degree)
        if len(bt) != len(ref.coeffs):
            raise ValueError(
                f"degree mismatch: reference order {ref.order}, expansion {len(bt) - 1}")
        errors = np.full(len(bt), np.nan)
        max_err = 0.0
        max_idx = -1
        for i, b in enumerate(ref.coeffs):
            if b == 0:
                continue
            e = float(abs((b - mpf(bt[i])) / b))
            errors[i] = e
            if e > max_err:
                max_err = e
                max_idx = i
    return StabilityReport(errors=errors, max_error=max_err, max_index=max_idx)


# ---------------------------------------------------------------------------
# Backward-error series and thresholds
# ---------------------------------------------------------------------------

def backward_series(b, N, digits=300):
    """Series of Delta(x) = exp(-S(-x)) - 1 - x truncated at order N.

    S is the scheme polynomial with monomial coefficients ``b`` (b_0 must be
    0).  If S reproduced log(1+x) exactly the result would vanish; the
    surviving coefficients c_k are the backward-error series of the
    approximation.
    """
    if b[0] != 0:
        raise ValueError("backward_series requires b_0 = 0")
    _check_digits(digits)
    with mp.workdps(digits):
        q = b.padded(N).alternated().scaled(-1)  # -S(-x)
        e = q.exp(N)
        c = list(e.coeffs)
        c[0] -= 1
        c[1] -= 1
        return BigSeries(c)


@dataclass
class ThetaResult:
    theta: float
    unbounded: bool
    hbar_at_theta: float


def _hbar(c, m, theta):
    """sum_{k>=m} |c_{k+1}| theta^k, evaluated by Horner from the top."""
    acc = mpf(0)
    for k in range(c.order - 1, m - 1, -1):
        acc = acc * theta + abs(c[k + 1])
    return acc * theta ** m


def theta_for_order(c, m, u=UNIT_ROUNDOFF, digits=300, cap=1.0, tail_rtol=0.01):
    """Largest theta with sum_{k>=m} |c_{k+1}| theta^k <= u, by bisection.

    ``c`` must be truncated at N >= 4m and the final term's contribution at
    the returned theta must be below ``tail_rtol * u``, otherwise a
    ``TruncationError`` asks the caller for a longer series.
    """
    _check_digits(digits)
    N = c.order
    if N < 4 * m:
        raise ValueError(f"series truncation {N} < 4*m = {4 * m}")
    with mp.workdps(digits):
        u = mpf(u)
        cap_m = mpf(cap)
        if _hbar(c, m, cap_m) <= u:
            return ThetaResult(theta=float(cap_m), unbounded=True,
                               hbar_at_theta=float(_hbar(c, m, cap_m)))
        lo, hi = mpf(0), cap_m
        for _ in range(200):
            mid = (lo + hi) / 2
            if _hbar(c, m, mid) <= u:
                lo = mid
            else:
                hi = mid
            if hi - lo <= hi * mpf("1e-6"):
                break
        theta = lo
        tail_term = abs(c[N]) * theta ** (N - 1)
        if tail_term > u * mpf(tail_rtol):
            raise TruncationError(
                f"last series term contributes {float(tail_term):.3e} at theta="
                f"{float(theta):.3e}; increase the truncation order (N={N})")
        return ThetaResult(theta=float(theta), unbounded=False,
                           hbar_at_theta=float(_hbar(c, m, theta)))


def theta_for_scheme(scheme, m=None, digits=300, N=None, u=UNIT_ROUNDOFF):
    """Expand a scheme, build its backward series and compute theta.

    The truncation starts at max(4m, 128) and doubles (up to 1024) if the
    tail is not negligible at the computed threshold.
    """
    if m is None:
        m = scheme.meta.order
    if m < 1:
        raise ValueError("scheme order unknown; pass m explicitly")
    b = monomial_expand(scheme, digits)
    N0 = N if N is not None else max(4 * m, 128)
    while True:
        c = backward_series(b, N0, digits)
        try:
            return theta_for_order(c, m, u=u, digits=digits)
        except TruncationError:
            if N is not None or N0 >= 1024:
                raise
            N0 *= 2


@dataclass
class TailCheckReport:
    passed: bool
    violations: list
    max_scaled_error: float


def tail_coeff_check(scheme, m_k, digits=300, bound=1.0):
    """Check |(1/i - b_i) * i| <= bound for all i in (m_k, 2^k].

    The coefficients beyond the matched order must still track the Taylor
    coefficients of -log(1-x) loosely for the backward-error bound to carry;
    violations are reported, not raised.
    """
    _check_digits(digits)
    b = monomial_expand(scheme, digits)
    with mp.workdps(digits):
        violations = []
        worst = 0.0
        for i in range(m_k + 1, scheme.degree + 1):
            err = float(abs((mpf(1) / i - b[i]) * i))
            worst = max(worst, err)
            if err > bound:
                violations.append((i, err))
    return TailCheckReport(passed=not violations, violations=violations,
                           max_scaled_error=worst)


# ---------------------------------------------------------------------------
# Threshold table and cost comparison
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ThetaRow:
    k: int
    order_label: str
    degree: int
    theta: float
    stability_max_in_u: float = float("nan")
    tail_ok: bool = True

    @property
    def order(self):
        return int(self.order_label.rstrip("+"))

    @property
    def cost(self):
        return float(self.k)


#: published backward-error thresholds for the nine evaluation schemes
PAPER_THETA_ROWS = (
    ThetaRow(1, "2", 2, 1.83e-8),
    ThetaRow(2, "4", 4, 1.53e-4),
    ThetaRow(3, "8", 8, 1.33e-2),
    ThetaRow(4, "14+", 16, 9.31e-2),
    ThetaRow(5, "14+", 32, 2.46e-1),
    ThetaRow(6, "20+", 64, 3.72e-1),
    ThetaRow(7, "24+", 128, 5.86e-1),
    ThetaRow(8, "27+", 256, 6.69e-1),
    ThetaRow(9, "28+", 512, 7.28e-1),
)

#: prior Taylor-based thresholds (comparison data; cost k, order, max degree)
PRIOR_TAYLOR_ROWS = (
    (5, "21+", 24, 2.11e-1),
    (6, "27+", 32, 2.96e-1),
    (7, "33+", 40, 3.73e-1),
    (8, "39+", 48, 4.28e-1),
    (9, "45+", 54, 4.90e-1),
    (10, "52+", 63, 5.41e-1),
    (11, "59+", 70, 5.82e-1),
    (12, "67+", 80, 6.18e-1),
    (13, "75+", 88, 6.54e-1),
)

#: diagonal Pade thresholds (comparison data; index, cost in M, order, theta)
PADE_ROWS = (
    (1, 4.0 / 3.0, "2+", 1.59e-5),
    (2, 8.0 / 3.0, "4+", 2.31e-3),
    (3, 4.0, "6+", 1.94e-2),
    (4, 16.0 / 3.0, "8+", 6.21e-2),
    (5, 20.0 / 3.0, "10+", 1.28e-1),
    (6, 8.0, "12+", 2.06e-1),
    (7, 28.0 / 3.0, "14+", 2.88e-1),
    (8, 32.0 / 3.0, "16+", 3.67e-1),
    (9, 12.0, "18+", 4.39e-1),
    (10, 40.0 / 3.0, "20+", 5.03e-1),
    (11, 44.0 / 3.0, "22+", 5.60e-1),
    (12, 16.0, "24+", 6.09e-1),
    (13, 52.0 / 3.0, "26+", 6.52e-1),
    (14, 56.0 / 3.0, "28+", 6.89e-1),
    (15, 20.0, "30+", 7.21e-1),
    (16, 64.0 / 3.0, "32+", 7.49e-1),
)


@dataclass
class ThetaTable:
    """Per-k thresholds used by the logarithm driver.

    Rows must have strictly increasing theta; the shipped table is computed
    from the shipped coefficient files, so the driver's alpha <= theta
    invariant is grounded in the exact coefficients it evaluates with.
    """

    rows: tuple = PAPER_THETA_ROWS

    def __post_init__(self):
        thetas = [r.theta for r in self.rows]
        if any(b <= a for a, b in zip(thetas, thetas[1:])):
            raise ValueError("theta values must be strictly increasing in k")

    def __len__(self):
        return len(self.rows)

    def __getitem__(self, k):
        """Row for scheme index k (1-based)."""
        return self.rows[k - 1]

    @property
    def max_k(self):
        return len(self.rows)

    @classmethod
    def paper_reference(cls):
        return cls(rows=PAPER_THETA_ROWS)

    def truncated(self, max_k):
        return ThetaTable(rows=self.rows[:max_k])

    def to_csv(self):
        buf = io.StringIO()
        w = _csv.writer(buf)
        w.writerow(["k", "m_k", "degree", "theta",
                    "max_stability_indicator_in_u", "tail_check"])
        for r in self.rows:
            w.writerow([r.k, r.order_label, r.degree, f"{r.theta:.17g}",
                        f"{r.stability_max_in_u:.17g}", int(r.tail_ok)])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text):
        rows = []
        for rec in _csv.DictReader(io.StringIO(text)):
            rows.append(ThetaRow(
                k=int(rec["k"]),
                order_label=rec["m_k"],
                degree=int(rec["degree"]),
                theta=float(rec["theta"]),
                stability_max_in_u=float(rec["max_stability_indicator_in_u"]),
                tail_ok=bool(int(rec["tail_check"])),
            ))
        return cls(rows=tuple(rows))


_SHIPPED_CACHE = []


def shipped_theta_table():
    """The frozen threshold table packaged with the coefficient files."""
    if not _SHIPPED_CACHE:
        from importlib import resources
        text = resources.files("logmpoly.coefficients").joinpath("theta_table.csv").read_text()
        _SHIPPED_CACHE.append(ThetaTable.from_csv(text))
    return _SHIPPED_CACHE[0]


@dataclass(frozen=True)
class CostComparison:
    poly_k: int
    poly_cost: float
    poly_theta: float
    competitor: str
    competitor_cost: float
    competitor_theta: float

    @property
    def poly_dominates(self):
        """Larger threshold at equal or lower multiply-equivalent cost."""
        return (self.poly_theta >= self.competitor_theta
                and self.poly_cost <= self.competitor_cost)

    @property
    def cost_gap(self):
        return self.competitor_cost - self.poly_cost


def cost_compare(theta_table, pade_rows=PADE_ROWS, prior_taylor_rows=PRIOR_TAYLOR_ROWS):
    """Pair every polynomial scheme with every competitor row.

    Costs are in units of one matrix product M (a left division counts as
    4/3 M, already folded into the Pade costs).
    """
    out = []
    for r in theta_table.rows:
        for idx, cost, order, theta in pade_rows:
            out.append(CostComparison(r.k, r.cost, r.theta,
                                      f"pade_r{idx}", cost, theta))
        for kk, order, maxdeg, theta in prior_taylor_rows:
            out.append(CostComparison(r.k, r.cost, r.theta,
                                      f"taylor_prior_k{kk}", float(kk), theta))
    return out
