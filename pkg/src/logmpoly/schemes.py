"""Polynomial evaluation engines.

The central object is ``GraphScheme``: a coefficient set for the
degree-optimal evaluation form.  With P1 = I and P2 = A, each of the k
product nodes multiplies two linear combinations of the previously computed
nodes,

    P_{j+2} = (sum_i lhs[j][i] * P_i) * (sum_i rhs[j][i] * P_i),

and the output is z(A) = sum_i out[i] * P_i.  A scheme with k products
represents a polynomial of degree up to 2^k; well-chosen coefficients make
that polynomial a high-order approximation of -log(1 - x) at the cost of
only k multiplications, which is what the whole library is built around.

The built-in schemes (k = 1..4 Taylor-matching, k = 5..9 min-max fitted on
disks) are shipped as coefficient files under ``coefficients/``.
"""

import math
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from .exceptions import NormalizationError, SchemeFormatError
from .matcore import as_square, identity_like, mat_mul

_COEFF_PACKAGE = "logmpoly.coefficients"


@dataclass(frozen=True)
class SchemeMeta:
    """Descriptive metadata: approximation order (label like ``14+``),
    polynomial degree, target tag and the disk radius used when fitting."""

    order_label: str = ""
    degree: int = 0
    target: str = "neglog1m"
    radius: float = 0.0
    provenance: str = ""

    @property
    def order(self):
        """Integer approximation order (the label with any trailing ``+``
        stripped)."""
        lbl = self.order_label.rstrip("+")
        return int(lbl) if lbl else 0


@dataclass(frozen=True)
class GraphScheme:
    """Coefficients of one degree-optimal evaluation graph.

    ``lhs`` and ``rhs`` each hold k rows; row j (0-based) has j + 2 entries,
    the combination coefficients of P1..P_{j+2}.  ``out`` has k + 2 entries.
    Schemes are immutable and safe to share between threads.
    """

    lhs: tuple
    rhs: tuple
    out: tuple
    meta: SchemeMeta = field(default_factory=SchemeMeta)

    def __post_init__(self):
        k = len(self.lhs)
        if len(self.rhs) != k or len(self.out) != k + 2:
            raise SchemeFormatError(
                f"inconsistent scheme shape: {k} lhs rows, {len(self.rhs)} rhs rows, "
                f"{len(self.out)} output coefficients")
        for j, (hr, gr) in enumerate(zip(self.lhs, self.rhs)):
            if len(hr) != j + 2 or len(gr) != j + 2:
                raise SchemeFormatError(f"row {j + 1} must have {j + 2} entries")
        for row in list(self.lhs) + list(self.rhs) + [self.out]:
            if not all(math.isfinite(c) for c in row):
                raise SchemeFormatError("scheme has non-finite coefficients")

    @property
    def mults(self):
        return len(self.lhs)

    @property
    def degree(self):
        return 2 ** self.mults

    @property
    def is_normalized(self):
        """First row pinned to (0, 1) x (0, 1), i.e. P3 = A^2 exactly."""
        return (self.lhs[0] == (0.0, 1.0)) and (self.rhs[0] == (0.0, 1.0))


def _combine(coeffs, values, ident):
    """sum_i coeffs[i] * P_i with P1 = I handled as a diagonal shift."""
    n = ident.shape[0]
    dtype = np.result_type(ident.dtype, *(np.float64,))
    acc = np.zeros((n, n), dtype=values[0].dtype if values else dtype)
    for c, P in zip(coeffs[1:], values):
        if c != 0.0:
            acc = acc + c * P
    if coeffs[0] != 0.0:
        acc = acc + coeffs[0] * ident
    return acc


def eval_degopt(scheme, A, counter=None, first_product=None):
    """Evaluate the scheme's polynomial at a square matrix.

    Uses exactly ``scheme.mults`` matrix products; identity terms enter as
    diagonal shifts, never as products.  When the caller already holds
    A^2 (``first_product``) and the scheme is normalized, the first product
    is reused instead of recomputed, which is the one-product saving the
    logarithm driver relies on after square roots.
    """
    A = as_square(A)
    ident = identity_like(A)
    values = [A]
    start = 0
    if first_product is not None:
        if not scheme.is_normalized:
            raise ValueError("first_product reuse requires a normalized scheme")
        values.append(first_product)
        start = 1
    for j in range(start, scheme.mults):
        left = _combine(scheme.lhs[j], values, ident)
        right = _combine(scheme.rhs[j], values, ident)
        values.append(mat_mul(left, right, counter))
    return _combine(scheme.out, values, ident)


def eval_taylor_low(k, A, counter=None):
    """Taylor-matching approximation of -log(I - A) with k in {1, 2, 3, 4}
    products (orders 2, 4, 8 and 14+)."""
    if k not in (1, 2, 3, 4):
        raise ValueError(f"eval_taylor_low supports k in 1..4, got {k}")
    return eval_degopt(builtin_scheme(k), A, counter)


def paterson_stockmeyer(coeffs, A, counter=None):
    """Evaluate sum_i coeffs[i] * A^i by the Paterson-Stockmeyer method.

    The chunk size is chosen to minimize the product count
    (ceil(m/tau) + tau - 2 for degree m); the constant term costs nothing.
    This is the cost/accuracy baseline the graph schemes are measured
    against.
    """
    coeffs = [float(c) for c in coeffs]
    if not coeffs:
        raise ValueError("empty coefficient list")
    A = as_square(A)
    ident = identity_like(A)
    m = len(coeffs) - 1
    if m <= 0:
        return coeffs[0] * ident

    def cost(tau):
        return (tau - 1) + (math.ceil(m / tau) - 1)

    tau = min(range(1, m + 1), key=cost)
    powers = [None, A]
    for _ in range(tau - 1):
        powers.append(mat_mul(powers[-1], A, counter))

    def chunk(lo):
        # sum over powers 1..tau of coeffs[lo + i] * A^i, truncated at m
        acc = np.zeros_like(A)
        for i in range(1, tau + 1):
            if lo + i <= m and coeffs[lo + i] != 0.0:
                acc = acc + coeffs[lo + i] * powers[i]
        return acc

    nchunks = math.ceil(m / tau)
    acc = chunk((nchunks - 1) * tau)
    for l in range(nchunks - 2, -1, -1):
        acc = mat_mul(acc, powers[tau], counter) + chunk(l * tau)
    if coeffs[0] != 0.0:
        acc = acc + coeffs[0] * ident
    return acc


def ps_product_count(m):
    """Matrix products Paterson-Stockmeyer needs for a degree-m polynomial."""
    if m <= 1:
        return 0
    return min((tau - 1) + (math.ceil(m / tau) - 1) for tau in range(1, m + 1))


def normalize_scheme(scheme):
    """Return an equivalent scheme whose first row is (0, 1) x (0, 1).

    The represented polynomial is unchanged: the first product is rescaled
    and its constant/linear parts are folded into the coefficients of every
    later occurrence of P3.
    """
    h1 = list(scheme.lhs[0])
    g1 = list(scheme.rhs[0])
    if h1[1] == 0.0 or g1[1] == 0.0:
        raise NormalizationError(
            "first product row is degree-deficient (zero P2 coefficient)")
    lhs = [list(r) for r in scheme.lhs]
    rhs = [list(r) for r in scheme.rhs]
    out = list(scheme.out)

    gamma = h1[1] * g1[1]
    if gamma != 1.0:
        for j in range(1, scheme.mults):
            lhs[j][2] *= gamma
            rhs[j][2] *= gamma
        out[2] *= gamma
        h1 = [h1[0] / h1[1], 1.0]
        g1 = [g1[0] / g1[1], 1.0]

    # P3 = (a I + A)(b I + A) = ab I + (a + b) A + A^2; fold the low-order part
    alpha = h1[0] * g1[0]
    beta = h1[0] + g1[0]
    if alpha != 0.0 or beta != 0.0:
        for j in range(1, scheme.mults):
            lhs[j][0] += alpha * lhs[j][2]
            lhs[j][1] += beta * lhs[j][2]
            rhs[j][0] += alpha * rhs[j][2]
            rhs[j][1] += beta * rhs[j][2]
        out[0] += alpha * out[2]
        out[1] += beta * out[2]
    lhs[0] = [0.0, 1.0]
    rhs[0] = [0.0, 1.0]

    return GraphScheme(
        lhs=tuple(tuple(r) for r in lhs),
        rhs=tuple(tuple(r) for r in rhs),
        out=tuple(out),
        meta=scheme.meta,
    )


# ---------------------------------------------------------------------------
# Coefficient files
# ---------------------------------------------------------------------------

def _fmt(x):
    return f"{float(x):.17g}"


def save_scheme(scheme, comment=""):
    """Serialize a scheme to the coefficient-file text format.

    Doubles are written with 17 significant digits, so a save/load round
    trip is bit exact.
    """
    lines = ["# logmpoly evaluation-scheme coefficients"]
    for ln in (comment or scheme.meta.provenance).splitlines():
        lines.append(f"# {ln}")
    lines.append(f"k {scheme.mults}")
    lines.append(f"m_order {scheme.meta.order_label or scheme.degree}")
    lines.append(f"degree {scheme.meta.degree or scheme.degree}")
    lines.append(f"radius {_fmt(scheme.meta.radius)}")
    lines.append(f"target {scheme.meta.target}")
    lines.append("H")
    for row in scheme.lhs:
        lines.append(" ".join(_fmt(c) for c in row))
    lines.append("G")
    for row in scheme.rhs:
        lines.append(" ".join(_fmt(c) for c in row))
    lines.append("y")
    lines.append(" ".join(_fmt(c) for c in scheme.out))
    return "\n".join(lines) + "\n"


def load_scheme(text):
    """Parse the coefficient-file format produced by ``save_scheme``."""
    lines = [ln.strip() for ln in text.splitlines()
             if ln.strip() and not ln.strip().startswith("#")]
    fields = {}
    i = 0
    while i < len(lines) and lines[i].split()[0] not in ("H", "G", "y"):
        parts = lines[i].split(None, 1)
        if len(parts) != 2:
            raise SchemeFormatError(f"malformed header line: {lines[i]!r}")
        fields[parts[0]] = parts[1]
        i += 1
    try:
        k = int(fields["k"])
    except (KeyError, ValueError) as exc:
        raise SchemeFormatError("missing or malformed 'k' field") from exc

    def read_block(tag, nrows):
        nonlocal i
        if i >= len(lines) or lines[i] != tag:
            raise SchemeFormatError(f"expected '{tag}' block")
        i += 1
        rows = []
        for r in range(nrows):
            if i >= len(lines):
                raise SchemeFormatError(f"'{tag}' block truncated")
            toks = lines[i].split()
            if len(toks) != r + 2:
                raise SchemeFormatError(
                    f"'{tag}' row {r + 1} must have {r + 2} entries, got {len(toks)}")
            try:
                rows.append(tuple(float(t) for t in toks))
            except ValueError as exc:
                raise SchemeFormatError(f"malformed coefficient in '{tag}' row") from exc
            i += 1
        return tuple(rows)

    lhs = read_block("H", k)
    rhs = read_block("G", k)
    if i >= len(lines) or lines[i] != "y":
        raise SchemeFormatError("missing 'y' block")
    i += 1
    if i >= len(lines):
        raise SchemeFormatError("missing 'y' coefficients")
    toks = lines[i].split()
    if len(toks) != k + 2:
        raise SchemeFormatError(f"'y' must have {k + 2} entries, got {len(toks)}")
    out = tuple(float(t) for t in toks)

    meta = SchemeMeta(
        order_label=fields.get("m_order", ""),
        degree=int(fields.get("degree", 2 ** k)),
        target=fields.get("target", "neglog1m"),
        radius=float(fields.get("radius", 0.0)),
    )
    return GraphScheme(lhs=lhs, rhs=rhs, out=out, meta=meta)


def read_scheme(path):
    with open(path) as fh:
        return load_scheme(fh.read())


def write_scheme(path, scheme, comment=""):
    with open(path, "w") as fh:
        fh.write(save_scheme(scheme, comment))


_BUILTIN_CACHE = {}


def builtin_scheme(k):
    """The shipped evaluation scheme with k products (k = 1..9)."""
    if k in _BUILTIN_CACHE:
        return _BUILTIN_CACHE[k]
    name = f"scheme_k{k}.txt"
    try:
        text = resources.files(_COEFF_PACKAGE).joinpath(name).read_text()
    except FileNotFoundError as exc:
        raise ValueError(f"no built-in scheme for k={k}") from exc
    scheme = load_scheme(text)
    if scheme.mults != k:
        raise SchemeFormatError(f"built-in file {name} has k={scheme.mults}")
    _BUILTIN_CACHE[k] = scheme
    return scheme


def available_builtin_ks():
    ks = []
    for k in range(1, 16):
        if resources.files(_COEFF_PACKAGE).joinpath(f"scheme_k{k}.txt").is_file():
            ks.append(k)
    return ks
