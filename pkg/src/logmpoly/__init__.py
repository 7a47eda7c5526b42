"""Principal matrix logarithm via inverse scaling and squaring with
graph-based polynomial evaluation, plus the offline machinery that produces
and validates the evaluation coefficients (arbitrary-precision backward-error
thresholds, coefficient-stability indicators, min-max fitting)."""

from .matcore import (
    OpCounter,
    UNIT_ROUNDOFF,
    balance,
    eig_small,
    est_power_norm,
    expm_ref,
    format_matrix,
    lu_factor,
    lu_solve,
    mat_mul,
    onenorm,
    parse_matrix,
    read_matrix,
    unbalance,
    write_matrix,
)
from .schemes import (
    GraphScheme,
    SchemeMeta,
    builtin_scheme,
    eval_degopt,
    eval_taylor_low,
    load_scheme,
    normalize_scheme,
    paterson_stockmeyer,
    read_scheme,
    save_scheme,
    write_scheme,
)
from .sqrtm import sqrt_db
from .analysis import (
    BigSeries,
    ThetaTable,
    backward_series,
    cost_compare,
    monomial_expand,
    stability_indicator,
    tail_coeff_check,
    theta_for_order,
)
from .fit import (
    FitProblem,
    FitResult,
    fit_minmax,
    fit_moment_match,
    graph_gradient,
    scalar_graph_eval,
)
from .driver import LogmOptions, LogmReport, alpha_estimate, logm, select_order, unbalance_postprocess
from .bench import gen_test_matrices, performance_profile, relative_error, run_bench

__version__ = "0.1.0"

__all__ = [
    "OpCounter", "UNIT_ROUNDOFF", "balance", "eig_small", "est_power_norm",
    "expm_ref", "format_matrix", "lu_factor", "lu_solve", "mat_mul", "onenorm",
    "parse_matrix", "read_matrix", "unbalance", "write_matrix",
    "GraphScheme", "SchemeMeta", "builtin_scheme", "eval_degopt",
    "eval_taylor_low", "load_scheme", "normalize_scheme", "paterson_stockmeyer",
    "read_scheme", "save_scheme", "write_scheme",
    "sqrt_db",
    "BigSeries", "ThetaTable", "backward_series", "cost_compare",
    "monomial_expand", "stability_indicator", "tail_coeff_check", "theta_for_order",
    "FitProblem", "FitResult", "fit_minmax", "fit_moment_match",
    "graph_gradient", "scalar_graph_eval",
    "LogmOptions", "LogmReport", "alpha_estimate", "logm", "select_order",
    "unbalance_postprocess",
    "gen_test_matrices", "performance_profile", "relative_error", "run_bench",
]
