"""PAG robustness certification: sample sizes, robustness maps, certificates."""

from ._pagcert import (
    CertificateParams,
    MlpModel,
    MonteCarloResult,
    OracleConfig,
    PagError,
    RobustnessMap,
    SyntheticWorld,
    analytic_linear_oracle,
    binomial_upper_bound,
    build_map,
    certified_binsearch_oracle,
    certify,
    compute_kappa_max,
    evaluate_on_test,
    exact_grid_oracle,
    guarantee_bound,
    kappa_order_statistic,
    load_certificate,
    monte_carlo_quantile_uniform,
    pgd_oracle,
    quantile_index,
    quantile_index_bound,
    sample_size_satisfied,
    shift_adjusted_bound,
    solve_sample_size,
    synthetic_linear_world,
    union_bound_violation,
)

__all__ = [name for name in dir() if not name.startswith("_")]
