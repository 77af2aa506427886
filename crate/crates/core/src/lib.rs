//! Weighted log-optimal betting engine.
//!
//! The crate builds and validates betting markets (finite, Gaussian, and
//! grid-tabulated), checks the admissibility conditions under which the
//! compensated weighted growth rate is a supermartingale, computes the
//! optimal growth rate `alpha`, detects and constructs the proportional
//! martingale strategy, and verifies the supermartingale/martingale claims
//! two independent ways: exact enumeration over all outcome sequences and
//! seeded Monte Carlo.
//!
//! Module map:
//! - [`market`]: market types, validation, and the JSON configuration forms.
//! - [`conditions`]: admissibility checks and martingale feasibility.
//! - [`strategy`]: previsible stake rules and the optimal strategy.
//! - [`engine`]: wealth recursion, rate process, and `alpha` computations.
//! - [`oracle`]: exact enumeration of `E[S_n]` and conditional drifts.
//! - [`montecarlo`]: reproducible parallel simulation.
//! - [`quadrature`]: Gaussian integration schemes and market discretization.
//! - [`tolerances`]: every numerical threshold, centralized.

pub mod conditions;
pub mod engine;
pub mod error;
pub mod market;
pub mod montecarlo;
pub mod oracle;
pub mod quadrature;
pub mod rng;
pub mod strategy;
pub mod tolerances;

pub use conditions::{
    check_orthogonality, check_reference_mass, condition_report, construct_return_gaussian,
    martingale_feasibility, martingale_feasibility_grid, ConditionReport, FeasibilityResult,
};
pub use engine::{
    alpha_discrete, alpha_for, alpha_gaussian, alpha_general, rate_increment, run_trajectory,
    wealth_step, AlphaMethod, AlphaValue, Trajectory,
};
pub use error::{Error, Result};
pub use market::{
    uniform_reference, DiscreteMarket, GaussianDensity, GaussianMarket, GaussianReturn,
    GridMarket, Market, MarketSpec, ReturnFn, ValidationReport, WeightFn,
};
pub use montecarlo::{
    drift_test, dump_paths_csv, simulate, simulate_with, DriftReport, RuinPolicy,
    SimulationConfig, SimulationReport,
};
pub use oracle::{
    conditional_drift, exact_expected_rate, exact_expected_rate_with, sweep_fraction,
    EnumerationOptions, ExactResult, SweepPoint,
};
pub use quadrature::{discretize_gaussian_market, hermite_rule, integrate, GridSpec};
pub use strategy::{constant_fraction, optimal_strategy, History, Strategy, StrategySpec};
