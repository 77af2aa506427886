//! Centralized numerical tolerances.
//!
//! Every threshold used by market validation, condition checks, feasibility
//! decisions, and statistical acceptance is defined here, so that reports can
//! state exactly which tolerance they applied and tests never invent ad-hoc
//! magic numbers.

/// Absolute tolerance on probability mass sums.
///
/// Market inputs are exact user-provided decimals, so a tight bound catches
/// genuine typos without false positives from rounding.
pub const PROB_SUM: f64 = 1e-12;

/// Elementwise tolerance for deciding whether two covariance matrices are
/// equal. Gaussian markets require the outcome and reference covariances to
/// differ in at least one entry by more than this.
pub const COV_EQUALITY: f64 = 1e-12;

/// Absolute tolerance on admissibility-condition residuals (orthogonality
/// and reference-mass checks). Exact arithmetic on 64-bit floats keeps honest
/// residuals far below this.
pub const CONDITION: f64 = 1e-9;

/// Tolerance on the spread of per-outcome optimal-fraction candidates for
/// finite markets, where the candidates are exact arithmetic expressions.
pub const FEASIBILITY_DISCRETE: f64 = 1e-9;

/// Tolerance on the candidate spread for grid markets, where discretization
/// noise enters through the density ratio at each node. Looser than the
/// discrete bound to absorb that noise.
pub const FEASIBILITY_GRID: f64 = 1e-6;

/// Convergence tolerance for quadrature refinement: an integral whose value
/// moves by more than this when the node count doubles is reported as not
/// converged.
pub const QUADRATURE: f64 = 1e-8;

/// Threshold below which a grid return value is treated as zero when forming
/// optimal-fraction candidates. With density ratios accurate to ~1e-15, a
/// return of at least this magnitude keeps candidate noise below
/// [`FEASIBILITY_GRID`].
pub const RETURN_SUPPORT: f64 = 1e-8;

/// Default cap on the number of outcome sequences the exact enumeration
/// oracle will walk (2^24 leaves keeps worst-case runtime in seconds).
pub const ENUMERATION_CAP: u64 = 1 << 24;

/// Number of standard errors a Monte Carlo estimate may sit from its exact
/// target before a statistical check fails. Four sigma keeps the per-check
/// false-failure probability near 1e-4.
pub const MC_SIGMA: f64 = 4.0;
