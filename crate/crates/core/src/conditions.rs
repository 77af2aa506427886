//! Admissibility condition checks and martingale feasibility.
//!
//! Two conditions make the compensated growth process a supermartingale for
//! every admissible strategy: the weighted reference must be orthogonal to
//! the return function, and the weighted reference mass must not exceed the
//! expected weight. Both are checked in their direct integral form for every
//! market kind.
//!
//! Feasibility asks the sharper question: does a single betting fraction `D`
//! make the compensated process a martingale? That happens exactly when the
//! outcome density factors through the reference as `f = b (1 + D g)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market::{
    DiscreteMarket, GaussianDensity, GaussianMarket, GaussianReturn, GridMarket, Market,
};
use crate::quadrature::{integrate, GridSpec};
use crate::tolerances;

/// Residuals and verdicts for the two admissibility conditions.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConditionReport {
    /// Signed value of the weighted orthogonality sum/integral; zero when
    /// the condition holds.
    pub orthogonality_residual: f64,
    pub orthogonality_passed: bool,
    /// Weighted reference mass.
    pub mass_lhs: f64,
    /// Expected weight under the outcome law.
    pub mass_rhs: f64,
    pub mass_passed: bool,
    pub tolerance_used: f64,
    /// Total reference mass. The reference is a positive weighting, not
    /// necessarily a probability; a total different from 1 is reported here
    /// and never renormalized.
    pub reference_total: f64,
    /// Gaussian markets only: the orthogonality integral taken against the
    /// product of the two Gaussian kernels instead of the reference alone.
    /// The two forms disagree in general; this one is reported as a
    /// diagnostic and does not enter the verdict.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aux_orthogonality_residual: Option<f64>,
}

impl ConditionReport {
    pub fn all_passed(&self) -> bool {
        self.orthogonality_passed && self.mass_passed
    }
}

/// Outcome of the martingale feasibility test.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeasibilityResult {
    pub feasible: bool,
    /// The common betting fraction, present only when feasible.
    #[serde(rename = "D", default, skip_serializing_if = "Option::is_none")]
    pub d: Option<f64>,
    /// Per-outcome fraction candidates. Outcomes whose candidate is
    /// structurally unconstrained (zero return with matching mass) are
    /// omitted.
    #[serde(rename = "per_outcome_D")]
    pub per_outcome_d: Vec<f64>,
    /// Spread `max - min` of the candidates.
    pub max_spread: f64,
    pub tolerance_used: f64,
}

/// Orthogonality residual `sum_i phi_i b_i E_i` of a finite market.
pub fn check_orthogonality_discrete(market: &DiscreteMarket) -> f64 {
    market
        .weights()
        .iter()
        .zip(market.reference())
        .zip(market.outcomes())
        .map(|((phi, b), e)| phi * b * e)
        .sum()
}

/// Orthogonality residual `sum_k w_k phi_k b_k g_k` of a grid market.
pub fn check_orthogonality_grid(market: &GridMarket) -> f64 {
    market
        .quad_weights()
        .iter()
        .zip(market.weights())
        .zip(market.reference())
        .zip(market.returns())
        .map(|(((w, phi), b), g)| w * phi * b * g)
        .sum()
}

fn orthogonality_gaussian(market: &GaussianMarket, spec: &GridSpec) -> Result<f64> {
    let integrand = |x: &[f64]| market.weight_at(x) * market.return_at(x);
    let (value, _) = integrate(integrand, market.reference_density(), spec)?;
    Ok(value)
}

/// Orthogonality residual of any loadable market. Gaussian markets are
/// integrated with the default node scheme.
pub fn check_orthogonality(market: &Market) -> Result<f64> {
    match market {
        Market::Discrete(m) => Ok(check_orthogonality_discrete(m)),
        Market::Gaussian(m) => orthogonality_gaussian(m, &GridSpec::default()),
    }
}

/// Reference-mass condition sides for a finite market:
/// `(sum_i phi_i b_i, sum_i phi_i p_i)`. The condition holds when the first
/// does not exceed the second.
pub fn check_reference_mass_discrete(market: &DiscreteMarket) -> (f64, f64) {
    let lhs = market
        .weights()
        .iter()
        .zip(market.reference())
        .map(|(phi, b)| phi * b)
        .sum();
    let rhs = market
        .weights()
        .iter()
        .zip(market.probs())
        .map(|(phi, p)| phi * p)
        .sum();
    (lhs, rhs)
}

/// Reference-mass condition sides for a grid market.
pub fn check_reference_mass_grid(market: &GridMarket) -> (f64, f64) {
    let lhs = market
        .quad_weights()
        .iter()
        .zip(market.weights())
        .zip(market.reference())
        .map(|((w, phi), b)| w * phi * b)
        .sum();
    let rhs = market
        .quad_weights()
        .iter()
        .zip(market.weights())
        .zip(market.density())
        .map(|((w, phi), f)| w * phi * f)
        .sum();
    (lhs, rhs)
}

fn reference_mass_gaussian(market: &GaussianMarket, spec: &GridSpec) -> Result<(f64, f64)> {
    let weight = |x: &[f64]| market.weight_at(x);
    let (lhs, _) = integrate(weight, market.reference_density(), spec)?;
    let (rhs, _) = integrate(weight, market.density(), spec)?;
    Ok((lhs, rhs))
}

/// Reference-mass condition sides for any loadable market.
pub fn check_reference_mass(market: &Market) -> Result<(f64, f64)> {
    match market {
        Market::Discrete(m) => Ok(check_reference_mass_discrete(m)),
        Market::Gaussian(m) => reference_mass_gaussian(m, &GridSpec::default()),
    }
}

/// Diagnostic orthogonality variant for Gaussian markets: the weighted
/// return integrated against `exp(-x^T (S^-1 + S0^-1) x / 2)`, the product
/// of the two unnormalized Gaussian kernels.
fn aux_orthogonality_gaussian(market: &GaussianMarket, spec: &GridSpec) -> Result<f64> {
    let combined_precision = market.density().precision() + market.reference_density().precision();
    let combined_cov = combined_precision
        .clone()
        .try_inverse()
        .ok_or(Error::NotPositiveDefinite { which: "sigma" })?;
    let kernel_law = GaussianDensity::new(combined_cov, "sigma")?;
    // kernel = (2 pi)^{d/2} det^{1/2} * normalized density
    let norm = ((2.0 * std::f64::consts::PI).powf(kernel_law.dim() as f64 / 2.0))
        * (0.5 * kernel_law.log_det()).exp();
    let integrand = |x: &[f64]| market.weight_at(x) * market.return_at(x);
    let (value, _) = integrate(integrand, &kernel_law, spec)?;
    Ok(norm * value)
}

fn report_from_parts(
    orthogonality_residual: f64,
    mass_lhs: f64,
    mass_rhs: f64,
    reference_total: f64,
    aux: Option<f64>,
) -> ConditionReport {
    let tol = tolerances::CONDITION;
    ConditionReport {
        orthogonality_residual,
        orthogonality_passed: orthogonality_residual.abs() <= tol,
        mass_lhs,
        mass_rhs,
        mass_passed: mass_lhs <= mass_rhs + tol,
        tolerance_used: tol,
        reference_total,
        aux_orthogonality_residual: aux,
    }
}

/// Runs both admissibility checks and assembles a self-describing report.
pub fn condition_report(market: &Market) -> Result<ConditionReport> {
    match market {
        Market::Discrete(m) => {
            let resid = check_orthogonality_discrete(m);
            let (lhs, rhs) = check_reference_mass_discrete(m);
            let total = m.reference().iter().sum();
            Ok(report_from_parts(resid, lhs, rhs, total, None))
        }
        Market::Gaussian(m) => {
            let spec = GridSpec::default();
            let resid = orthogonality_gaussian(m, &spec)?;
            let (lhs, rhs) = reference_mass_gaussian(m, &spec)?;
            let aux = aux_orthogonality_gaussian(m, &spec)?;
            Ok(report_from_parts(resid, lhs, rhs, 1.0, Some(aux)))
        }
    }
}

/// Report for a grid market.
pub fn condition_report_grid(market: &GridMarket) -> ConditionReport {
    let resid = check_orthogonality_grid(market);
    let (lhs, rhs) = check_reference_mass_grid(market);
    let total = market
        .quad_weights()
        .iter()
        .zip(market.reference())
        .map(|(w, b)| w * b)
        .sum();
    report_from_parts(resid, lhs, rhs, total, None)
}

fn assemble_feasibility(
    candidates: Vec<f64>,
    tolerance: f64,
    positivity: impl Fn(f64) -> bool,
) -> FeasibilityResult {
    let max = candidates.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = candidates.iter().cloned().fold(f64::INFINITY, f64::min);
    let max_spread = max - min;
    let mean = candidates.iter().sum::<f64>() / candidates.len() as f64;
    let in_range = mean >= -tolerance && mean <= 1.0 + tolerance;
    let d = mean.clamp(0.0, 1.0);
    let feasible = max_spread <= tolerance && in_range && positivity(d);
    FeasibilityResult {
        feasible,
        d: feasible.then_some(d),
        per_outcome_d: candidates,
        max_spread,
        tolerance_used: tolerance,
    }
}

/// Tests whether one constant betting fraction turns the compensated growth
/// process into a martingale on a finite market.
///
/// The candidates are `(m p_i - 1) / E_i`, the uniform-reference form: the
/// finite specialization always measures the outcome law against the uniform
/// weighting `1/m`, so the stored reference influences condition residuals
/// and the growth rate but never feasibility. A zero-return outcome is
/// unconstrained when `m p_i = 1` (the density already matches the reference
/// there) and makes the market infeasible otherwise.
pub fn martingale_feasibility(market: &DiscreteMarket) -> Result<FeasibilityResult> {
    let m = market.m() as f64;
    let tol = tolerances::FEASIBILITY_DISCRETE;
    let mut candidates = Vec::with_capacity(market.m());
    for (i, (&e, &p)) in market.outcomes().iter().zip(market.probs()).enumerate() {
        if e == 0.0 {
            if (m * p - 1.0).abs() > tol {
                return Err(Error::ZeroReturnOutcome { index: i, prob: p });
            }
            continue;
        }
        candidates.push((m * p - 1.0) / e);
    }
    let outcomes = market.outcomes();
    Ok(assemble_feasibility(candidates, tol, |d| {
        outcomes.iter().all(|&e| 1.0 + d * e > 0.0)
    }))
}

/// Grid-market variant: candidates `(f_k / b_k - 1) / g_k` over nodes inside
/// the support of the density whose return is distinguishable from zero.
pub fn martingale_feasibility_grid(market: &GridMarket) -> Result<FeasibilityResult> {
    let tol = tolerances::FEASIBILITY_GRID;
    let mut candidates = Vec::new();
    for k in 0..market.len() {
        let f = market.density()[k];
        if f == 0.0 {
            continue;
        }
        let g = market.returns()[k];
        if g.abs() <= tolerances::RETURN_SUPPORT {
            continue;
        }
        candidates.push((f / market.reference()[k] - 1.0) / g);
    }
    if candidates.is_empty() {
        return Err(Error::AllReturnsNearZero {
            threshold: tolerances::RETURN_SUPPORT,
        });
    }
    let density = market.density();
    let returns = market.returns();
    Ok(assemble_feasibility(candidates, tol, |d| {
        density
            .iter()
            .zip(returns)
            .all(|(&f, &g)| f == 0.0 || 1.0 + d * g > 0.0)
    }))
}

/// Builds the return function that makes the constant fraction `d` a
/// martingale strategy for the Gaussian market with outcome covariance
/// `sigma` and reference covariance `sigma0`. `d` must lie strictly inside
/// (0, 1).
pub fn construct_return_gaussian(
    sigma: &nalgebra::DMatrix<f64>,
    sigma0: &nalgebra::DMatrix<f64>,
    d: f64,
) -> Result<GaussianReturn> {
    let f = GaussianDensity::new(sigma.clone(), "sigma")?;
    let b = GaussianDensity::new(sigma0.clone(), "sigma0")?;
    GaussianReturn::new(&f, &b, d)
}
