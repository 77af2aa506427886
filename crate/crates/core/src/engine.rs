//! Wealth recursion, weighted growth rate, and the compensator.
//!
//! One betting round multiplies wealth by `1 + stake * g / wealth`; the
//! weighted rate process accumulates `phi * ln(wealth_next / wealth_prev)`.
//! The compensator increment `alpha` is the weighted relative entropy of the
//! outcome density against the reference weighting; subtracting the
//! accumulated compensator from the rate process yields the process whose
//! supermartingale/martingale behaviour the oracle and Monte Carlo suites
//! verify.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market::{DiscreteMarket, GaussianMarket, GridMarket, Market, WeightFn};
use crate::quadrature::{discretize_gaussian_market, integrate, GridSpec};
use crate::strategy::{History, Strategy};
use crate::tolerances;

/// How an `alpha` value was computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AlphaMethod {
    ClosedForm,
    Quadrature,
    ExactSum,
}

/// Optimal one-round weighted growth rate, in nats.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AlphaValue {
    pub value: f64,
    pub method: AlphaMethod,
    /// Zero for exact sums and closed forms; refinement change or standard
    /// error for quadrature values.
    pub error_estimate: f64,
}

/// One wealth path with its rate and compensator processes.
///
/// `wealth` holds `Z_0..Z_n`; `rate`, `compensator`, and `outcomes` hold the
/// per-step values for steps `1..n`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Trajectory {
    pub wealth: Vec<f64>,
    pub rate: Vec<f64>,
    pub compensator: Vec<f64>,
    pub outcomes: Vec<f64>,
}

impl Trajectory {
    /// Number of completed steps.
    pub fn len(&self) -> usize {
        self.outcomes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outcomes.is_empty()
    }

    pub fn final_wealth(&self) -> f64 {
        *self.wealth.last().expect("wealth holds at least Z_0")
    }

    /// Final value of the weighted rate process (0 for an empty path).
    pub fn final_rate(&self) -> f64 {
        self.rate.last().copied().unwrap_or(0.0)
    }

    /// Compensated rate `S_j - A_j` after step `j` (1-based).
    pub fn compensated_rate(&self, j: usize) -> f64 {
        self.rate[j - 1] - self.compensator[j - 1]
    }

    /// Writes the path as CSV with columns
    /// `step,outcome,Z,S,A,S_minus_A`. Step 0 carries the initial wealth and
    /// an empty outcome field.
    pub fn write_csv<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        writeln!(out, "step,outcome,Z,S,A,S_minus_A")?;
        writeln!(out, "0,,{},0,0,0", self.wealth[0])?;
        for j in 0..self.len() {
            writeln!(
                out,
                "{},{},{},{},{},{}",
                j + 1,
                self.outcomes[j],
                self.wealth[j + 1],
                self.rate[j],
                self.compensator[j],
                self.rate[j] - self.compensator[j],
            )?;
        }
        Ok(())
    }
}

/// One application of the wealth recursion:
/// `Z_next = Z_prev * (1 + stake * g / Z_prev)`.
///
/// A factor that is not strictly positive would ruin the bettor and makes
/// the logarithm undefined; it aborts with a distinct error instead of
/// propagating `-inf`.
pub fn wealth_step(z_prev: f64, stake: f64, g_value: f64) -> Result<f64> {
    debug_assert!(z_prev > 0.0, "wealth must stay positive");
    let factor = 1.0 + stake * g_value / z_prev;
    if !(factor > 0.0) {
        return Err(Error::RuinViolation {
            step: 0,
            factor,
            path: Vec::new(),
        });
    }
    Ok(z_prev * factor)
}

/// Weighted rate increment `phi * ln(Z_next / Z_prev)`.
pub fn rate_increment(phi: f64, z_next: f64, z_prev: f64) -> f64 {
    debug_assert!(phi >= 0.0 && z_next > 0.0 && z_prev > 0.0);
    phi * (z_next / z_prev).ln()
}

/// Rate for a finite market: `sum_i phi_i p_i ln(p_i / b_i)`, the weighted
/// relative entropy of the outcome probabilities against the reference.
/// With the uniform reference this is `sum_i phi_i p_i ln(p_i m)`.
pub fn alpha_discrete(market: &DiscreteMarket) -> AlphaValue {
    let value = market
        .weights()
        .iter()
        .zip(market.probs())
        .zip(market.reference())
        .map(|((phi, p), b)| phi * p * (p / b).ln())
        .sum();
    AlphaValue {
        value,
        method: AlphaMethod::ExactSum,
        error_estimate: 0.0,
    }
}

fn grid_alpha_sum(market: &GridMarket) -> f64 {
    let mut sum = 0.0;
    for k in 0..market.len() {
        let f = market.density()[k];
        if f == 0.0 {
            // support convention: outside the density support the term is 0
            continue;
        }
        let w = market.quad_weights()[k];
        let phi = market.weights()[k];
        let b = market.reference()[k];
        sum += w * phi * f * (f / b).ln();
    }
    sum
}

/// Rate for a grid market: `sum_k w_k phi_k f_k ln(f_k / b_k)` over the
/// support of the density.
///
/// Grids carrying discretization provenance are re-discretized at double
/// resolution to estimate the error; a change above the quadrature tolerance
/// is reported as non-convergence. Grids without provenance are taken as
/// exact finite objects.
pub fn alpha_general(market: &GridMarket) -> Result<AlphaValue> {
    let value = grid_alpha_sum(market);
    match market.source() {
        Some(source) => {
            let refined = discretize_gaussian_market(&source.market, &source.spec.refined())?;
            let error_estimate = (grid_alpha_sum(&refined) - value).abs();
            if error_estimate > tolerances::QUADRATURE {
                return Err(Error::QuadratureNotConverged {
                    error_estimate,
                    tolerance: tolerances::QUADRATURE,
                });
            }
            Ok(AlphaValue {
                value,
                method: AlphaMethod::Quadrature,
                error_estimate,
            })
        }
        None => Ok(AlphaValue {
            value,
            method: AlphaMethod::ExactSum,
            error_estimate: 0.0,
        }),
    }
}

/// Rate for a Gaussian market.
///
/// For a constant weight the value is closed-form:
/// `c/2 * (tr(S0^{-1} S) - d + ln det(S0 S^{-1}))`. Other weights integrate
/// `phi(x)/2 * (x^T (S0^{-1} - S^{-1}) x + ln det(S0 S^{-1}))` against the
/// outcome law with the default node scheme.
pub fn alpha_gaussian(market: &GaussianMarket) -> Result<AlphaValue> {
    alpha_gaussian_with(market, &GridSpec::default())
}

/// [`alpha_gaussian`] with an explicit node scheme for the quadrature path.
pub fn alpha_gaussian_with(market: &GaussianMarket, spec: &GridSpec) -> Result<AlphaValue> {
    let f = market.density();
    let b = market.reference_density();
    let log_det_ratio = b.log_det() - f.log_det();
    match market.weight_fn() {
        WeightFn::One | WeightFn::Constant(_) => {
            let c = market.weight_at(&vec![0.0; market.dim()]);
            let trace = (b.precision() * f.cov()).trace();
            let value = 0.5 * c * (trace - market.dim() as f64 + log_det_ratio);
            Ok(AlphaValue {
                value,
                method: AlphaMethod::ClosedForm,
                error_estimate: 0.0,
            })
        }
        _ => {
            let quad_diff = |x: &[f64]| b.quad_form(x) - f.quad_form(x);
            let integrand =
                |x: &[f64]| market.weight_at(x) * 0.5 * (quad_diff(x) + log_det_ratio);
            let (value, error_estimate) = integrate(integrand, f, spec)?;
            Ok(AlphaValue {
                value,
                method: AlphaMethod::Quadrature,
                error_estimate,
            })
        }
    }
}

/// Rate for any loadable market.
pub fn alpha_for(market: &Market) -> Result<AlphaValue> {
    match market {
        Market::Discrete(m) => Ok(alpha_discrete(m)),
        Market::Gaussian(m) => alpha_gaussian(m),
    }
}

/// Runs the wealth recursion along a fixed outcome sequence of length `n`
/// and returns the full path with rate and compensator columns.
pub fn run_trajectory(
    market: &DiscreteMarket,
    strategy: &Strategy,
    n: usize,
    outcome_sequence: &[usize],
    z_0: f64,
) -> Result<Trajectory> {
    if outcome_sequence.len() != n {
        return Err(Error::LengthMismatch {
            field: "outcome_sequence",
            expected: n,
            got: outcome_sequence.len(),
        });
    }
    if !(z_0 > 0.0) || !z_0.is_finite() {
        return Err(Error::NonFiniteInput { field: "Z_0" });
    }
    let alpha = alpha_discrete(market).value;
    let mut wealth = Vec::with_capacity(n + 1);
    let mut rate = Vec::with_capacity(n);
    let mut compensator = Vec::with_capacity(n);
    let mut outcomes = Vec::with_capacity(n);
    wealth.push(z_0);
    let mut s = 0.0;
    for (j, &idx) in outcome_sequence.iter().enumerate() {
        if idx >= market.m() {
            return Err(Error::OutcomeIndexOutOfRange {
                index: idx,
                m: market.m(),
            });
        }
        let z_prev = wealth[j];
        let stake = strategy.stake(&History::Indices(&outcome_sequence[..j]), z_prev)?;
        let z_next = wealth_step(z_prev, stake, market.outcomes()[idx]).map_err(|e| match e {
            Error::RuinViolation { factor, .. } => Error::RuinViolation {
                step: j + 1,
                factor,
                path: outcome_sequence[..=j].to_vec(),
            },
            other => other,
        })?;
        s += rate_increment(market.weights()[idx], z_next, z_prev);
        wealth.push(z_next);
        rate.push(s);
        compensator.push(alpha * (j + 1) as f64);
        outcomes.push(market.outcomes()[idx]);
    }
    Ok(Trajectory {
        wealth,
        rate,
        compensator,
        outcomes,
    })
}
