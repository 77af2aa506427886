//! Market models: finite-outcome games, Gaussian games, and grid markets.
//!
//! A market couples four ingredients on an outcome space: the probability law
//! of outcomes, a strictly positive reference weighting, a non-negative
//! sentiment weight scaling each outcome's contribution to the logarithmic
//! growth sum, and a per-unit-stake return. Staking `C` on a round that
//! produces outcome `x` changes wealth by `C * g(x)`.
//!
//! All market types are immutable after construction, so they can be shared
//! across threads without synchronization.

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::GridSpec;
use crate::tolerances;

/// Builds the uniform reference weighting `1/m` over `m` outcomes.
pub fn uniform_reference(m: usize) -> Result<Vec<f64>> {
    if m < 2 {
        return Err(Error::InvalidM { m });
    }
    Ok(vec![1.0 / m as f64; m])
}

fn check_finite(field: &'static str, values: &[f64]) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFiniteInput { field })
    }
}

/// One named invariant re-check with its residual and verdict.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ValidationCheck {
    pub name: String,
    /// Raw residual or margin; interpretation is given by `name`.
    pub residual: f64,
    pub tolerance: f64,
    pub passed: bool,
}

/// Result of re-running every construction invariant on a built market.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ValidationReport {
    pub market: &'static str,
    pub checks: Vec<ValidationCheck>,
    pub passed: bool,
    /// Total mass of the reference weighting. The reference is never
    /// renormalized; a total different from 1 is reported, not fixed.
    pub reference_total: f64,
}

impl ValidationReport {
    fn new(market: &'static str, checks: Vec<ValidationCheck>, reference_total: f64) -> Self {
        let passed = checks.iter().all(|c| c.passed);
        ValidationReport {
            market,
            checks,
            passed,
            reference_total,
        }
    }
}

/// Finite market: `m >= 2` distinct outcome returns with strictly positive
/// probabilities, non-negative sentiment weights, and a strictly positive
/// reference weighting.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteMarket {
    outcomes: Vec<f64>,
    probs: Vec<f64>,
    weights: Vec<f64>,
    reference: Vec<f64>,
}

impl DiscreteMarket {
    /// Validates and builds a finite market. Outcome order is preserved
    /// exactly as given; values are never sorted or normalized.
    pub fn build(
        outcomes: Vec<f64>,
        probs: Vec<f64>,
        weights: Vec<f64>,
        reference: Vec<f64>,
    ) -> Result<Self> {
        Self::build_impl(outcomes, probs, weights, reference, false)
    }

    /// Like [`build`](Self::build) but permits several outcome labels to pay
    /// the same return value. Everything downstream indexes outcomes by
    /// position, so shared values are sound; the default constructor still
    /// rejects them as a guard against input typos.
    pub fn build_with_shared_returns(
        outcomes: Vec<f64>,
        probs: Vec<f64>,
        weights: Vec<f64>,
        reference: Vec<f64>,
    ) -> Result<Self> {
        Self::build_impl(outcomes, probs, weights, reference, true)
    }

    fn build_impl(
        outcomes: Vec<f64>,
        probs: Vec<f64>,
        weights: Vec<f64>,
        reference: Vec<f64>,
        allow_shared_returns: bool,
    ) -> Result<Self> {
        let m = outcomes.len();
        if m < 2 {
            return Err(Error::InvalidM { m });
        }
        for (field, list) in [
            ("probs", &probs),
            ("weights", &weights),
            ("reference", &reference),
        ] {
            if list.len() != m {
                return Err(Error::LengthMismatch {
                    field,
                    expected: m,
                    got: list.len(),
                });
            }
        }
        check_finite("outcomes", &outcomes)?;
        check_finite("probs", &probs)?;
        check_finite("weights", &weights)?;
        check_finite("reference", &reference)?;
        for (i, &p) in probs.iter().enumerate() {
            if !(p > 0.0) {
                return Err(Error::NonPositiveProb { index: i, value: p });
            }
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > tolerances::PROB_SUM {
            return Err(Error::ProbSumError {
                sum,
                tolerance: tolerances::PROB_SUM,
            });
        }
        for (i, &w) in weights.iter().enumerate() {
            if w < 0.0 {
                return Err(Error::NegativeWeight { index: i, value: w });
            }
        }
        for (i, &b) in reference.iter().enumerate() {
            if !(b > 0.0) {
                return Err(Error::NonPositiveReference { index: i, value: b });
            }
        }
        if !allow_shared_returns {
            for i in 0..m {
                for j in (i + 1)..m {
                    if outcomes[i] == outcomes[j] {
                        return Err(Error::DuplicateOutcome { value: outcomes[i] });
                    }
                }
            }
        }
        Ok(DiscreteMarket {
            outcomes,
            probs,
            weights,
            reference,
        })
    }

    /// Number of outcomes.
    pub fn m(&self) -> usize {
        self.outcomes.len()
    }

    /// Outcome returns, in construction order.
    pub fn outcomes(&self) -> &[f64] {
        &self.outcomes
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn reference(&self) -> &[f64] {
        &self.reference
    }

    /// Most negative outcome return; the worst-case per-unit-stake loss.
    pub fn min_return(&self) -> f64 {
        self.outcomes.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    /// Re-runs every construction invariant and reports residuals.
    pub fn validate(&self) -> ValidationReport {
        let sum: f64 = self.probs.iter().sum();
        let min_p = self.probs.iter().cloned().fold(f64::INFINITY, f64::min);
        let min_w = self.weights.iter().cloned().fold(f64::INFINITY, f64::min);
        let min_b = self.reference.iter().cloned().fold(f64::INFINITY, f64::min);
        let mut min_gap = f64::INFINITY;
        for i in 0..self.m() {
            for j in (i + 1)..self.m() {
                min_gap = min_gap.min((self.outcomes[i] - self.outcomes[j]).abs());
            }
        }
        let checks = vec![
            ValidationCheck {
                name: "prob_sum".into(),
                residual: (sum - 1.0).abs(),
                tolerance: tolerances::PROB_SUM,
                passed: (sum - 1.0).abs() <= tolerances::PROB_SUM,
            },
            ValidationCheck {
                name: "prob_positive".into(),
                residual: min_p,
                tolerance: 0.0,
                passed: min_p > 0.0,
            },
            ValidationCheck {
                name: "weight_nonnegative".into(),
                residual: min_w,
                tolerance: 0.0,
                passed: min_w >= 0.0,
            },
            ValidationCheck {
                name: "reference_positive".into(),
                residual: min_b,
                tolerance: 0.0,
                passed: min_b > 0.0,
            },
            ValidationCheck {
                name: "outcomes_distinct".into(),
                residual: min_gap,
                tolerance: 0.0,
                passed: min_gap > 0.0,
            },
        ];
        let total: f64 = self.reference.iter().sum();
        ValidationReport::new("discrete", checks, total)
    }

    /// Views the market as a one-dimensional grid market with unit node
    /// weights: density = probabilities, returns = outcome values.
    pub fn to_grid(&self) -> GridMarket {
        GridMarket {
            nodes: self.outcomes.iter().map(|&e| vec![e]).collect(),
            quad_weights: vec![1.0; self.m()],
            density: self.probs.clone(),
            reference: self.reference.clone(),
            weights: self.weights.clone(),
            returns: self.outcomes.clone(),
            source: None,
        }
    }
}

/// Zero-mean Gaussian law with cached Cholesky factorization for sampling
/// and density evaluation.
#[derive(Debug, Clone)]
pub struct GaussianDensity {
    cov: DMatrix<f64>,
    chol_lower: DMatrix<f64>,
    inv: DMatrix<f64>,
    log_det: f64,
    log_norm: f64,
}

impl GaussianDensity {
    /// Builds the density from a symmetric positive-definite covariance.
    /// `which` names the matrix in error messages.
    pub fn new(cov: DMatrix<f64>, which: &'static str) -> Result<Self> {
        let d = cov.nrows();
        if d == 0 || cov.ncols() != d {
            return Err(Error::DimensionMismatch {
                expected: d.max(1),
                got: cov.ncols(),
            });
        }
        if !cov.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFiniteInput { field: "covariance" });
        }
        let asym = (&cov - cov.transpose()).abs().max();
        if asym > tolerances::COV_EQUALITY {
            return Err(Error::NotPositiveDefinite { which });
        }
        let chol = Cholesky::new(cov.clone()).ok_or(Error::NotPositiveDefinite { which })?;
        let chol_lower = chol.l();
        let log_det = 2.0 * chol_lower.diagonal().iter().map(|l| l.ln()).sum::<f64>();
        let inv = chol.inverse();
        let log_norm = 0.5 * (d as f64) * (2.0 * std::f64::consts::PI).ln() + 0.5 * log_det;
        Ok(GaussianDensity {
            cov,
            chol_lower,
            inv,
            log_det,
            log_norm,
        })
    }

    pub fn dim(&self) -> usize {
        self.cov.nrows()
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    /// Lower-triangular Cholesky factor `L` with `L L^T = cov`.
    pub fn chol_lower(&self) -> &DMatrix<f64> {
        &self.chol_lower
    }

    pub fn precision(&self) -> &DMatrix<f64> {
        &self.inv
    }

    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    /// Quadratic form `x^T cov^{-1} x`, evaluated through the Cholesky factor.
    pub fn quad_form(&self, x: &[f64]) -> f64 {
        let v = DVector::from_column_slice(x);
        let y = self
            .chol_lower
            .solve_lower_triangular(&v)
            .expect("cholesky factor is nonsingular");
        y.norm_squared()
    }

    pub fn log_pdf(&self, x: &[f64]) -> f64 {
        -0.5 * self.quad_form(x) - self.log_norm
    }

    pub fn pdf(&self, x: &[f64]) -> f64 {
        self.log_pdf(x).exp()
    }

    /// Per-coordinate standard deviation `sqrt(cov[j,j])`.
    pub fn std_dev(&self, j: usize) -> f64 {
        self.cov[(j, j)].sqrt()
    }
}

/// Sentiment weight functions accepted through configuration. Arbitrary code
/// is not accepted; only this catalog.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "WeightFnRepr", into = "WeightFnRepr")]
pub enum WeightFn {
    /// Constant weight 1; the unweighted growth-rate case.
    One,
    /// Constant non-negative weight.
    Constant(f64),
    /// Polynomial in the scalar outcome, coefficients in ascending degree.
    /// Only valid on one-dimensional markets.
    Polynomial(Vec<f64>),
    /// Indicator of an axis-aligned box; missing bounds are unbounded sides.
    IndicatorBox {
        lower: Option<Vec<f64>>,
        upper: Option<Vec<f64>>,
    },
}

impl WeightFn {
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            WeightFn::One => 1.0,
            WeightFn::Constant(c) => *c,
            WeightFn::Polynomial(coeffs) => horner(coeffs, x[0]),
            WeightFn::IndicatorBox { lower, upper } => {
                let inside = x.iter().enumerate().all(|(j, &xj)| {
                    lower.as_ref().is_none_or(|lo| xj >= lo[j])
                        && upper.as_ref().is_none_or(|hi| xj <= hi[j])
                });
                if inside {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    fn validate(&self, dim: usize) -> Result<()> {
        match self {
            WeightFn::One => Ok(()),
            WeightFn::Constant(c) => {
                if *c < 0.0 || !c.is_finite() {
                    Err(Error::NegativeWeight {
                        index: 0,
                        value: *c,
                    })
                } else {
                    Ok(())
                }
            }
            WeightFn::Polynomial(coeffs) => {
                check_finite("weight polynomial", coeffs)?;
                if dim != 1 {
                    return Err(Error::DimensionMismatch {
                        expected: 1,
                        got: dim,
                    });
                }
                Ok(())
            }
            WeightFn::IndicatorBox { lower, upper } => {
                for side in [lower, upper].into_iter().flatten() {
                    check_finite("box bound", side)?;
                    if side.len() != dim {
                        return Err(Error::DimensionMismatch {
                            expected: dim,
                            got: side.len(),
                        });
                    }
                }
                Ok(())
            }
        }
    }
}

fn horner(coeffs: &[f64], x: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, &c| acc * x + c)
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum WeightFnRepr {
    Name(String),
    Constant { constant: f64 },
    Poly { poly: Vec<f64> },
    Box { r#box: BoxBounds },
}

#[derive(Serialize, Deserialize)]
struct BoxBounds {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    lower: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    upper: Option<Vec<f64>>,
}

impl TryFrom<WeightFnRepr> for WeightFn {
    type Error = String;

    fn try_from(repr: WeightFnRepr) -> std::result::Result<Self, String> {
        match repr {
            WeightFnRepr::Name(name) if name == "one" => Ok(WeightFn::One),
            WeightFnRepr::Name(name) => Err(format!("unknown weight function {name:?}")),
            WeightFnRepr::Constant { constant } => Ok(WeightFn::Constant(constant)),
            WeightFnRepr::Poly { poly } => Ok(WeightFn::Polynomial(poly)),
            WeightFnRepr::Box { r#box } => Ok(WeightFn::IndicatorBox {
                lower: r#box.lower,
                upper: r#box.upper,
            }),
        }
    }
}

impl From<WeightFn> for WeightFnRepr {
    fn from(w: WeightFn) -> Self {
        match w {
            WeightFn::One => WeightFnRepr::Name("one".into()),
            WeightFn::Constant(c) => WeightFnRepr::Constant { constant: c },
            WeightFn::Polynomial(p) => WeightFnRepr::Poly { poly: p },
            WeightFn::IndicatorBox { lower, upper } => WeightFnRepr::Box {
                r#box: BoxBounds { lower, upper },
            },
        }
    }
}

/// Return functions accepted through configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ReturnFnRepr", into = "ReturnFnRepr")]
pub enum ReturnFn {
    /// The density-ratio return that makes the reference reproduce the
    /// outcome law at constant betting fraction `d`; see
    /// [`GaussianReturn`]. Serialized as `{"form":"eq24","D":d}`.
    DensityRatio { d: f64 },
    /// Linear return `g(x) = a . x`.
    Linear(Vec<f64>),
    /// Polynomial in the scalar outcome; one-dimensional markets only.
    Polynomial(Vec<f64>),
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum ReturnFnRepr {
    Form {
        form: String,
        #[serde(rename = "D")]
        d: f64,
    },
    Linear {
        linear: Vec<f64>,
    },
    Poly {
        poly: Vec<f64>,
    },
}

impl TryFrom<ReturnFnRepr> for ReturnFn {
    type Error = String;

    fn try_from(repr: ReturnFnRepr) -> std::result::Result<Self, String> {
        match repr {
            ReturnFnRepr::Form { form, d } if form == "eq24" => Ok(ReturnFn::DensityRatio { d }),
            ReturnFnRepr::Form { form, .. } => Err(format!("unknown return form {form:?}")),
            ReturnFnRepr::Linear { linear } => Ok(ReturnFn::Linear(linear)),
            ReturnFnRepr::Poly { poly } => Ok(ReturnFn::Polynomial(poly)),
        }
    }
}

impl From<ReturnFn> for ReturnFnRepr {
    fn from(r: ReturnFn) -> Self {
        match r {
            ReturnFn::DensityRatio { d } => ReturnFnRepr::Form {
                form: "eq24".into(),
                d,
            },
            ReturnFn::Linear(a) => ReturnFnRepr::Linear { linear: a },
            ReturnFn::Polynomial(p) => ReturnFnRepr::Poly { poly: p },
        }
    }
}

impl ReturnFn {
    fn validate(&self, dim: usize) -> Result<()> {
        match self {
            ReturnFn::DensityRatio { d } => {
                // open interval: the construction divides by d and the
                // boundary values collapse it
                if !(*d > 0.0 && *d < 1.0) {
                    return Err(Error::DOutOfRange { value: *d });
                }
                Ok(())
            }
            ReturnFn::Linear(a) => {
                check_finite("return coefficients", a)?;
                if a.len() != dim {
                    return Err(Error::DimensionMismatch {
                        expected: dim,
                        got: a.len(),
                    });
                }
                Ok(())
            }
            ReturnFn::Polynomial(coeffs) => {
                check_finite("return polynomial", coeffs)?;
                if dim != 1 {
                    return Err(Error::DimensionMismatch {
                        expected: 1,
                        got: dim,
                    });
                }
                Ok(())
            }
        }
    }
}

/// Return function `g(x) = (s * exp(-x^T A x / 2) - 1) / d` with
/// `A = cov_f^{-1} - cov_b^{-1}` and `s = sqrt(det(cov_b) / det(cov_f))`.
///
/// By construction `1 + d * g(x) = s * exp(-x^T A x / 2) > 0` everywhere, and
/// `reference_density(x) * (1 + d * g(x)) = outcome_density(x)`, which is
/// exactly the factorization that makes the constant-fraction strategy a
/// martingale strategy.
#[derive(Debug, Clone)]
pub struct GaussianReturn {
    exponent: DMatrix<f64>,
    scale: f64,
    fraction: f64,
}

impl GaussianReturn {
    /// Builds the return from the two covariances and the betting fraction
    /// `d`, which must lie strictly inside (0, 1).
    pub fn new(f: &GaussianDensity, b: &GaussianDensity, d: f64) -> Result<Self> {
        if !(d > 0.0 && d < 1.0) {
            return Err(Error::DOutOfRange { value: d });
        }
        if f.dim() != b.dim() {
            return Err(Error::DimensionMismatch {
                expected: f.dim(),
                got: b.dim(),
            });
        }
        let exponent = f.precision() - b.precision();
        let scale = (0.5 * (b.log_det() - f.log_det())).exp();
        Ok(GaussianReturn {
            exponent,
            scale,
            fraction: d,
        })
    }

    pub fn fraction(&self) -> f64 {
        self.fraction
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        let v = DVector::from_column_slice(x);
        let q = (self.exponent.clone() * &v).dot(&v);
        (self.scale * (-0.5 * q).exp() - 1.0) / self.fraction
    }
}

/// Gaussian market: IID zero-mean Gaussian outcomes with covariance `sigma`,
/// a Gaussian reference weighting with covariance `sigma0 != sigma`, and a
/// weight/return pair from the configuration catalog.
#[derive(Debug, Clone)]
pub struct GaussianMarket {
    f: GaussianDensity,
    b: GaussianDensity,
    weight: WeightFn,
    ret: ReturnFn,
    ratio_return: Option<GaussianReturn>,
}

impl GaussianMarket {
    pub fn build(
        sigma: DMatrix<f64>,
        sigma0: DMatrix<f64>,
        weight: WeightFn,
        ret: ReturnFn,
    ) -> Result<Self> {
        let d = sigma.nrows();
        if sigma0.nrows() != d || sigma0.ncols() != sigma.ncols() {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: sigma0.nrows(),
            });
        }
        let f = GaussianDensity::new(sigma, "sigma")?;
        let b = GaussianDensity::new(sigma0, "sigma0")?;
        let max_diff = (f.cov() - b.cov()).abs().max();
        if max_diff <= tolerances::COV_EQUALITY {
            return Err(Error::CovariancesEqual {
                tolerance: tolerances::COV_EQUALITY,
            });
        }
        weight.validate(d)?;
        ret.validate(d)?;
        let ratio_return = match &ret {
            ReturnFn::DensityRatio { d } => Some(GaussianReturn::new(&f, &b, *d)?),
            _ => None,
        };
        Ok(GaussianMarket {
            f,
            b,
            weight,
            ret,
            ratio_return,
        })
    }

    pub fn dim(&self) -> usize {
        self.f.dim()
    }

    /// Law of one outcome draw.
    pub fn density(&self) -> &GaussianDensity {
        &self.f
    }

    /// Reference weighting (also a normalized Gaussian law).
    pub fn reference_density(&self) -> &GaussianDensity {
        &self.b
    }

    pub fn weight_fn(&self) -> &WeightFn {
        &self.weight
    }

    pub fn return_fn(&self) -> &ReturnFn {
        &self.ret
    }

    pub fn weight_at(&self, x: &[f64]) -> f64 {
        self.weight.eval(x)
    }

    pub fn return_at(&self, x: &[f64]) -> f64 {
        match &self.ret {
            ReturnFn::DensityRatio { .. } => self
                .ratio_return
                .as_ref()
                .expect("cached at construction")
                .eval(x),
            ReturnFn::Linear(a) => a.iter().zip(x).map(|(ai, xi)| ai * xi).sum(),
            ReturnFn::Polynomial(coeffs) => horner(coeffs, x[0]),
        }
    }

    pub fn validate(&self) -> ValidationReport {
        let sym_f = (self.f.cov() - self.f.cov().transpose()).abs().max();
        let sym_b = (self.b.cov() - self.b.cov().transpose()).abs().max();
        let separation = (self.f.cov() - self.b.cov()).abs().max();
        let checks = vec![
            ValidationCheck {
                name: "sigma_symmetric".into(),
                residual: sym_f,
                tolerance: tolerances::COV_EQUALITY,
                passed: sym_f <= tolerances::COV_EQUALITY,
            },
            ValidationCheck {
                name: "sigma0_symmetric".into(),
                residual: sym_b,
                tolerance: tolerances::COV_EQUALITY,
                passed: sym_b <= tolerances::COV_EQUALITY,
            },
            ValidationCheck {
                // margin check: covariances must differ by more than the
                // tolerance in at least one entry
                name: "covariance_separation".into(),
                residual: separation,
                tolerance: tolerances::COV_EQUALITY,
                passed: separation > tolerances::COV_EQUALITY,
            },
        ];
        // both laws are normalized densities by construction
        ValidationReport::new("gaussian", checks, 1.0)
    }
}

/// Provenance of a grid market produced by discretization; kept so that
/// refinement-based error estimates can rebuild the grid at higher
/// resolution.
#[derive(Debug, Clone)]
pub struct GridSource {
    pub market: GaussianMarket,
    pub spec: GridSpec,
}

/// Single-round market tabulated on quadrature nodes: density, reference,
/// weight, and return values per node, with strictly positive node weights.
#[derive(Debug, Clone)]
pub struct GridMarket {
    nodes: Vec<Vec<f64>>,
    quad_weights: Vec<f64>,
    density: Vec<f64>,
    reference: Vec<f64>,
    weights: Vec<f64>,
    returns: Vec<f64>,
    source: Option<Box<GridSource>>,
}

impl GridMarket {
    pub fn build(
        nodes: Vec<Vec<f64>>,
        quad_weights: Vec<f64>,
        density: Vec<f64>,
        reference: Vec<f64>,
        weights: Vec<f64>,
        returns: Vec<f64>,
    ) -> Result<Self> {
        let k = nodes.len();
        if k == 0 {
            return Err(Error::LengthMismatch {
                field: "nodes",
                expected: 1,
                got: 0,
            });
        }
        for (field, list) in [
            ("quad_weights", &quad_weights),
            ("density", &density),
            ("reference", &reference),
            ("weights", &weights),
            ("returns", &returns),
        ] {
            if list.len() != k {
                return Err(Error::LengthMismatch {
                    field,
                    expected: k,
                    got: list.len(),
                });
            }
            check_finite(field, list)?;
        }
        for (i, &w) in quad_weights.iter().enumerate() {
            if !(w > 0.0) {
                return Err(Error::NonPositiveQuadWeight { index: i, value: w });
            }
        }
        for (i, &f) in density.iter().enumerate() {
            if f < 0.0 {
                return Err(Error::NegativeDensity { index: i, value: f });
            }
        }
        for (i, &b) in reference.iter().enumerate() {
            if !(b > 0.0) {
                return Err(Error::NonPositiveReference { index: i, value: b });
            }
        }
        for (i, &w) in weights.iter().enumerate() {
            if w < 0.0 {
                return Err(Error::NegativeWeight { index: i, value: w });
            }
        }
        let mass: f64 = quad_weights
            .iter()
            .zip(&density)
            .map(|(w, f)| w * f)
            .sum();
        if (mass - 1.0).abs() > tolerances::QUADRATURE {
            return Err(Error::ProbSumError {
                sum: mass,
                tolerance: tolerances::QUADRATURE,
            });
        }
        Ok(GridMarket {
            nodes,
            quad_weights,
            density,
            reference,
            weights,
            returns,
            source: None,
        })
    }

    pub(crate) fn with_source(mut self, source: GridSource) -> Self {
        self.source = Some(Box::new(source));
        self
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[Vec<f64>] {
        &self.nodes
    }

    pub fn quad_weights(&self) -> &[f64] {
        &self.quad_weights
    }

    pub fn density(&self) -> &[f64] {
        &self.density
    }

    pub fn reference(&self) -> &[f64] {
        &self.reference
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn returns(&self) -> &[f64] {
        &self.returns
    }

    /// Discretization provenance, when this grid came from a Gaussian market.
    pub fn source(&self) -> Option<&GridSource> {
        self.source.as_deref()
    }

    /// `sum_k w_k f_k - 1`: how far the tabulated density is from unit mass.
    /// Reported as is; the density is never renormalized.
    pub fn normalization_residual(&self) -> f64 {
        let mass: f64 = self
            .quad_weights
            .iter()
            .zip(&self.density)
            .map(|(w, f)| w * f)
            .sum();
        mass - 1.0
    }

    pub fn validate(&self) -> ValidationReport {
        let min_w = self
            .quad_weights
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min);
        let min_f = self.density.iter().cloned().fold(f64::INFINITY, f64::min);
        let min_b = self.reference.iter().cloned().fold(f64::INFINITY, f64::min);
        let min_phi = self.weights.iter().cloned().fold(f64::INFINITY, f64::min);
        let mass_residual = self.normalization_residual().abs();
        let checks = vec![
            ValidationCheck {
                name: "quad_weights_positive".into(),
                residual: min_w,
                tolerance: 0.0,
                passed: min_w > 0.0,
            },
            ValidationCheck {
                name: "density_nonnegative".into(),
                residual: min_f,
                tolerance: 0.0,
                passed: min_f >= 0.0,
            },
            ValidationCheck {
                name: "reference_positive".into(),
                residual: min_b,
                tolerance: 0.0,
                passed: min_b > 0.0,
            },
            ValidationCheck {
                name: "weight_nonnegative".into(),
                residual: min_phi,
                tolerance: 0.0,
                passed: min_phi >= 0.0,
            },
            ValidationCheck {
                name: "density_mass".into(),
                residual: mass_residual,
                tolerance: tolerances::QUADRATURE,
                passed: mass_residual <= tolerances::QUADRATURE,
            },
        ];
        let total: f64 = self
            .quad_weights
            .iter()
            .zip(&self.reference)
            .map(|(w, b)| w * b)
            .sum();
        ValidationReport::new("grid", checks, total)
    }
}

/// A loadable market: either a finite market or a Gaussian one. Grid markets
/// are derived objects and are not loaded directly.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "MarketSpec", into = "MarketSpec")]
pub enum Market {
    Discrete(DiscreteMarket),
    Gaussian(GaussianMarket),
}

impl Market {
    pub fn kind(&self) -> &'static str {
        match self {
            Market::Discrete(_) => "discrete",
            Market::Gaussian(_) => "gaussian",
        }
    }

    pub fn validate(&self) -> ValidationReport {
        match self {
            Market::Discrete(m) => m.validate(),
            Market::Gaussian(m) => m.validate(),
        }
    }
}

/// Raw serialized form of a market, exactly as written in configuration
/// files. Building a [`Market`] from it runs full validation.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum MarketSpec {
    Discrete {
        outcomes: Vec<f64>,
        probs: Vec<f64>,
        weights: Vec<f64>,
        reference: Vec<f64>,
    },
    Gaussian {
        dim: usize,
        sigma: Vec<Vec<f64>>,
        sigma0: Vec<Vec<f64>>,
        weight: WeightFn,
        #[serde(rename = "return")]
        ret: ReturnFn,
    },
}

impl MarketSpec {
    /// Validates the raw specification and builds the market.
    pub fn build(self) -> Result<Market> {
        match self {
            MarketSpec::Discrete {
                outcomes,
                probs,
                weights,
                reference,
            } => Ok(Market::Discrete(DiscreteMarket::build(
                outcomes, probs, weights, reference,
            )?)),
            MarketSpec::Gaussian {
                dim,
                sigma,
                sigma0,
                weight,
                ret,
            } => {
                let sigma = rows_to_matrix(dim, &sigma)?;
                let sigma0 = rows_to_matrix(dim, &sigma0)?;
                Ok(Market::Gaussian(GaussianMarket::build(
                    sigma, sigma0, weight, ret,
                )?))
            }
        }
    }
}

fn rows_to_matrix(dim: usize, rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    if dim == 0 || rows.len() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: rows.len(),
        });
    }
    for row in rows {
        if row.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: row.len(),
            });
        }
    }
    Ok(DMatrix::from_fn(dim, dim, |i, j| rows[i][j]))
}

fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

impl TryFrom<MarketSpec> for Market {
    type Error = Error;

    fn try_from(spec: MarketSpec) -> Result<Market> {
        spec.build()
    }
}

impl From<Market> for MarketSpec {
    fn from(market: Market) -> MarketSpec {
        match market {
            Market::Discrete(m) => MarketSpec::Discrete {
                outcomes: m.outcomes,
                probs: m.probs,
                weights: m.weights,
                reference: m.reference,
            },
            Market::Gaussian(m) => MarketSpec::Gaussian {
                dim: m.dim(),
                sigma: matrix_to_rows(m.f.cov()),
                sigma0: matrix_to_rows(m.b.cov()),
                weight: m.weight,
                ret: m.ret,
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn binary_market() -> DiscreteMarket {
        DiscreteMarket::build(
            vec![1.0, -1.0],
            vec![0.6, 0.4],
            vec![1.0, 1.0],
            vec![0.5, 0.5],
        )
        .unwrap()
    }

    #[test]
    fn builds_favorable_binary_market() {
        let m = binary_market();
        assert_eq!(m.m(), 2);
        assert_eq!(m.outcomes(), &[1.0, -1.0]);
        assert!(m.validate().passed);
    }

    #[test]
    fn builds_fair_binary_market() {
        let m = DiscreteMarket::build(
            vec![1.0, -1.0],
            vec![0.5, 0.5],
            vec![1.0, 1.0],
            vec![0.5, 0.5],
        )
        .unwrap();
        assert!(m.validate().passed);
    }

    #[test]
    fn rejects_bad_probability_sum() {
        let err = DiscreteMarket::build(
            vec![1.0, -1.0],
            vec![0.7, 0.4],
            vec![1.0, 1.0],
            vec![0.5, 0.5],
        )
        .unwrap_err();
        assert_eq!(err.name(), "ProbSumError");
    }

    #[test]
    fn rejects_negative_weight_and_bad_reference() {
        let err = DiscreteMarket::build(
            vec![1.0, -1.0],
            vec![0.6, 0.4],
            vec![1.0, -0.5],
            vec![0.5, 0.5],
        )
        .unwrap_err();
        assert_eq!(err.name(), "NegativeWeight");

        let err = DiscreteMarket::build(
            vec![1.0, -1.0],
            vec![0.6, 0.4],
            vec![1.0, 1.0],
            vec![0.5, 0.0],
        )
        .unwrap_err();
        assert_eq!(err.name(), "NonPositiveReference");
    }

    #[test]
    fn rejects_zero_probability_and_duplicates() {
        let err = DiscreteMarket::build(
            vec![1.0, -1.0, 2.0],
            vec![0.5, 0.5, 0.0],
            vec![1.0; 3],
            vec![1.0 / 3.0; 3],
        )
        .unwrap_err();
        assert_eq!(err.name(), "NonPositiveProb");

        let err = DiscreteMarket::build(
            vec![1.0, 1.0],
            vec![0.5, 0.5],
            vec![1.0, 1.0],
            vec![0.5, 0.5],
        )
        .unwrap_err();
        assert_eq!(err.name(), "DuplicateOutcome");
    }

    #[test]
    fn uniform_reference_values() {
        assert_eq!(uniform_reference(2).unwrap(), vec![0.5, 0.5]);
        assert_eq!(uniform_reference(4).unwrap(), vec![0.25; 4]);
        assert_eq!(uniform_reference(1).unwrap_err().name(), "InvalidM");
    }

    #[test]
    fn build_preserves_outcome_order() {
        let m = DiscreteMarket::build(
            vec![3.0, -1.0, 0.5],
            vec![0.2, 0.3, 0.5],
            vec![1.0, 2.0, 0.0],
            vec![0.1, 0.2, 0.3],
        )
        .unwrap();
        assert_eq!(m.outcomes(), &[3.0, -1.0, 0.5]);
        assert_eq!(m.weights(), &[1.0, 2.0, 0.0]);
        // reference mass is reported, never normalized
        assert_relative_eq!(m.validate().reference_total, 0.6);
    }

    #[test]
    fn gaussian_market_examples() {
        let m = GaussianMarket::build(
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, 2.0),
            WeightFn::One,
            ReturnFn::DensityRatio { d: 0.5 },
        )
        .unwrap();
        assert_eq!(m.dim(), 1);
        assert!(m.validate().passed);

        let err = GaussianMarket::build(
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, 1.0),
            WeightFn::One,
            ReturnFn::Linear(vec![1.0]),
        )
        .unwrap_err();
        assert_eq!(err.name(), "CovariancesEqual");

        let m = GaussianMarket::build(
            DMatrix::identity(2, 2),
            DMatrix::identity(2, 2) * 2.0,
            WeightFn::One,
            ReturnFn::Linear(vec![1.0, 0.0]),
        )
        .unwrap();
        assert!(m.validate().passed);
    }

    #[test]
    fn gaussian_market_rejects_bad_matrices() {
        let err = GaussianMarket::build(
            DMatrix::from_element(1, 1, -1.0),
            DMatrix::from_element(1, 1, 2.0),
            WeightFn::One,
            ReturnFn::Linear(vec![1.0]),
        )
        .unwrap_err();
        assert_eq!(err.name(), "NotPositiveDefinite");

        let err = GaussianMarket::build(
            DMatrix::identity(2, 2),
            DMatrix::from_element(1, 1, 2.0),
            WeightFn::One,
            ReturnFn::Linear(vec![1.0, 0.0]),
        )
        .unwrap_err();
        assert_eq!(err.name(), "DimensionMismatch");
    }

    #[test]
    fn gaussian_density_matches_scalar_formula() {
        let g = GaussianDensity::new(DMatrix::from_element(1, 1, 2.0), "sigma").unwrap();
        let x = 0.7_f64;
        let expected = (-x * x / 4.0).exp() / (4.0 * std::f64::consts::PI).sqrt();
        assert_relative_eq!(g.pdf(&[x]), expected, max_relative = 1e-14);
    }

    #[test]
    fn density_ratio_return_closed_form() {
        // scalar case: g(x) = (sqrt(2) exp(-x^2/4) - 1) / 0.5
        let f = GaussianDensity::new(DMatrix::from_element(1, 1, 1.0), "sigma").unwrap();
        let b = GaussianDensity::new(DMatrix::from_element(1, 1, 2.0), "sigma0").unwrap();
        let g = GaussianReturn::new(&f, &b, 0.5).unwrap();
        assert_relative_eq!(g.eval(&[0.0]), 2.0 * (2.0_f64.sqrt() - 1.0), epsilon = 1e-14);
        for x in [-3.0, 0.0, 3.0] {
            let one_plus = 1.0 + 0.5 * g.eval(&[x]);
            assert_relative_eq!(
                one_plus,
                2.0_f64.sqrt() * (-x * x / 4.0).exp(),
                max_relative = 1e-13
            );
            assert!(one_plus > 0.0);
        }
        assert_eq!(
            GaussianReturn::new(&f, &b, 1.0).unwrap_err().name(),
            "DOutOfRange"
        );
    }

    #[test]
    fn weight_fn_catalog_eval() {
        assert_eq!(WeightFn::One.eval(&[3.0]), 1.0);
        assert_eq!(WeightFn::Constant(2.5).eval(&[-1.0]), 2.5);
        let p = WeightFn::Polynomial(vec![1.0, 0.0, 1.0]); // 1 + x^2
        assert_relative_eq!(p.eval(&[2.0]), 5.0);
        let half_line = WeightFn::IndicatorBox {
            lower: Some(vec![0.0]),
            upper: None,
        };
        assert_eq!(half_line.eval(&[0.5]), 1.0);
        assert_eq!(half_line.eval(&[-0.5]), 0.0);
    }

    #[test]
    fn market_json_round_trip() {
        let json = r#"{"type":"discrete","outcomes":[1.0,-1.0],"probs":[0.6,0.4],"weights":[1.0,1.0],"reference":[0.5,0.5]}"#;
        let market: Market = serde_json::from_str(json).unwrap();
        let back = serde_json::to_string(&market).unwrap();
        let reparsed: Market = serde_json::from_str(&back).unwrap();
        match (&market, &reparsed) {
            (Market::Discrete(a), Market::Discrete(b)) => assert_eq!(a, b),
            _ => panic!("expected discrete markets"),
        }

        let json = r#"{"type":"gaussian","dim":1,"sigma":[[1.0]],"sigma0":[[2.0]],"weight":"one","return":{"form":"eq24","D":0.5}}"#;
        let market: Market = serde_json::from_str(json).unwrap();
        let back = serde_json::to_string(&market).unwrap();
        assert!(back.contains("\"eq24\""));
        assert!(back.contains("\"one\""));
        let reparsed: Market = serde_json::from_str(&back).unwrap();
        assert_eq!(reparsed.kind(), "gaussian");
    }

    #[test]
    fn invalid_market_json_is_rejected() {
        let json = r#"{"type":"discrete","outcomes":[1.0,-1.0],"probs":[0.7,0.4],"weights":[1.0,1.0],"reference":[0.5,0.5]}"#;
        let spec: MarketSpec = serde_json::from_str(json).unwrap();
        assert_eq!(spec.build().unwrap_err().name(), "ProbSumError");
    }

    #[test]
    fn discrete_to_grid_preserves_values() {
        let g = binary_market().to_grid();
        assert_eq!(g.len(), 2);
        assert_eq!(g.density(), &[0.6, 0.4]);
        assert_eq!(g.returns(), &[1.0, -1.0]);
        assert!(g.validate().passed);
        assert!(g.normalization_residual().abs() < 1e-15);
    }
}
