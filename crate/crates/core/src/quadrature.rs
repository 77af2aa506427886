//! Deterministic integration against Gaussian laws.
//!
//! Two node schemes are provided. `tensor` places equally spaced nodes with
//! trapezoid weights inside a box truncated at `R` standard deviations; for
//! smooth, rapidly decaying integrands the rule converges geometrically in
//! the node count. `gauss_hermite` uses Gauss-Hermite nodes transformed to
//! the target covariance; with `K` nodes per dimension it is exact for
//! polynomial integrands up to degree `2K - 1`.
//!
//! Dimensions up to 3 use full tensor products. Above that, integration
//! falls back to fixed-seed Monte Carlo with a reported standard error.
//!
//! Node evaluation order and the summation order are fixed, so every result
//! is reproducible bit for bit.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market::{GaussianDensity, GaussianMarket, GridMarket, GridSource};
use crate::rng::PathRng;
use crate::tolerances;

/// Maximum dimension handled by tensor-product node schemes.
pub const MAX_TENSOR_DIM: usize = 3;

const MC_FALLBACK_SAMPLES: u64 = 1 << 20;
const MC_FALLBACK_SEED: u64 = 0x51AB_1E5E_ED00_0001;

/// Node scheme for integration and discretization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "snake_case")]
pub enum GridSpec {
    /// Equally spaced nodes with trapezoid weights, truncated at `r`
    /// standard deviations per coordinate.
    Tensor {
        #[serde(rename = "K")]
        k: usize,
        #[serde(rename = "R")]
        r: f64,
    },
    /// Gauss-Hermite nodes transformed to the target covariance.
    GaussHermite {
        #[serde(rename = "K")]
        k: usize,
    },
}

impl Default for GridSpec {
    /// 64 nodes per dimension, truncation at 8 standard deviations: the
    /// Gaussian tail mass beyond the box is below 1e-15 in double precision.
    fn default() -> Self {
        GridSpec::Tensor { k: 64, r: 8.0 }
    }
}

impl GridSpec {
    pub fn node_count(&self) -> usize {
        match self {
            GridSpec::Tensor { k, .. } | GridSpec::GaussHermite { k } => *k,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            GridSpec::Tensor { k, r } => {
                if *k < 2 {
                    return Err(Error::InvalidGridSpec {
                        detail: "node count K must be at least 2",
                    });
                }
                if !(*r > 0.0) || !r.is_finite() {
                    return Err(Error::InvalidGridSpec {
                        detail: "truncation radius R must be positive and finite",
                    });
                }
                Ok(())
            }
            GridSpec::GaussHermite { k } => {
                if *k < 2 {
                    return Err(Error::InvalidGridSpec {
                        detail: "node count K must be at least 2",
                    });
                }
                Ok(())
            }
        }
    }

    /// Same scheme with the per-dimension node count doubled.
    pub fn refined(&self) -> GridSpec {
        match self {
            GridSpec::Tensor { k, r } => GridSpec::Tensor { k: 2 * k, r: *r },
            GridSpec::GaussHermite { k } => GridSpec::GaussHermite { k: 2 * k },
        }
    }
}

/// Largest supported Gauss-Hermite node count; beyond it the orthonormal
/// recurrence values overflow double precision at the extreme nodes.
pub const MAX_HERMITE_NODES: usize = 256;

/// Evaluates the orthonormal Hermite value `h_k(t)` together with
/// `h_{k-1}(t)` and the Christoffel sum `sum_{j<k} h_j(t)^2`.
fn hermite_orthonormal(k: usize, t: f64) -> (f64, f64, f64) {
    let mut prev = 0.0;
    let mut cur = std::f64::consts::PI.powf(-0.25);
    let mut christoffel = cur * cur;
    for j in 0..k {
        let next = t * (2.0 / (j + 1) as f64).sqrt() * cur
            - ((j as f64) / (j + 1) as f64).sqrt() * prev;
        prev = cur;
        cur = next;
        if j + 1 < k {
            christoffel += cur * cur;
        }
    }
    (cur, prev, christoffel)
}

/// Gauss-Hermite nodes and weights for the weight function `exp(-t^2)`:
/// `sum_i w_i h(t_i)` approximates `integral exp(-t^2) h(t) dt` and is exact
/// for polynomials `h` of degree up to `2k - 1`.
///
/// Nodes start from the Golub-Welsch symmetric tridiagonal eigenproblem and
/// are polished by Newton steps on the orthonormal recurrence; weights are
/// the Christoffel numbers at the polished nodes. Nodes are sorted ascending
/// and symmetrized so `t_i = -t_{k-1-i}` holds exactly, which makes odd
/// moments cancel exactly in paired summation.
pub fn hermite_rule(k: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if k < 2 {
        return Err(Error::InvalidGridSpec {
            detail: "node count K must be at least 2",
        });
    }
    if k > MAX_HERMITE_NODES {
        return Err(Error::InvalidGridSpec {
            detail: "node count K exceeds the Gauss-Hermite limit of 256",
        });
    }
    let mut jacobi = DMatrix::zeros(k, k);
    for j in 1..k {
        let off = (j as f64 / 2.0).sqrt();
        jacobi[(j - 1, j)] = off;
        jacobi[(j, j - 1)] = off;
    }
    let eigen = SymmetricEigen::new(jacobi);
    let mut nodes: Vec<f64> = eigen.eigenvalues.iter().copied().collect();
    nodes.sort_unstable_by(|a, b| a.partial_cmp(b).expect("finite nodes"));

    let mut weights = vec![0.0; k];
    for (node, weight) in nodes.iter_mut().zip(&mut weights) {
        let mut t = *node;
        for _ in 0..3 {
            let (value, lower, _) = hermite_orthonormal(k, t);
            let derivative = (2.0 * k as f64).sqrt() * lower;
            t -= value / derivative;
        }
        let (_, _, christoffel) = hermite_orthonormal(k, t);
        *node = t;
        *weight = 1.0 / christoffel;
    }

    for i in 0..k / 2 {
        let j = k - 1 - i;
        let t = 0.5 * (nodes[j] - nodes[i]);
        nodes[i] = -t;
        nodes[j] = t;
        let w = 0.5 * (weights[i] + weights[j]);
        weights[i] = w;
        weights[j] = w;
    }
    if k % 2 == 1 {
        nodes[k / 2] = 0.0;
    }
    Ok((nodes, weights))
}

/// Visits every multi-index of `dims` digits in `0..k`, in row-major order.
fn for_each_multi_index(k: usize, dims: usize, mut visit: impl FnMut(&[usize])) {
    let mut idx = vec![0usize; dims];
    loop {
        visit(&idx);
        let mut dim = dims;
        loop {
            if dim == 0 {
                return;
            }
            dim -= 1;
            idx[dim] += 1;
            if idx[dim] < k {
                break;
            }
            idx[dim] = 0;
        }
    }
}

/// Nodes and Lebesgue weights of a scheme laid out for a target law: sums
/// `sum_k w_k u(x_k)` approximate `integral u(x) dx` for integrands
/// concentrated like the law. `widths` gives the per-coordinate scale
/// (standard deviations for the tensor box).
struct LebesgueRule {
    nodes: Vec<Vec<f64>>,
    weights: Vec<f64>,
}

fn tensor_rule(k: usize, r: f64, widths: &[f64]) -> LebesgueRule {
    let dims = widths.len();
    let half: Vec<f64> = widths.iter().map(|s| r * s).collect();
    let step: Vec<f64> = half.iter().map(|h| 2.0 * h / (k - 1) as f64).collect();
    let mut nodes = Vec::with_capacity(k.pow(dims as u32));
    let mut weights = Vec::with_capacity(nodes.capacity());
    for_each_multi_index(k, dims, |idx| {
        let mut x = Vec::with_capacity(dims);
        let mut w = 1.0;
        for (dim, &i) in idx.iter().enumerate() {
            x.push(-half[dim] + i as f64 * step[dim]);
            let edge = if i == 0 || i == k - 1 { 0.5 } else { 1.0 };
            w *= step[dim] * edge;
        }
        nodes.push(x);
        weights.push(w);
    });
    LebesgueRule { nodes, weights }
}

/// Gauss-Hermite rule transformed to the covariance of `density`. With
/// `x = sqrt(2) L t` the Lebesgue weight picks up the factor
/// `prod(omega) * exp(|t|^2) * 2^{d/2} * det(L)`.
fn hermite_lebesgue_rule(k: usize, density: &GaussianDensity) -> Result<LebesgueRule> {
    let (t_nodes, t_weights) = hermite_rule(k)?;
    let dims = density.dim();
    let l = density.chol_lower();
    let det_l: f64 = l.diagonal().iter().product();
    let scale = 2.0_f64.powf(dims as f64 / 2.0) * det_l;
    let mut nodes = Vec::with_capacity(k.pow(dims as u32));
    let mut weights = Vec::with_capacity(nodes.capacity());
    for_each_multi_index(k, dims, |idx| {
        let t = DVector::from_fn(dims, |row, _| t_nodes[idx[row]]);
        let x = l * &t * 2.0_f64.sqrt();
        let mut w = scale * t.norm_squared().exp();
        for &i in idx {
            w *= t_weights[i];
        }
        nodes.push(x.iter().cloned().collect());
        weights.push(w);
    });
    Ok(LebesgueRule { nodes, weights })
}

/// One evaluation of `integral u(x) density(x) dx` at a fixed node count.
fn expectation_once(
    integrand: &impl Fn(&[f64]) -> f64,
    density: &GaussianDensity,
    spec: &GridSpec,
) -> Result<f64> {
    let dims = density.dim();
    match spec {
        GridSpec::Tensor { k, r } => {
            let widths: Vec<f64> = (0..dims).map(|j| density.std_dev(j)).collect();
            let rule = tensor_rule(*k, *r, &widths);
            let mut sum = 0.0;
            for (x, w) in rule.nodes.iter().zip(&rule.weights) {
                sum += w * integrand(x) * density.pdf(x);
            }
            Ok(sum)
        }
        GridSpec::GaussHermite { k } => {
            // expectation form: probabilist weights prod(omega) / pi^{d/2}
            let (t_nodes, t_weights) = hermite_rule(*k)?;
            let l = density.chol_lower();
            let norm = std::f64::consts::PI.powf(-(dims as f64) / 2.0);
            let mut sum = 0.0;
            for_each_multi_index(*k, dims, |idx| {
                let t = DVector::from_fn(dims, |row, _| t_nodes[idx[row]]);
                let x: Vec<f64> = (l * &t * 2.0_f64.sqrt()).iter().cloned().collect();
                let mut w = norm;
                for &i in idx {
                    w *= t_weights[i];
                }
                sum += w * integrand(&x);
            });
            Ok(sum)
        }
    }
}

fn monte_carlo_expectation(
    integrand: &impl Fn(&[f64]) -> f64,
    density: &GaussianDensity,
) -> (f64, f64) {
    let dims = density.dim();
    let l = density.chol_lower();
    let n = MC_FALLBACK_SAMPLES;
    let (mut sum, mut sumsq) = (0.0, 0.0);
    for path in 0..n {
        let mut rng = PathRng::new(MC_FALLBACK_SEED, path);
        let z = DVector::from_fn(dims, |_, _| rng.normal());
        let x: Vec<f64> = (l * z).iter().cloned().collect();
        let v = integrand(&x);
        sum += v;
        sumsq += v * v;
    }
    let mean = sum / n as f64;
    let var = (sumsq / n as f64 - mean * mean).max(0.0);
    (mean, (var / n as f64).sqrt())
}

/// Computes `integral integrand(x) * density(x) dx` together with an error
/// estimate.
///
/// For tensor and Gauss-Hermite schemes the value is the sum at the
/// requested node count and the error estimate is the change under one
/// refinement (doubled node count); a change above the quadrature tolerance
/// is an error. Dimensions above [`MAX_TENSOR_DIM`] use the Monte Carlo
/// fallback, where the error estimate is the standard error of the mean and
/// no convergence error is raised.
pub fn integrate(
    integrand: impl Fn(&[f64]) -> f64,
    density: &GaussianDensity,
    spec: &GridSpec,
) -> Result<(f64, f64)> {
    spec.validate()?;
    if density.dim() > MAX_TENSOR_DIM {
        return Ok(monte_carlo_expectation(&integrand, density));
    }
    let coarse = expectation_once(&integrand, density, spec)?;
    let fine = expectation_once(&integrand, density, &spec.refined())?;
    let error_estimate = (coarse - fine).abs();
    if error_estimate > tolerances::QUADRATURE {
        return Err(Error::QuadratureNotConverged {
            error_estimate,
            tolerance: tolerances::QUADRATURE,
        });
    }
    Ok((coarse, error_estimate))
}

/// Tabulates a Gaussian market on quadrature nodes: Lebesgue node weights,
/// both densities, and the weight/return functions evaluated per node.
///
/// The tensor box is truncated at `R` times the wider of the two standard
/// deviations per coordinate, so both the outcome and the reference law keep
/// their mass inside the grid. Any normalization residual is left in the
/// grid market and reported by
/// [`normalization_residual`](GridMarket::normalization_residual), never
/// silently corrected.
pub fn discretize_gaussian_market(market: &GaussianMarket, spec: &GridSpec) -> Result<GridMarket> {
    spec.validate()?;
    let dims = market.dim();
    if dims > MAX_TENSOR_DIM {
        return Err(Error::InvalidGridSpec {
            detail: "grid discretization supports at most 3 dimensions",
        });
    }
    let f = market.density();
    let b = market.reference_density();
    let rule = match spec {
        GridSpec::Tensor { k, r } => {
            let widths: Vec<f64> = (0..dims)
                .map(|j| f.std_dev(j).max(b.std_dev(j)))
                .collect();
            tensor_rule(*k, *r, &widths)
        }
        GridSpec::GaussHermite { k } => hermite_lebesgue_rule(*k, f)?,
    };
    let density: Vec<f64> = rule.nodes.iter().map(|x| f.pdf(x)).collect();
    let reference: Vec<f64> = rule.nodes.iter().map(|x| b.pdf(x)).collect();
    let weights: Vec<f64> = rule.nodes.iter().map(|x| market.weight_at(x)).collect();
    let returns: Vec<f64> = rule.nodes.iter().map(|x| market.return_at(x)).collect();
    let grid = GridMarket::build(
        rule.nodes,
        rule.weights,
        density,
        reference,
        weights,
        returns,
    )?;
    Ok(grid.with_source(GridSource {
        market: market.clone(),
        spec: spec.clone(),
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::{ReturnFn, WeightFn};
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;

    fn scalar_density(var: f64) -> GaussianDensity {
        GaussianDensity::new(DMatrix::from_element(1, 1, var), "sigma").unwrap()
    }

    fn test_market() -> GaussianMarket {
        GaussianMarket::build(
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, 2.0),
            WeightFn::One,
            ReturnFn::DensityRatio { d: 0.5 },
        )
        .unwrap()
    }

    #[test]
    fn normalization_integrates_to_one() {
        let density = scalar_density(1.0);
        for spec in [GridSpec::default(), GridSpec::GaussHermite { k: 64 }] {
            let (value, _) = integrate(|_| 1.0, &density, &spec).unwrap();
            assert_relative_eq!(value, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn second_moment_of_wider_gaussian() {
        let density = scalar_density(2.0);
        for spec in [GridSpec::default(), GridSpec::GaussHermite { k: 64 }] {
            let (value, _) = integrate(|x| x[0] * x[0], &density, &spec).unwrap();
            assert_relative_eq!(value, 2.0, epsilon = 1e-10);
        }
    }

    #[test]
    fn relative_entropy_matches_closed_form() {
        // f = N(0,1) against b = N(0,2): 0.5 * (ln 2 - 1/2)
        let f = scalar_density(1.0);
        let b = scalar_density(2.0);
        let expected = 0.5 * (2.0_f64.ln() - 0.5);
        let integrand = |x: &[f64]| (f.pdf(x) / b.pdf(x)).ln();
        let (value, _) = integrate(integrand, &f, &GridSpec::default()).unwrap();
        assert_relative_eq!(value, expected, epsilon = 1e-8);
    }

    #[test]
    fn hermite_rule_polynomial_exactness() {
        // integral exp(-t^2) t^j dt = (j-1)!! * sqrt(pi) / 2^{j/2} for even j
        for k in [2usize, 5, 8, 16, 32] {
            let (nodes, weights) = hermite_rule(k).unwrap();
            for j in 0..2 * k {
                let quad: f64 = nodes
                    .iter()
                    .zip(&weights)
                    .map(|(t, w)| w * t.powi(j as i32))
                    .sum();
                if j % 2 == 1 {
                    // odd moments vanish; measure the cancellation against
                    // the magnitude of the summed terms
                    let scale: f64 = nodes
                        .iter()
                        .zip(&weights)
                        .map(|(t, w)| w * t.abs().powi(j as i32))
                        .sum();
                    assert!(
                        quad.abs() <= 1e-12 * scale.max(1.0),
                        "k={k} j={j} got {quad} (scale {scale})"
                    );
                } else {
                    let mut double_fact = 1.0;
                    let mut i = j as i64 - 1;
                    while i > 1 {
                        double_fact *= i as f64;
                        i -= 2;
                    }
                    let exact =
                        double_fact * std::f64::consts::PI.sqrt() / 2.0_f64.powi(j as i32 / 2);
                    assert_relative_eq!(quad, exact, max_relative = 1e-12);
                }
            }
        }
    }

    #[test]
    fn refinement_reduces_error_estimate() {
        let density = scalar_density(1.0);
        let integrand = |x: &[f64]| (x[0].sin() + x[0] * x[0]).exp().ln_1p();
        let mut prev = f64::INFINITY;
        for k in [16usize, 32, 64] {
            let spec = GridSpec::Tensor { k, r: 8.0 };
            let coarse = expectation_once(&integrand, &density, &spec).unwrap();
            let fine = expectation_once(&integrand, &density, &spec.refined()).unwrap();
            let err = (coarse - fine).abs();
            assert!(
                err <= prev || err < 1e-14,
                "error grew from {prev} to {err} at k={k}"
            );
            prev = err;
        }
    }

    #[test]
    fn discretized_market_has_unit_mass() {
        let grid =
            discretize_gaussian_market(&test_market(), &GridSpec::Tensor { k: 64, r: 8.0 })
                .unwrap();
        assert!(grid.normalization_residual().abs() < 1e-10);
        assert!(grid.validate().passed);
        assert!(grid.source().is_some());
    }

    #[test]
    fn discretized_market_gauss_hermite_scheme() {
        let grid =
            discretize_gaussian_market(&test_market(), &GridSpec::GaussHermite { k: 64 }).unwrap();
        assert!(grid.normalization_residual().abs() < 1e-8);
    }

    #[test]
    fn truncation_radius_tail_is_negligible() {
        // alpha integrand on the test market: moving the box from 6 to 10
        // standard deviations changes the value by less than 1e-10
        let market = test_market();
        let f = market.density();
        let b = market.reference_density();
        let integrand = |x: &[f64]| (f.pdf(x) / b.pdf(x)).ln();
        let mut values = Vec::new();
        for r in [6.0, 10.0] {
            let grid =
                discretize_gaussian_market(&market, &GridSpec::Tensor { k: 256, r }).unwrap();
            let sum: f64 = grid
                .nodes()
                .iter()
                .zip(grid.quad_weights())
                .map(|(x, w)| w * f.pdf(x) * integrand(x))
                .sum();
            values.push(sum);
        }
        assert!(
            (values[0] - values[1]).abs() < 1e-10,
            "tail contribution {}",
            (values[0] - values[1]).abs()
        );
    }

    #[test]
    fn high_dimensional_fallback_reports_standard_error() {
        let density = GaussianDensity::new(DMatrix::identity(4, 4), "sigma").unwrap();
        let (value, se) = integrate(|x| x.iter().sum::<f64>(), &density, &GridSpec::default())
            .unwrap();
        assert!(se > 0.0);
        assert!(value.abs() < 5.0 * se + 1e-2, "mean {value} se {se}");
    }

    #[test]
    fn grid_spec_json_round_trip() {
        let spec = GridSpec::Tensor { k: 64, r: 8.0 };
        let json = serde_json::to_string(&spec).unwrap();
        assert_eq!(json, r#"{"scheme":"tensor","K":64,"R":8.0}"#);
        let back: GridSpec = serde_json::from_str(&json).unwrap();
        assert_eq!(back, spec);
        let gh: GridSpec = serde_json::from_str(r#"{"scheme":"gauss_hermite","K":32}"#).unwrap();
        assert_eq!(gh, GridSpec::GaussHermite { k: 32 });
    }

    #[test]
    fn invalid_specs_are_rejected() {
        assert!(GridSpec::Tensor { k: 1, r: 8.0 }.validate().is_err());
        assert!(GridSpec::Tensor { k: 64, r: 0.0 }.validate().is_err());
        assert!(GridSpec::GaussHermite { k: 0 }.validate().is_err());
    }
}
