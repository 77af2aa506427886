//! Shared randomized market generators for the integration suites.
//!
//! All generators are driven by the crate's counter-based streams, so every
//! suite run sees the same markets.

use weighted_kelly::market::DiscreteMarket;
use weighted_kelly::rng::PathRng;

pub struct Gen {
    rng: PathRng,
}

impl Gen {
    pub fn new(seed: u64, stream: u64) -> Self {
        Gen {
            rng: PathRng::new(seed, stream),
        }
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.rng.uniform()
    }

    pub fn usize_in(&mut self, lo: usize, hi: usize) -> usize {
        lo + (self.rng.next_u64() % (hi - lo + 1) as u64) as usize
    }
}

fn distinct(values: &[f64]) -> bool {
    for i in 0..values.len() {
        for j in (i + 1)..values.len() {
            if (values[i] - values[j]).abs() < 1e-6 {
                return false;
            }
        }
    }
    true
}

/// Weights with `sum_i phi_i E_i = 0`: random positives on the winning
/// outcomes, the losing side rescaled to cancel them.
fn orthogonal_weights(gen: &mut Gen, outcomes: &[f64]) -> Vec<f64> {
    let mut weights: Vec<f64> = outcomes.iter().map(|_| gen.uniform(0.5, 1.5)).collect();
    let positive: f64 = outcomes
        .iter()
        .zip(&weights)
        .filter(|(e, _)| **e > 0.0)
        .map(|(e, w)| e * w)
        .sum();
    let negative: f64 = outcomes
        .iter()
        .zip(&weights)
        .filter(|(e, _)| **e < 0.0)
        .map(|(e, w)| -e * w)
        .sum();
    let scale = positive / negative;
    for (e, w) in outcomes.iter().zip(&mut weights) {
        if *e < 0.0 {
            *w *= scale;
        }
    }
    weights
}

/// Random market satisfying both admissibility conditions: weights built to
/// be orthogonal to the returns, probabilities tilted towards heavy weights
/// so the weighted mass condition holds.
pub fn conditioned_market(seed: u64, index: u64) -> DiscreteMarket {
    let mut gen = Gen::new(seed, index);
    loop {
        let m = gen.usize_in(2, 5);
        let positives = 1 + gen.usize_in(0, m - 2).min(m - 2);
        let mut outcomes = Vec::with_capacity(m);
        for i in 0..m {
            let magnitude = gen.uniform(0.3, 2.0);
            outcomes.push(if i < positives { magnitude } else { -magnitude });
        }
        if !distinct(&outcomes) {
            continue;
        }
        let weights = orthogonal_weights(&mut gen, &outcomes);
        let total_weight: f64 = weights.iter().sum();
        let tilt = gen.uniform(0.1, 0.9);
        let mut probs: Vec<f64> = weights
            .iter()
            .map(|w| (1.0 - tilt) / m as f64 + tilt * w / total_weight)
            .collect();
        let mass: f64 = probs.iter().sum();
        for p in &mut probs {
            *p /= mass;
        }
        let reference = vec![1.0 / m as f64; m];
        match DiscreteMarket::build(outcomes, probs, weights, reference) {
            Ok(market) => return market,
            Err(_) => continue,
        }
    }
}

/// Largest constant fraction that keeps every wealth factor strictly
/// positive on these returns.
pub fn fraction_bound_values(outcomes: &[f64]) -> f64 {
    outcomes
        .iter()
        .filter(|e| **e < 0.0)
        .map(|e| 1.0 / -e)
        .fold(f64::INFINITY, f64::min)
}

/// [`fraction_bound_values`] on a built market.
pub fn fraction_bound(market: &DiscreteMarket) -> f64 {
    fraction_bound_values(market.outcomes())
}

/// Random market where the martingale strategy exists by construction:
/// zero-sum returns, probabilities `(1 + d E_i) / m`, weights orthogonal to
/// the returns. Returns the market and the built-in fraction.
pub fn feasible_market(seed: u64, index: u64) -> (DiscreteMarket, f64) {
    let mut gen = Gen::new(seed, index);
    loop {
        let m = gen.usize_in(2, 4);
        let mut outcomes: Vec<f64> = (0..m - 1)
            .map(|i| {
                let magnitude = gen.uniform(0.3, 1.5);
                if i % 2 == 0 {
                    magnitude
                } else {
                    -magnitude
                }
            })
            .collect();
        let balance: f64 = -outcomes.iter().sum::<f64>();
        outcomes.push(balance);
        if balance.abs() < 0.2 || balance.abs() > 2.0 || !distinct(&outcomes) {
            continue;
        }
        let bound = fraction_bound_values(&outcomes);
        let d = gen.uniform(0.0, 0.8 * bound.min(1.0));
        let probs: Vec<f64> = outcomes
            .iter()
            .map(|e| (1.0 + d * e) / m as f64)
            .collect();
        if probs.iter().any(|p| *p < 0.02) {
            continue;
        }
        let weights = orthogonal_weights(&mut gen, &outcomes);
        let reference = vec![1.0 / m as f64; m];
        match DiscreteMarket::build(outcomes, probs, weights, reference) {
            Ok(market) => return (market, d),
            Err(_) => continue,
        }
    }
}
