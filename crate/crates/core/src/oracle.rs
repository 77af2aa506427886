//! Exact enumeration oracle for finite markets.
//!
//! Walks every outcome sequence of length `n` as a depth-first tree in
//! ascending outcome order, so previsible history-dependent strategies are
//! honored and the summation order is canonical. The probability-weighted
//! average of the final weighted rate is exact up to floating-point
//! rounding, which makes it the ground truth for the supermartingale and
//! martingale checks and for validating the Monte Carlo engine.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::engine::{alpha_discrete, rate_increment};
use crate::error::{Error, Result};
use crate::market::DiscreteMarket;
use crate::strategy::{constant_fraction, History, Strategy};
use crate::tolerances;

/// Exact expectation of the weighted rate after `n` rounds.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExactResult {
    /// Exact `E[S_n]` in nats.
    pub expected_rate: f64,
    pub n: usize,
    /// `m^n`.
    pub sequences_enumerated: u64,
    /// `n * alpha - E[S_n]`; non-negative for admissible strategies on
    /// markets satisfying the admissibility conditions, zero exactly for the
    /// martingale strategy.
    pub supermartingale_gap: f64,
    /// Conditional drift of the compensated rate at every interior node,
    /// keyed by comma-joined history prefix. Populated on request.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_node_drifts: Option<BTreeMap<String, f64>>,
}

/// Knobs for the enumeration walk.
#[derive(Debug, Clone)]
pub struct EnumerationOptions {
    /// Maximum number of leaf sequences.
    pub cap: u64,
    /// Record the conditional drift at every interior node.
    pub record_drifts: bool,
}

impl Default for EnumerationOptions {
    fn default() -> Self {
        EnumerationOptions {
            cap: tolerances::ENUMERATION_CAP,
            record_drifts: false,
        }
    }
}

struct Walker<'a> {
    market: &'a DiscreteMarket,
    strategy: &'a Strategy,
    n: usize,
    alpha: f64,
    /// Multiply probabilities in log space for very deep trees; plain
    /// products stay exact within the default cap.
    log_space: bool,
    drifts: Option<BTreeMap<String, f64>>,
    accumulated: f64,
}

fn prefix_key(prefix: &[usize]) -> String {
    let mut key = String::new();
    for (i, idx) in prefix.iter().enumerate() {
        if i > 0 {
            key.push(',');
        }
        key.push_str(&idx.to_string());
    }
    key
}

impl Walker<'_> {
    fn walk(&mut self, prefix: &mut Vec<usize>, z: f64, s: f64, weight: f64) -> Result<()> {
        if prefix.len() == self.n {
            let prob = if self.log_space { weight.exp() } else { weight };
            self.accumulated += prob * s;
            return Ok(());
        }
        let stake = self.strategy.stake(&History::Indices(prefix), z)?;
        if self.drifts.is_some() {
            let drift = node_drift(self.market, stake, z, self.alpha, prefix)?;
            let key = prefix_key(prefix);
            self.drifts
                .as_mut()
                .expect("checked above")
                .insert(key, drift);
        }
        for i in 0..self.market.m() {
            let e = self.market.outcomes()[i];
            let factor = 1.0 + stake * e / z;
            if !(factor > 0.0) {
                prefix.push(i);
                let err = Error::RuinViolation {
                    step: prefix.len(),
                    factor,
                    path: prefix.clone(),
                };
                prefix.pop();
                return Err(err);
            }
            let z_next = z * factor;
            let s_next = s + rate_increment(self.market.weights()[i], z_next, z);
            let p = self.market.probs()[i];
            let w_next = if self.log_space {
                weight + p.ln()
            } else {
                weight * p
            };
            prefix.push(i);
            self.walk(prefix, z_next, s_next, w_next)?;
            prefix.pop();
        }
        Ok(())
    }
}

fn node_drift(
    market: &DiscreteMarket,
    stake: f64,
    z: f64,
    alpha: f64,
    prefix: &[usize],
) -> Result<f64> {
    let mut expected = 0.0;
    for i in 0..market.m() {
        let factor = 1.0 + stake * market.outcomes()[i] / z;
        if !(factor > 0.0) {
            let mut path = prefix.to_vec();
            path.push(i);
            return Err(Error::RuinViolation {
                step: path.len(),
                factor,
                path,
            });
        }
        expected += market.probs()[i] * market.weights()[i] * factor.ln();
    }
    Ok(expected - alpha)
}

/// Exact probability-weighted expectation of `S_n` with default options.
pub fn exact_expected_rate(
    market: &DiscreteMarket,
    strategy: &Strategy,
    n: usize,
    z_0: f64,
) -> Result<ExactResult> {
    exact_expected_rate_with(market, strategy, n, z_0, &EnumerationOptions::default())
}

/// Exact probability-weighted expectation of `S_n`.
pub fn exact_expected_rate_with(
    market: &DiscreteMarket,
    strategy: &Strategy,
    n: usize,
    z_0: f64,
    options: &EnumerationOptions,
) -> Result<ExactResult> {
    if !(z_0 > 0.0) || !z_0.is_finite() {
        return Err(Error::NonFiniteInput { field: "Z_0" });
    }
    let required = (market.m() as u64)
        .checked_pow(n as u32)
        .unwrap_or(u64::MAX);
    if required > options.cap {
        return Err(Error::EnumerationTooLarge {
            required,
            cap: options.cap,
        });
    }
    let alpha = alpha_discrete(market).value;
    let mut walker = Walker {
        market,
        strategy,
        n,
        alpha,
        log_space: n > 40,
        drifts: options.record_drifts.then(BTreeMap::new),
        accumulated: 0.0,
    };
    let mut prefix = Vec::with_capacity(n);
    walker.walk(&mut prefix, z_0, 0.0, if walker.log_space { 0.0 } else { 1.0 })?;
    Ok(ExactResult {
        expected_rate: walker.accumulated,
        n,
        sequences_enumerated: required,
        supermartingale_gap: alpha * n as f64 - walker.accumulated,
        per_node_drifts: walker.drifts,
    })
}

/// Conditional one-step drift of the compensated rate at the node reached by
/// `history_prefix`: the expected weighted log factor of the next round
/// minus the compensator increment. Zero at every node exactly when the
/// strategy is the martingale strategy.
pub fn conditional_drift(
    market: &DiscreteMarket,
    strategy: &Strategy,
    history_prefix: &[usize],
    z_0: f64,
) -> Result<f64> {
    if !(z_0 > 0.0) || !z_0.is_finite() {
        return Err(Error::NonFiniteInput { field: "Z_0" });
    }
    // replay the prefix to find the node's wealth
    let mut z = z_0;
    for (j, &idx) in history_prefix.iter().enumerate() {
        if idx >= market.m() {
            return Err(Error::OutcomeIndexOutOfRange {
                index: idx,
                m: market.m(),
            });
        }
        let stake = strategy.stake(&History::Indices(&history_prefix[..j]), z)?;
        let factor = 1.0 + stake * market.outcomes()[idx] / z;
        if !(factor > 0.0) {
            return Err(Error::RuinViolation {
                step: j + 1,
                factor,
                path: history_prefix[..=j].to_vec(),
            });
        }
        z *= factor;
    }
    let stake = strategy.stake(&History::Indices(history_prefix), z)?;
    let alpha = alpha_discrete(market).value;
    node_drift(market, stake, z, alpha, history_prefix)
}

/// One point of a betting-fraction sweep.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepPoint {
    pub fraction: f64,
    pub expected_rate: f64,
    pub gap: f64,
}

/// Exact `E[S_n]` for each constant fraction in `d_grid`. The rate of a
/// constant-fraction strategy does not depend on the initial wealth.
pub fn sweep_fraction(
    market: &DiscreteMarket,
    d_grid: &[f64],
    n: usize,
) -> Result<Vec<SweepPoint>> {
    let mut points = Vec::with_capacity(d_grid.len());
    for &d in d_grid {
        let strategy = constant_fraction(d)?;
        let result = exact_expected_rate(market, &strategy, n, 1.0)?;
        points.push(SweepPoint {
            fraction: d,
            expected_rate: result.expected_rate,
            gap: result.supermartingale_gap,
        });
    }
    Ok(points)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::strategy::Strategy;
    use approx::assert_relative_eq;
    use std::sync::Arc;

    fn binary_market() -> DiscreteMarket {
        DiscreteMarket::build(
            vec![1.0, -1.0],
            vec![0.6, 0.4],
            vec![1.0, 1.0],
            vec![0.5, 0.5],
        )
        .unwrap()
    }

    const ALPHA_BINARY: f64 = 0.020135513550688873;

    #[test]
    fn martingale_fraction_attains_the_compensator() {
        let market = binary_market();
        let s = constant_fraction(0.2).unwrap();
        let r = exact_expected_rate(&market, &s, 5, 1.0).unwrap();
        assert_eq!(r.sequences_enumerated, 32);
        assert_relative_eq!(r.expected_rate, 5.0 * ALPHA_BINARY, epsilon = 1e-10);
        assert!(r.supermartingale_gap.abs() <= 1e-10);
    }

    #[test]
    fn overbetting_lowers_the_exact_rate() {
        let market = binary_market();
        let s = constant_fraction(0.5).unwrap();
        let r = exact_expected_rate(&market, &s, 5, 1.0).unwrap();
        assert_relative_eq!(r.expected_rate, -0.16989903679539747, epsilon = 1e-12);
        assert!(r.supermartingale_gap > 0.0);
    }

    #[test]
    fn idle_strategy_keeps_rate_zero() {
        let market = binary_market();
        let s = constant_fraction(0.0).unwrap();
        let r = exact_expected_rate(&market, &s, 7, 1.0).unwrap();
        assert_eq!(r.expected_rate, 0.0);
        assert_relative_eq!(r.supermartingale_gap, 7.0 * ALPHA_BINARY, epsilon = 1e-14);
    }

    #[test]
    fn conditional_drift_examples() {
        let market = binary_market();
        let optimal = constant_fraction(0.2).unwrap();
        for prefix in [&[][..], &[0][..], &[0, 1][..], &[1, 1, 0][..]] {
            let drift = conditional_drift(&market, &optimal, prefix, 1.0).unwrap();
            assert!(drift.abs() <= 1e-14, "drift {drift} at {prefix:?}");
        }

        let idle = constant_fraction(0.0).unwrap();
        let drift = conditional_drift(&market, &idle, &[0], 1.0).unwrap();
        assert_relative_eq!(drift, -ALPHA_BINARY, epsilon = 1e-15);

        let over = constant_fraction(0.5).unwrap();
        let drift = conditional_drift(&market, &over, &[], 1.0).unwrap();
        assert_relative_eq!(drift, -0.05411532090976837, epsilon = 1e-12);
    }

    #[test]
    fn recorded_drifts_cover_every_interior_node() {
        let market = binary_market();
        let s = constant_fraction(0.2).unwrap();
        let opts = EnumerationOptions {
            record_drifts: true,
            ..Default::default()
        };
        let r = exact_expected_rate_with(&market, &s, 3, 1.0, &opts).unwrap();
        let drifts = r.per_node_drifts.unwrap();
        assert_eq!(drifts.len(), 1 + 2 + 4);
        assert!(drifts.values().all(|d| d.abs() <= 1e-14));
        assert!(drifts.contains_key(""));
        assert!(drifts.contains_key("0,1"));
    }

    #[test]
    fn single_step_matches_direct_expectation() {
        let market = binary_market();
        for d in [0.0, 0.1, 0.2, 0.35, 0.6] {
            let s = constant_fraction(d).unwrap();
            let r = exact_expected_rate(&market, &s, 1, 1.0).unwrap();
            let z0 = 1.0;
            let direct: f64 = market
                .probs()
                .iter()
                .zip(market.outcomes())
                .zip(market.weights())
                .map(|((p, e), phi)| p * rate_increment(*phi, z0 * (1.0 + d * e), z0))
                .sum();
            assert!((r.expected_rate - direct).abs() <= 1e-14);
        }
    }

    #[test]
    fn iid_rate_scales_linearly_in_steps() {
        let market = DiscreteMarket::build(
            vec![2.0, -1.0, 0.5],
            vec![0.3, 0.5, 0.2],
            vec![1.0, 2.0, 0.5],
            vec![1.0 / 3.0; 3],
        )
        .unwrap();
        for d in [0.0, 0.15, 0.4] {
            let s = constant_fraction(d).unwrap();
            let one = exact_expected_rate(&market, &s, 1, 1.0).unwrap();
            let six = exact_expected_rate(&market, &s, 6, 1.0).unwrap();
            assert!((six.expected_rate - 6.0 * one.expected_rate).abs() <= 1e-12);
        }
    }

    #[test]
    fn enumeration_cap_is_enforced() {
        let market = binary_market();
        let s = constant_fraction(0.2).unwrap();
        let opts = EnumerationOptions {
            cap: 512,
            record_drifts: false,
        };
        let err = exact_expected_rate_with(&market, &s, 10, 1.0, &opts).unwrap_err();
        assert_eq!(
            err,
            Error::EnumerationTooLarge {
                required: 1024,
                cap: 512
            }
        );
    }

    #[test]
    fn ruin_reports_the_offending_prefix() {
        let market = binary_market();
        let all_in = constant_fraction(1.0).unwrap();
        let err = exact_expected_rate(&market, &all_in, 2, 1.0).unwrap_err();
        // depth-first in outcome order: the win branch is explored first,
        // so the first ruin sits at (win, loss)
        match err {
            Error::RuinViolation { step, factor, path } => {
                assert_eq!(step, 2);
                assert_eq!(factor, 0.0);
                assert_eq!(path, vec![0, 1]);
            }
            other => panic!("expected ruin, got {other:?}"),
        }
    }

    #[test]
    fn history_dependent_strategy_is_honored() {
        // bet 0.2 only after a win, otherwise sit out; the exact value is
        // assembled by hand over the four length-2 sequences
        let market = binary_market();
        let rule = Strategy::custom(Arc::new(|h: &History<'_>, w| {
            let History::Indices(idx) = h else { return 0.0 };
            match idx.last() {
                Some(0) => 0.2 * w,
                _ => 0.0,
            }
        }));
        let r = exact_expected_rate(&market, &rule, 2, 1.0).unwrap();
        // step 1 stakes nothing; step 2 stakes 0.2 only after outcome 0
        let expected = 0.6 * (0.6 * 1.2_f64.ln() + 0.4 * 0.8_f64.ln());
        assert_relative_eq!(r.expected_rate, expected, epsilon = 1e-15);
    }

    #[test]
    fn sweep_locates_the_martingale_fraction() {
        let market = binary_market();
        let grid: Vec<f64> = (0..=99).map(|i| i as f64 / 100.0).collect();
        let points = sweep_fraction(&market, &grid, 1).unwrap();
        let best = points
            .iter()
            .max_by(|a, b| a.expected_rate.partial_cmp(&b.expected_rate).unwrap())
            .unwrap();
        assert_eq!(best.fraction, 0.20);

        let fair = DiscreteMarket::build(
            vec![1.0, -1.0],
            vec![0.5, 0.5],
            vec![1.0, 1.0],
            vec![0.5, 0.5],
        )
        .unwrap();
        let points = sweep_fraction(&fair, &grid, 1).unwrap();
        let best = points
            .iter()
            .max_by(|a, b| a.expected_rate.partial_cmp(&b.expected_rate).unwrap())
            .unwrap();
        assert_eq!(best.fraction, 0.0);
    }

    #[test]
    fn infeasible_market_never_attains_the_compensator() {
        // weights chosen to satisfy both admissibility conditions:
        // 2*1 + 1*(-2) = 0 and 1.5 <= 2*0.7 + 1*0.3 = 1.7
        let market = DiscreteMarket::build(
            vec![1.0, -2.0],
            vec![0.7, 0.3],
            vec![2.0, 1.0],
            vec![0.5, 0.5],
        )
        .unwrap();
        let grid: Vec<f64> = (0..=49).map(|i| i as f64 / 100.0).collect();
        let points = sweep_fraction(&market, &grid, 2).unwrap();
        for p in &points {
            assert!(p.gap > 1e-12, "gap {} at D={}", p.gap, p.fraction);
        }
    }
}
