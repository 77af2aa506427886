//! Seeded Monte Carlo simulation of wealth paths.
//!
//! Every path draws from its own counter-based stream keyed by the run seed
//! and the path index, and per-path results are reduced in a canonical order
//! with compensated summation. A report is therefore a pure function of
//! `(market, strategy, n, paths, seed, Z_0)` no matter how many worker
//! threads rayon schedules.

use std::collections::BTreeMap;
use std::io::Write;
use std::sync::Mutex;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::engine::alpha_for;
use crate::error::{Error, Result};
use crate::market::{DiscreteMarket, GaussianMarket, Market};
use crate::rng::PathRng;
use crate::strategy::{History, Strategy};

/// Paths are generated in fixed-size blocks; parallelism splits across
/// blocks, never inside one, so slot contents are schedule-independent.
const BLOCK: usize = 1024;

/// How a path that would hit a non-positive wealth factor is handled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuinPolicy {
    /// Abort the whole simulation; the standing positivity assumption is
    /// part of the claims being verified.
    Error,
    /// Drop ruined paths from the average and count them. Exploratory use
    /// only.
    Skip,
}

#[derive(Debug, Clone)]
pub struct SimulationConfig {
    pub ruin_policy: RuinPolicy,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        SimulationConfig {
            ruin_policy: RuinPolicy::Error,
        }
    }
}

/// Sample statistics of the weighted rate after `n` rounds.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimulationReport {
    pub paths: u64,
    pub n: usize,
    pub mean_s_n: f64,
    pub std_error: f64,
    /// Compensator after `n` rounds.
    pub alpha_times_n: f64,
    /// `(mean_s_n - alpha_times_n) / std_error`; absent when the standard
    /// error is zero.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub z_score: Option<f64>,
    pub seed: u64,
    pub ruin_count: u64,
}

/// Per-step drift statistics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DriftStep {
    pub step: usize,
    /// Mean of the weighted log factor minus the compensator increment.
    pub mean_drift: f64,
    pub std_error: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub z_score: Option<f64>,
}

/// Drift estimates for each of the `n` steps.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DriftReport {
    pub paths: u64,
    pub n: usize,
    pub alpha: f64,
    pub seed: u64,
    pub steps: Vec<DriftStep>,
}

enum Sampler<'a> {
    Discrete {
        market: &'a DiscreteMarket,
        cumulative: Vec<f64>,
    },
    Gaussian(&'a GaussianMarket),
}

impl<'a> Sampler<'a> {
    fn new(market: &'a Market) -> Sampler<'a> {
        match market {
            Market::Discrete(m) => {
                let mut cumulative = Vec::with_capacity(m.m());
                let mut acc = 0.0;
                for &p in m.probs() {
                    acc += p;
                    cumulative.push(acc);
                }
                Sampler::Discrete {
                    market: m,
                    cumulative,
                }
            }
            Market::Gaussian(m) => Sampler::Gaussian(m),
        }
    }

    /// Walks one path, reporting `(step, wealth_after, rate_increment)` for
    /// each round. Histories are materialized only for strategies that read
    /// them.
    fn run_path(
        &self,
        strategy: &Strategy,
        n: usize,
        z_0: f64,
        rng: &mut PathRng,
        mut on_step: impl FnMut(usize, f64, f64),
    ) -> Result<()> {
        let track_history = strategy.fraction().is_none();
        let mut z = z_0;
        match self {
            Sampler::Discrete { market, cumulative } => {
                let mut history: Vec<usize> = Vec::new();
                for step in 0..n {
                    let stake = strategy.stake(&History::Indices(&history), z)?;
                    let u = rng.uniform();
                    let idx = cumulative
                        .iter()
                        .position(|&c| u < c)
                        .unwrap_or(market.m() - 1);
                    let factor = 1.0 + stake * market.outcomes()[idx] / z;
                    if !(factor > 0.0) {
                        let mut path = history.clone();
                        path.push(idx);
                        return Err(Error::RuinViolation {
                            step: step + 1,
                            factor,
                            path,
                        });
                    }
                    z *= factor;
                    on_step(step, z, market.weights()[idx] * factor.ln());
                    if track_history {
                        history.push(idx);
                    }
                }
            }
            Sampler::Gaussian(market) => {
                let dims = market.dim();
                let chol = market.density().chol_lower();
                let mut history: Vec<Vec<f64>> = Vec::new();
                for step in 0..n {
                    let stake = strategy.stake(&History::Vectors(&history), z)?;
                    let draw = DVector::from_fn(dims, |_, _| rng.normal());
                    let x: Vec<f64> = (chol * draw).iter().cloned().collect();
                    let factor = 1.0 + stake * market.return_at(&x) / z;
                    if !(factor > 0.0) {
                        return Err(Error::RuinViolation {
                            step: step + 1,
                            factor,
                            path: Vec::new(),
                        });
                    }
                    z *= factor;
                    on_step(step, z, market.weight_at(&x) * factor.ln());
                    if track_history {
                        history.push(x);
                    }
                }
            }
        }
        Ok(())
    }
}

/// Runs `fill` once per path into its `per_path`-wide slot of `values`.
/// Failed paths leave NaN slots; the earliest failure by path index is
/// returned.
fn generate_paths(
    paths: u64,
    per_path: usize,
    seed: u64,
    values: &mut [f64],
    fill: impl Fn(&mut PathRng, &mut [f64]) -> Result<()> + Sync,
) -> Option<Error> {
    debug_assert_eq!(values.len(), paths as usize * per_path);
    let failures = Mutex::new(BTreeMap::<u64, Error>::new());
    values
        .par_chunks_mut(per_path * BLOCK)
        .enumerate()
        .for_each(|(block, out)| {
            for (offset, slot) in out.chunks_mut(per_path).enumerate() {
                let path = (block * BLOCK + offset) as u64;
                let mut rng = PathRng::new(seed, path);
                if let Err(e) = fill(&mut rng, slot) {
                    slot.fill(f64::NAN);
                    failures.lock().expect("lock not poisoned").insert(path, e);
                }
            }
        });
    let map = failures.into_inner().expect("lock not poisoned");
    map.into_values().next()
}

/// Kahan-compensated sum in iteration order.
fn compensated_sum(values: impl Iterator<Item = f64>) -> f64 {
    let mut sum = 0.0;
    let mut carry = 0.0;
    for v in values {
        let y = v - carry;
        let t = sum + y;
        carry = (t - sum) - y;
        sum = t;
    }
    sum
}

/// Mean, standard error, and count over the non-NaN entries, reduced in
/// slice order.
fn mean_and_std_error(values: &[f64]) -> (f64, f64, u64) {
    let kept = values.iter().filter(|v| !v.is_nan()).count() as u64;
    if kept == 0 {
        return (f64::NAN, 0.0, 0);
    }
    let n = kept as f64;
    let mean = compensated_sum(values.iter().copied().filter(|v| !v.is_nan())) / n;
    if kept < 2 {
        return (mean, 0.0, kept);
    }
    let ssd = compensated_sum(
        values
            .iter()
            .copied()
            .filter(|v| !v.is_nan())
            .map(|v| (v - mean) * (v - mean)),
    );
    (mean, (ssd / (n * (n - 1.0))).sqrt(), kept)
}

fn check_run_sizes(n: usize, paths: u64, z_0: f64) -> Result<()> {
    if n == 0 {
        return Err(Error::LengthMismatch {
            field: "n",
            expected: 1,
            got: 0,
        });
    }
    if paths == 0 {
        return Err(Error::LengthMismatch {
            field: "paths",
            expected: 1,
            got: 0,
        });
    }
    if !(z_0 > 0.0) || !z_0.is_finite() {
        return Err(Error::NonFiniteInput { field: "Z_0" });
    }
    Ok(())
}

/// Simulates `paths` wealth paths of `n` rounds and reports the sample mean
/// and standard error of the weighted rate. Ruin aborts the run.
pub fn simulate(
    market: &Market,
    strategy: &Strategy,
    n: usize,
    paths: u64,
    seed: u64,
    z_0: f64,
) -> Result<SimulationReport> {
    simulate_with(
        market,
        strategy,
        n,
        paths,
        seed,
        z_0,
        &SimulationConfig::default(),
    )
}

/// [`simulate`] with an explicit ruin policy.
pub fn simulate_with(
    market: &Market,
    strategy: &Strategy,
    n: usize,
    paths: u64,
    seed: u64,
    z_0: f64,
    config: &SimulationConfig,
) -> Result<SimulationReport> {
    check_run_sizes(n, paths, z_0)?;
    let sampler = Sampler::new(market);
    let mut values = vec![0.0_f64; paths as usize];
    let first_failure = generate_paths(paths, 1, seed, &mut values, |rng, slot| {
        let mut sum = 0.0;
        let mut carry = 0.0;
        sampler.run_path(strategy, n, z_0, rng, |_, _, increment| {
            let y = increment - carry;
            let t = sum + y;
            carry = (t - sum) - y;
            sum = t;
        })?;
        slot[0] = sum;
        Ok(())
    });
    if let Some(err) = first_failure {
        if config.ruin_policy == RuinPolicy::Error || !matches!(err, Error::RuinViolation { .. }) {
            return Err(err);
        }
    }
    let (mean_s_n, std_error, kept) = mean_and_std_error(&values);
    let alpha_times_n = alpha_for(market)?.value * n as f64;
    let z_score = (std_error > 0.0).then(|| (mean_s_n - alpha_times_n) / std_error);
    Ok(SimulationReport {
        paths,
        n,
        mean_s_n,
        std_error,
        alpha_times_n,
        z_score,
        seed,
        ruin_count: paths - kept,
    })
}

/// Estimates the conditional drift of the compensated rate at every step:
/// the per-step mean of the weighted log factor minus the one-round
/// compensator, with standard error and z-score. Runs from unit initial
/// wealth; constant-fraction drifts do not depend on it.
pub fn drift_test(
    market: &Market,
    strategy: &Strategy,
    n: usize,
    paths: u64,
    seed: u64,
) -> Result<DriftReport> {
    check_run_sizes(n, paths, 1.0)?;
    let sampler = Sampler::new(market);
    let alpha = alpha_for(market)?.value;
    let mut values = vec![0.0_f64; paths as usize * n];
    let first_failure = generate_paths(paths, n, seed, &mut values, |rng, slot| {
        sampler.run_path(strategy, n, 1.0, rng, |step, _, increment| {
            slot[step] = increment;
        })
    });
    if let Some(err) = first_failure {
        return Err(err);
    }
    let steps = (0..n)
        .map(|j| {
            let column: Vec<f64> = (0..paths as usize)
                .map(|p| values[p * n + j] - alpha)
                .collect();
            let (mean_drift, std_error, _) = mean_and_std_error(&column);
            DriftStep {
                step: j + 1,
                mean_drift,
                std_error,
                z_score: (std_error > 0.0).then(|| mean_drift / std_error),
            }
        })
        .collect();
    Ok(DriftReport {
        paths,
        n,
        alpha,
        seed,
        steps,
    })
}

/// Upper bound on rows written by [`dump_paths_csv`].
pub const DUMP_ROW_CAP: u64 = 2_000_000;

/// Replays the exact paths a `simulate` run with the same seed draws and
/// streams them as CSV rows `path,step,Z,S`. Row count is guarded by
/// [`DUMP_ROW_CAP`].
pub fn dump_paths_csv<W: Write>(
    market: &Market,
    strategy: &Strategy,
    n: usize,
    paths: u64,
    seed: u64,
    z_0: f64,
    out: &mut W,
) -> Result<()> {
    check_run_sizes(n, paths, z_0)?;
    let rows = paths.saturating_mul(n as u64 + 1);
    if rows > DUMP_ROW_CAP {
        return Err(Error::EnumerationTooLarge {
            required: rows,
            cap: DUMP_ROW_CAP,
        });
    }
    let sampler = Sampler::new(market);
    writeln!(out, "path,step,Z,S")?;
    let mut steps: Vec<(f64, f64)> = Vec::with_capacity(n);
    for path in 0..paths {
        let mut rng = PathRng::new(seed, path);
        steps.clear();
        let mut s = 0.0;
        sampler.run_path(strategy, n, z_0, &mut rng, |_, z, increment| {
            s += increment;
            steps.push((z, s));
        })?;
        writeln!(out, "{path},0,{z_0},0")?;
        for (j, (z, s)) in steps.iter().enumerate() {
            writeln!(out, "{path},{},{z},{s}", j + 1)?;
        }
    }
    Ok(())
}
