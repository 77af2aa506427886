//! Previsible betting strategies.
//!
//! A strategy maps the history of outcomes observed so far and the current
//! wealth to a non-negative stake for the next round. Previsibility is
//! structural: the rule is only ever handed outcomes with index strictly
//! below the round being staked.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::conditions::martingale_feasibility;
use crate::error::{Error, Result};
use crate::market::DiscreteMarket;

/// Outcome history handed to a stake rule. Finite markets record outcome
/// indices; Gaussian markets record the raw outcome vectors.
#[derive(Debug, Clone, Copy)]
pub enum History<'a> {
    Indices(&'a [usize]),
    Vectors(&'a [Vec<f64>]),
}

impl History<'_> {
    pub fn len(&self) -> usize {
        match self {
            History::Indices(h) => h.len(),
            History::Vectors(h) => h.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Custom rule type: `(history, wealth) -> stake`.
pub type StakeRule = Arc<dyn Fn(&History<'_>, f64) -> f64 + Send + Sync>;

#[derive(Clone)]
enum Rule {
    ConstantFraction { fraction: f64 },
    Table { fractions: Vec<f64>, arity: usize },
    Custom(StakeRule),
}

/// A previsible stake rule with a non-negative stake everywhere.
#[derive(Clone)]
pub struct Strategy {
    rule: Rule,
}

impl fmt::Debug for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.rule {
            Rule::ConstantFraction { fraction } => f
                .debug_struct("Strategy")
                .field("kind", &"constant_fraction")
                .field("fraction", fraction)
                .finish(),
            Rule::Table { fractions, arity } => f
                .debug_struct("Strategy")
                .field("kind", &"table")
                .field("entries", &fractions.len())
                .field("arity", arity)
                .finish(),
            Rule::Custom(_) => f
                .debug_struct("Strategy")
                .field("kind", &"custom")
                .finish(),
        }
    }
}

/// Strategy staking the fixed fraction `d` of current wealth every round.
pub fn constant_fraction(d: f64) -> Result<Strategy> {
    if !(0.0..=1.0).contains(&d) || !d.is_finite() {
        return Err(Error::DOutOfRange { value: d });
    }
    Ok(Strategy {
        rule: Rule::ConstantFraction { fraction: d },
    })
}

/// The strategy that makes the compensated growth process a martingale:
/// the constant fraction found by the feasibility test. Errors when no such
/// fraction exists.
pub fn optimal_strategy(market: &DiscreteMarket) -> Result<Strategy> {
    let feasibility = martingale_feasibility(market)?;
    match feasibility.d {
        Some(d) if feasibility.feasible => constant_fraction(d),
        _ => Err(Error::NoMartingaleStrategy {
            max_spread: feasibility.max_spread,
        }),
    }
}

/// Wealth factor and deposit flags for one staking decision.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StakeCheck {
    pub stake: f64,
    /// The stake exceeds current wealth. Allowed for supermartingale runs,
    /// flagged because the martingale characterization requires
    /// `stake <= wealth`.
    pub exceeds_wealth: bool,
    /// Worst-outcome wealth factor `1 + stake * min_return / wealth` is not
    /// strictly positive, so the stake cannot guarantee the deposit. Only
    /// present when the market's worst return is supplied.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub deposit_flag: Option<bool>,
}

impl Strategy {
    /// Builds a custom previsible rule. The rule must be pure: identical
    /// histories must give identical stakes.
    pub fn custom(rule: StakeRule) -> Strategy {
        Strategy {
            rule: Rule::Custom(rule),
        }
    }

    /// Builds a lookup strategy over history prefixes of a finite market
    /// with `arity` outcomes. `fractions` are wealth fractions in level
    /// order: entry 0 is the empty history, entries `1..=arity` the length-1
    /// histories, and so on.
    pub fn table(fractions: Vec<f64>, arity: usize) -> Result<Strategy> {
        if arity < 2 {
            return Err(Error::InvalidM { m: arity });
        }
        for &f in &fractions {
            if f < 0.0 || !f.is_finite() {
                return Err(Error::NegativeStake { stake: f });
            }
        }
        Ok(Strategy {
            rule: Rule::Table { fractions, arity },
        })
    }

    pub fn kind(&self) -> &'static str {
        match &self.rule {
            Rule::ConstantFraction { .. } => "constant_fraction",
            Rule::Table { .. } => "table",
            Rule::Custom(_) => "custom",
        }
    }

    /// The constant fraction, when this is a constant-fraction strategy.
    pub fn fraction(&self) -> Option<f64> {
        match &self.rule {
            Rule::ConstantFraction { fraction } => Some(*fraction),
            _ => None,
        }
    }

    /// Stake for the next round given the observed history and current
    /// wealth. Always non-negative; custom rules returning a negative or
    /// non-finite stake are an error.
    pub fn stake(&self, history: &History<'_>, wealth: f64) -> Result<f64> {
        match &self.rule {
            Rule::ConstantFraction { fraction } => Ok(fraction * wealth),
            Rule::Table { fractions, arity } => {
                let indices = match history {
                    History::Indices(h) => *h,
                    History::Vectors(_) => {
                        return Err(Error::UnsupportedHistory {
                            detail: "table strategies index finite outcome histories only",
                        })
                    }
                };
                let mut index = 0usize;
                // level-order position: nodes of shallower levels first,
                // then the base-`arity` rank of the prefix within its level
                let mut level_base = 0usize;
                let mut level_size = 1usize;
                for &digit in indices {
                    if digit >= *arity {
                        return Err(Error::OutcomeIndexOutOfRange {
                            index: digit,
                            m: *arity,
                        });
                    }
                    level_base += level_size;
                    level_size *= arity;
                    index = index * arity + digit;
                }
                let position = level_base + index;
                let fraction = fractions.get(position).copied().ok_or(Error::TableIncomplete {
                    index: position,
                    len: fractions.len(),
                })?;
                Ok(fraction * wealth)
            }
            Rule::Custom(rule) => {
                let stake = rule(history, wealth);
                if stake.is_nan() {
                    return Err(Error::NonFiniteInput { field: "stake" });
                }
                if stake < 0.0 {
                    return Err(Error::NegativeStake { stake });
                }
                Ok(stake)
            }
        }
    }

    /// Stake plus flags. Violations are flagged, never silently clamped:
    /// `exceeds_wealth` when the stake is larger than wealth, and
    /// `deposit_flag` when the worst outcome would wipe out (or overdraw)
    /// the wealth, i.e. `1 + stake * min_return / wealth <= 0`.
    pub fn stake_checked(
        &self,
        history: &History<'_>,
        wealth: f64,
        min_return: Option<f64>,
    ) -> Result<StakeCheck> {
        let stake = self.stake(history, wealth)?;
        Ok(StakeCheck {
            stake,
            exceeds_wealth: stake > wealth,
            deposit_flag: min_return.map(|g| 1.0 + stake * g / wealth <= 0.0),
        })
    }
}

/// Serialized form of a loadable strategy. Custom rules are code-only and
/// have no serialized form.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StrategySpec {
    ConstantFraction {
        #[serde(rename = "D")]
        d: f64,
    },
    Table {
        /// Wealth fractions in level order over history prefixes.
        stakes: Vec<f64>,
        #[serde(default = "default_arity")]
        arity: usize,
    },
}

fn default_arity() -> usize {
    2
}

impl StrategySpec {
    pub fn build(self) -> Result<Strategy> {
        match self {
            StrategySpec::ConstantFraction { d } => constant_fraction(d),
            StrategySpec::Table { stakes, arity } => Strategy::table(stakes, arity),
        }
    }
}
