//! Natural-log probability arithmetic.

use std::fmt;
use std::ops::{Add, AddAssign, Sub};

use serde::{Deserialize, Serialize};

/// A natural-log probability or unnormalized log score.
///
/// Never NaN; negative infinity is the legal "impossible" sentinel.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LogProb(f64);

impl LogProb {
    /// log 1, the score of the empty event.
    pub const ZERO: LogProb = LogProb(0.0);
    /// log 0, the impossible event.
    pub const IMPOSSIBLE: LogProb = LogProb(f64::NEG_INFINITY);

    pub fn new(value: f64) -> Self {
        assert!(!value.is_nan(), "LogProb must not be NaN");
        LogProb(value)
    }

    pub fn value(self) -> f64 {
        self.0
    }

    pub fn exp(self) -> f64 {
        self.0.exp()
    }

    pub fn is_impossible(self) -> bool {
        self.0 == f64::NEG_INFINITY
    }

    pub fn total_cmp(&self, other: &LogProb) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }

    /// `weight * self`, with a zero weight always yielding log 1 so that
    /// disabled fusion terms cannot poison a score with `0 * -inf`.
    pub fn scaled(self, weight: f64) -> LogProb {
        if weight == 0.0 {
            LogProb::ZERO
        } else {
            LogProb::new(weight * self.0)
        }
    }
}

impl Add for LogProb {
    type Output = LogProb;
    fn add(self, rhs: LogProb) -> LogProb {
        LogProb::new(self.0 + rhs.0)
    }
}

impl AddAssign for LogProb {
    fn add_assign(&mut self, rhs: LogProb) {
        *self = *self + rhs;
    }
}

impl Sub for LogProb {
    type Output = LogProb;
    fn sub(self, rhs: LogProb) -> LogProb {
        LogProb::new(self.0 - rhs.0)
    }
}

impl fmt::Display for LogProb {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// log Σ exp(v_i) with max-subtraction for underflow safety.
///
/// Panics on an empty list (contract violation).
pub fn log_sum_exp(values: &[LogProb]) -> LogProb {
    assert!(!values.is_empty(), "log_sum_exp of empty list");
    let max = values.iter().fold(f64::NEG_INFINITY, |acc, v| acc.max(v.0));
    if max.is_infinite() {
        return LogProb(max);
    }
    let sum: f64 = values.iter().map(|v| (v.0 - max).exp()).sum();
    LogProb::new(max + sum.ln())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn probabilities_summing_to_one() {
        let half = LogProb::new(0.5f64.ln());
        let r = log_sum_exp(&[half, half]);
        assert!(r.value().abs() < 1e-15, "got {}", r);
    }

    #[test]
    fn singleton_is_identity() {
        for &x in &[-3.25, 0.0, 17.5, -1e9] {
            assert_eq!(log_sum_exp(&[LogProb::new(x)]).value(), x);
        }
    }

    #[test]
    fn deep_underflow_is_stable() {
        // Exact value: -1000 + ln 2; naive exp() of the inputs underflows to 0.
        let v = LogProb::new(-1000.0);
        let r = log_sum_exp(&[v, v]);
        let expected = -1000.0 + std::f64::consts::LN_2;
        assert!((r.value() - expected).abs() < 1e-12, "got {}", r);
        assert!(r.value().is_finite());
    }

    #[test]
    fn permutation_invariant_and_absorbing_impossible() {
        let xs = [LogProb::new(-1.5), LogProb::new(-0.25), LogProb::new(-7.0)];
        let forward = log_sum_exp(&xs);
        let reversed: Vec<LogProb> = xs.iter().rev().copied().collect();
        assert!((forward.value() - log_sum_exp(&reversed).value()).abs() < 1e-12);

        let mut with_imp = xs.to_vec();
        with_imp.push(LogProb::IMPOSSIBLE);
        assert_eq!(forward.value(), log_sum_exp(&with_imp).value());
    }

    #[test]
    fn all_impossible_stays_impossible() {
        let r = log_sum_exp(&[LogProb::IMPOSSIBLE, LogProb::IMPOSSIBLE]);
        assert!(r.is_impossible());
    }

    #[test]
    #[should_panic(expected = "empty list")]
    fn empty_list_is_a_contract_violation() {
        log_sum_exp(&[]);
    }

    #[test]
    #[should_panic(expected = "NaN")]
    fn nan_is_rejected() {
        LogProb::new(f64::NAN);
    }

    #[test]
    fn zero_weight_voids_impossible_term() {
        assert_eq!(LogProb::IMPOSSIBLE.scaled(0.0).value(), 0.0);
        assert_eq!(LogProb::new(-2.0).scaled(0.5).value(), -1.0);
    }
}
