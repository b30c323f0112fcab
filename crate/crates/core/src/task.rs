//! Statistical tasks: a finite data domain, a finite output domain ordered by
//! id, and an accepted-solution predicate per data distribution.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::sync::Arc;

use crate::dist::FiniteDistribution;
use crate::error::{Error, Result};

/// Output ids; the tie-breaking order is the numeric order.
pub type Output = u32;

/// The distinguished "no answer" output. Never accepted.
pub const BOTTOM: Output = u32::MAX;

type Accepted = dyn Fn(&FiniteDistribution, Output) -> bool + Send + Sync;

#[derive(Clone)]
pub struct StatisticalTask {
    pub name: String,
    pub data_domain: u32,
    pub output_domain: u32,
    accepted: Arc<Accepted>,
}

impl fmt::Debug for StatisticalTask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("StatisticalTask")
            .field("name", &self.name)
            .field("data_domain", &self.data_domain)
            .field("output_domain", &self.output_domain)
            .finish()
    }
}

impl StatisticalTask {
    pub fn new(
        name: impl Into<String>,
        data_domain: u32,
        output_domain: u32,
        accepted: impl Fn(&FiniteDistribution, Output) -> bool + Send + Sync + 'static,
    ) -> Self {
        Self {
            name: name.into(),
            data_domain,
            output_domain,
            accepted: Arc::new(accepted),
        }
    }

    /// Task whose accepted set is listed per distribution (by fingerprint).
    /// Unlisted distributions accept nothing.
    pub fn with_accepted_sets(
        name: impl Into<String>,
        data_domain: u32,
        output_domain: u32,
        sets: HashMap<u64, BTreeSet<Output>>,
    ) -> Self {
        Self::new(name, data_domain, output_domain, move |d, y| {
            sets.get(&d.fingerprint()).is_some_and(|s| s.contains(&y))
        })
    }

    pub fn is_correct(&self, dist: &FiniteDistribution, y: Output) -> bool {
        y != BOTTOM && y < self.output_domain && (self.accepted)(dist, y)
    }
}

/// Membership of `y` in the accepted set of `dist`.
pub fn is_correct(task: &StatisticalTask, dist: &FiniteDistribution, y: Output) -> bool {
    task.is_correct(dist, y)
}

// ---------------------------------------------------------------------------
// Task zoo
// ---------------------------------------------------------------------------

/// Bias estimation for `coins` independent coins. A data point is a `coins`-bit
/// vector (bit `j` = outcome of coin `j`). Outputs index the product grid
/// `{0, step, 2·step, …, 1}^coins` in mixed radix, coin 0 least significant.
/// An estimate is accepted when every coordinate is within `tolerance`.
pub fn coin_bias(coins: u32, step: f64, tolerance: f64) -> Result<StatisticalTask> {
    if !(step > 0.0 && step <= 1.0) {
        return Err(Error::param("step", format!("{step} not in (0,1]")));
    }
    if coins == 0 || coins > 8 {
        return Err(Error::param("coins", format!("{coins} not in 1..=8")));
    }
    let levels = (1.0 / step).round() as u32 + 1;
    let outputs = levels
        .checked_pow(coins)
        .ok_or_else(|| Error::param("coins", "grid too large"))?;
    Ok(StatisticalTask::new(
        format!("coin-bias-{coins}"),
        1 << coins,
        outputs,
        move |d, y| {
            let mut rest = y;
            (0..coins).all(|j| {
                let level = rest % levels;
                rest /= levels;
                let p: f64 = d.iter().filter(|(x, _)| (x >> j) & 1 == 1).map(|(_, p)| p).sum();
                (level as f64 * step - p).abs() <= tolerance + 1e-12
            })
        },
    ))
}

/// Grid value of a single-coin estimate output.
pub fn coin_estimate(step: f64, y: Output) -> f64 {
    y as f64 * step
}

/// Sign of `p − 1/2` for a coin: output 0 means "−", output 1 means "+".
/// At `p = 1/2` both are accepted.
pub fn sign_task() -> StatisticalTask {
    StatisticalTask::new("sign", 2, 2, |d, y| {
        let p = d.prob(1);
        match y {
            0 => p <= 0.5,
            1 => p >= 0.5,
            _ => false,
        }
    })
}

/// Task over `outputs` labels where every label except those in `rejected`
/// is accepted, for every distribution.
pub fn oracle_task(outputs: u32, rejected: BTreeSet<Output>) -> StatisticalTask {
    StatisticalTask::new("oracle", 0, outputs, move |_, y| !rejected.contains(&y))
}

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TaskParameters {
    pub confidence: f64,
    pub replicability: f64,
    pub stability: f64,
    pub accuracy: f64,
    pub epsilon: f64,
    pub delta: f64,
    pub users: u32,
}

impl TaskParameters {
    pub fn validate(&self) -> Result<()> {
        let unit = [
            ("confidence", self.confidence),
            ("replicability", self.replicability),
            ("stability", self.stability),
            ("accuracy", self.accuracy),
            ("delta", self.delta),
        ];
        for (name, v) in unit {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::param(name, format!("{v} not in (0,1)")));
            }
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::param("epsilon", format!("{} not positive", self.epsilon)));
        }
        if self.users == 0 {
            return Err(Error::param("users", "must be at least 1"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn coin(p: f64) -> FiniteDistribution {
        FiniteDistribution::from_probs(&[1.0 - p, p]).unwrap()
    }

    #[test]
    fn coin_bias_tolerance() {
        let task = coin_bias(1, 0.05, 0.1).unwrap();
        assert_eq!(task.output_domain, 21);
        assert!(task.is_correct(&coin(0.5), 11)); // 0.55
        assert!(!task.is_correct(&coin(0.5), 15)); // 0.75
        assert!(!task.is_correct(&coin(0.5), BOTTOM));
    }

    #[test]
    fn two_coin_grid() {
        let task = coin_bias(2, 0.5, 0.25).unwrap();
        assert_eq!(task.output_domain, 9);
        // coin0 p=1 (bit 0 always set), coin1 p=0 -> point 0b01
        let d = FiniteDistribution::point(1);
        assert!(task.is_correct(&d, 2)); // levels (2, 0) -> (1.0, 0.0)
        assert!(!task.is_correct(&d, 2 + 3 * 2));
    }

    #[test]
    fn sign() {
        let task = sign_task();
        assert!(task.is_correct(&coin(0.7), 1));
        assert!(!task.is_correct(&coin(0.7), 0));
        assert!(task.is_correct(&coin(0.5), 0) && task.is_correct(&coin(0.5), 1));
    }

    #[test]
    fn parameters_validate() {
        let mut p = TaskParameters {
            confidence: 0.05,
            replicability: 0.1,
            stability: 0.25,
            accuracy: 0.1,
            epsilon: 1.0,
            delta: 0.05,
            users: 3,
        };
        assert!(p.validate().is_ok());
        p.users = 0;
        assert!(p.validate().is_err());
        p.users = 1;
        p.epsilon = 0.0;
        assert!(p.validate().is_err());
    }
}
